//! Causal DAGs over feature groups and their topological orderings.
//!
//! Distal weighting admits exactly the linear extensions of the DAG, each with
//! equal weight. Exhaustive enumeration is used whenever the extension count
//! fits under the caller's cap; beyond it orderings are drawn by randomized
//! Kahn steps and reweighted by the inverse draw probability.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::seeded_rng;
use crate::error::{Error, Result};

pub const DEFAULT_COUNT_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagSpec {
    pub nodes: Vec<String>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalDag {
    names: Vec<String>,
    edges: Vec<(usize, usize)>,
    parents: Vec<Vec<usize>>,
}

impl CausalDag {
    pub fn new(names: Vec<String>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let n = names.len();
        let mut unique = HashSet::new();
        for name in &names {
            if !unique.insert(name.as_str()) {
                return Err(Error::InvalidDag(format!("duplicate node `{name}`")));
            }
        }
        let mut seen = HashSet::new();
        let mut parents = vec![Vec::new(); n];
        for &(a, b) in &edges {
            if a >= n || b >= n {
                return Err(Error::UnknownNode(format!("#{}", a.max(b))));
            }
            if a == b {
                return Err(Error::InvalidDag(format!("self-loop on `{}`", names[a])));
            }
            if !seen.insert((a, b)) {
                return Err(Error::InvalidDag(format!(
                    "duplicate edge {} -> {}",
                    names[a], names[b]
                )));
            }
            parents[b].push(a);
        }
        let dag = Self {
            names,
            edges,
            parents,
        };
        if let Some(cycle) = dag.find_cycle() {
            return Err(Error::Cycle(cycle.into_iter().map(|i| dag.names[i].clone()).collect()));
        }
        Ok(dag)
    }

    /// Nodes without edges.
    pub fn unordered(names: Vec<String>) -> Self {
        Self::new(names, Vec::new()).expect("edgeless graphs are acyclic")
    }

    pub fn chain(names: Vec<String>) -> Self {
        let edges = (1..names.len()).map(|i| (i - 1, i)).collect();
        Self::new(names, edges).expect("chains are acyclic")
    }

    pub fn from_spec(spec: &DagSpec) -> Result<Self> {
        let index: HashMap<&str, usize> =
            spec.nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let lookup = |n: &String| {
            index
                .get(n.as_str())
                .copied()
                .ok_or_else(|| Error::UnknownNode(n.clone()))
        };
        let edges = spec
            .edges
            .iter()
            .map(|(a, b)| Ok((lookup(a)?, lookup(b)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(spec.nodes.clone(), edges)
    }

    pub fn to_spec(&self) -> DagSpec {
        DagSpec {
            nodes: self.names.clone(),
            edges: self
                .edges
                .iter()
                .map(|&(a, b)| (self.names[a].clone(), self.names[b].clone()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Every edge's ancestor precedes its descendant.
    pub fn admits(&self, ordering: &[usize]) -> bool {
        if ordering.len() != self.len() {
            return false;
        }
        let mut pos = vec![usize::MAX; self.len()];
        for (i, &node) in ordering.iter().enumerate() {
            if node >= self.len() || pos[node] != usize::MAX {
                return false;
            }
            pos[node] = i;
        }
        self.edges.iter().all(|&(a, b)| pos[a] < pos[b])
    }

    fn find_cycle(&self) -> Option<Vec<usize>> {
        // Kahn's algorithm; whatever remains contains a cycle.
        let n = self.len();
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut children = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            children[a].push(b);
        }
        let mut queue: Vec<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut removed = vec![false; n];
        while let Some(v) = queue.pop() {
            removed[v] = true;
            for &c in &children[v] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push(c);
                }
            }
        }
        let start = (0..n).find(|&v| !removed[v])?;
        // Walk parents inside the remaining subgraph until a node repeats.
        let mut path = vec![start];
        let mut on_path = HashMap::from([(start, 0usize)]);
        let mut v = start;
        loop {
            let p = *self.parents[v]
                .iter()
                .find(|&&p| !removed[p])
                .expect("every remaining node has a remaining parent");
            if let Some(&i) = on_path.get(&p) {
                let mut cycle: Vec<usize> = path[i..].to_vec();
                cycle.reverse();
                cycle.push(cycle[0]);
                return Some(cycle);
            }
            on_path.insert(p, path.len());
            path.push(p);
            v = p;
        }
    }

    fn parent_masks(&self) -> Vec<u64> {
        self.parents
            .iter()
            .map(|ps| ps.iter().fold(0u64, |m, &p| m | (1 << p)))
            .collect()
    }
}

pub fn parse_dag(text: &str) -> Result<CausalDag> {
    let spec: DagSpec = serde_json::from_str(text)?;
    CausalDag::from_spec(&spec)
}

pub fn load_dag(path: &Path) -> Result<CausalDag> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dag(&text)
}

/// Linear-extension count and the number of nonempty downsets (the distinct
/// prefix sets, i.e. coalitions to train).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingCounts {
    pub orderings: u128,
    pub prefixes: usize,
}

pub fn count_orderings(dag: &CausalDag) -> Result<u128> {
    count_with_limit(dag, DEFAULT_COUNT_LIMIT).map(|c| c.orderings)
}

/// Dynamic program over downward-closed node sets.
pub fn count_with_limit(dag: &CausalDag, limit: usize) -> Result<OrderingCounts> {
    let n = dag.len();
    if n > limit || n > 30 {
        return Err(Error::NodeLimit { nodes: n, limit });
    }
    let parents = dag.parent_masks();
    let full = (1usize << n) - 1;
    let mut ways = vec![0u128; full + 1];
    ways[0] = 1;
    let mut prefixes = 0;
    // Masks only grow, so ascending numeric order visits every subset after its predecessors.
    for mask in 0..=full {
        let w = ways[mask];
        if w == 0 {
            continue;
        }
        if mask != 0 {
            prefixes += 1;
        }
        for v in 0..n {
            if mask & (1 << v) == 0 && parents[v] & !(mask as u64) == 0 {
                ways[mask | (1 << v)] += w;
            }
        }
    }
    Ok(OrderingCounts {
        orderings: ways[full],
        prefixes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingSet {
    pub orderings: Vec<Vec<usize>>,
    /// True when `orderings` is every linear extension.
    pub exact: bool,
    pub weights: Vec<f64>,
}

impl OrderingSet {
    pub fn len(&self) -> usize {
        self.orderings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orderings.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> {
        self.orderings.iter().map(Vec::as_slice).zip(self.weights.iter().copied())
    }
}

/// All linear extensions when there are at most `cap` of them, else `cap`
/// importance-weighted random topological draws.
pub fn enumerate_orderings(dag: &CausalDag, cap: usize, seed: u64) -> OrderingSet {
    let cap = cap.max(1);
    let parents = dag.parent_masks();
    let mut found = Vec::new();
    let mut current = Vec::with_capacity(dag.len());
    extend(&parents, 0, &mut current, &mut found, cap + 1);
    if found.len() <= cap {
        let w = 1.0 / found.len() as f64;
        let weights = vec![w; found.len()];
        return OrderingSet {
            orderings: found,
            exact: true,
            weights,
        };
    }
    let mut rng = seeded_rng(seed);
    let n = dag.len();
    let mut orderings = Vec::with_capacity(cap);
    let mut log_weights = Vec::with_capacity(cap);
    for _ in 0..cap {
        let mut mask = 0u64;
        let mut ordering = Vec::with_capacity(n);
        let mut log_w = 0.0;
        for _ in 0..n {
            let available: Vec<usize> = (0..n)
                .filter(|&v| mask & (1 << v) == 0 && parents[v] & !mask == 0)
                .collect();
            log_w += (available.len() as f64).ln();
            let v = available[rng.random_range(0..available.len())];
            mask |= 1 << v;
            ordering.push(v);
        }
        orderings.push(ordering);
        log_weights.push(log_w);
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    OrderingSet {
        orderings,
        exact: false,
        weights: raw.iter().map(|w| w / total).collect(),
    }
}

fn extend(parents: &[u64], mask: u64, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>, stop_at: usize) {
    if out.len() >= stop_at {
        return;
    }
    if current.len() == parents.len() {
        out.push(current.clone());
        return;
    }
    for v in 0..parents.len() {
        if mask & (1 << v) == 0 && parents[v] & !mask == 0 {
            current.push(v);
            extend(parents, mask | (1 << v), current, out, stop_at);
            current.pop();
        }
    }
}

/// The nodes strictly before `position`, sorted.
pub fn predecessors_in(ordering: &[usize], position: usize) -> Result<Vec<usize>> {
    if position >= ordering.len() {
        return Err(Error::OutOfRange {
            position,
            len: ordering.len(),
        });
    }
    let mut out = ordering[..position].to_vec();
    out.sort_unstable();
    Ok(out)
}

/// Distinct nonempty prefixes (as sets) across `orderings`.
pub fn distinct_prefixes(orderings: &[Vec<usize>]) -> BTreeSet<Vec<usize>> {
    let mut out = BTreeSet::new();
    for ordering in orderings {
        let mut prefix = Vec::with_capacity(ordering.len());
        for &node in ordering {
            prefix.push(node);
            let mut set = prefix.clone();
            set.sort_unstable();
            out.insert(set);
        }
    }
    out
}

/// A ten-group graph over radio-network feature groups with 1134 linear
/// extensions and 62 nonempty downsets.
pub fn telco_shaped_dag() -> CausalDag {
    let names = [
        "spectrum",
        "antennas",
        "dimensioning",
        "cell_load",
        "neighbor_load",
        "ue_capability",
        "ta_distribution",
        "interference",
        "path_loss",
        "channel_quality",
    ];
    let edges = vec![
        (0, 4),
        (1, 5),
        (2, 6),
        (2, 9),
        (3, 9),
        (4, 7),
        (5, 8),
        (6, 7),
        (6, 8),
        (7, 8),
        (8, 9),
    ];
    CausalDag::new(names.iter().map(|s| s.to_string()).collect(), edges).expect("acyclic")
}
