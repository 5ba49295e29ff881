use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `value <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf { value: f64 },
}

/// A regression tree stored as a node arena with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
    /// The single group this tree may split on (gam ensembles only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_tag: Option<usize>,
}

impl RegressionTree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![TreeNode::Leaf { value }],
            group_tag: None,
        }
    }

    #[inline]
    pub fn predict_row(&self, columns: &[Vec<f64>], row: usize) -> f64 {
        let mut idx = 0usize;
        loop {
            match self.nodes[idx] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if columns[feature][row] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    /// Features referenced by any split, sorted.
    pub fn split_features(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Split { feature, .. } => Some(*feature),
                TreeNode::Leaf { .. } => None,
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn leaf_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Leaf { value } => Some(*value),
            TreeNode::Split { .. } => None,
        })
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + go(nodes, left as usize).max(go(nodes, right as usize))
                }
            }
        }
        go(&self.nodes, 0)
    }
}

/// One feature's training rows in ascending (value, row) order.
pub(crate) struct SortedFeature {
    pub feature: usize,
    rows: Vec<u32>,
    values: Vec<f64>,
}

impl SortedFeature {
    pub fn new(feature: usize, column: &[f64]) -> Self {
        let mut rows: Vec<u32> = (0..column.len() as u32).collect();
        rows.sort_by(|&a, &b| column[a as usize].total_cmp(&column[b as usize]).then(a.cmp(&b)));
        let values = rows.iter().map(|&r| column[r as usize]).collect();
        Self { feature, rows, values }
    }
}

#[derive(Debug, Clone, Copy)]
struct NodeStats {
    sum: f64,
    sum_sq: f64,
    count: usize,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    left_sum: f64,
    left_sum_sq: f64,
    left_count: usize,
}

#[derive(Clone, Copy, Default)]
struct Scan {
    sum: f64,
    sum_sq: f64,
    count: usize,
    last: f64,
}

/// A grown tree plus its output on every training row.
pub(crate) struct GrownTree {
    pub tree: RegressionTree,
    pub outputs: Vec<f64>,
    /// Σ over leaves of sum²/count: the squared-error reduction of the
    /// unshrunk tree up to a term shared by all trees fit to the same residual.
    pub score: f64,
}

/// Exact greedy, level-wise growth on presorted features. Splits maximise the
/// sum-of-squares reduction; ties keep the lower feature index, then the lower threshold.
pub(crate) fn grow_tree(
    columns: &[Vec<f64>],
    sorted: &[&SortedFeature],
    residual: &[f64],
    max_depth: usize,
    min_samples_leaf: usize,
) -> GrownTree {
    let n = residual.len();
    let min_leaf = min_samples_leaf.max(1);
    let mut nodes = vec![TreeNode::Leaf { value: 0.0 }];
    let mut stats = vec![NodeStats {
        sum: residual.iter().sum(),
        sum_sq: residual.iter().map(|r| r * r).sum(),
        count: n,
    }];
    let mut node_of_row = vec![0u32; n];
    let mut active: Vec<u32> = vec![0];

    for _depth in 0..max_depth {
        let splittable: Vec<u32> = active
            .iter()
            .copied()
            .filter(|&id| stats[id as usize].count >= 2 * min_leaf)
            .collect();
        if splittable.is_empty() {
            break;
        }
        let mut slot_of = vec![u32::MAX; nodes.len()];
        for (slot, &id) in splittable.iter().enumerate() {
            slot_of[id as usize] = slot as u32;
        }
        let slot_stats: Vec<NodeStats> = splittable.iter().map(|&id| stats[id as usize]).collect();

        let per_feature: Vec<Vec<Option<Candidate>>> = sorted
            .par_iter()
            .map(|sf| scan_feature(sf, residual, &node_of_row, &slot_of, &slot_stats, min_leaf))
            .collect();

        let mut best: Vec<Option<Candidate>> = vec![None; splittable.len()];
        for feature_best in &per_feature {
            for (slot, cand) in feature_best.iter().enumerate() {
                if let Some(c) = cand {
                    // Features arrive in ascending index order, so strict `>` keeps the lower index on ties.
                    if best[slot].is_none_or(|b| c.gain > b.gain) {
                        best[slot] = Some(*c);
                    }
                }
            }
        }

        let mut route: Vec<Option<(usize, f64, u32, u32)>> = vec![None; nodes.len()];
        let mut next_active = Vec::new();
        for (slot, &id) in splittable.iter().enumerate() {
            let Some(c) = best[slot] else { continue };
            let parent = stats[id as usize];
            let left = nodes.len() as u32;
            let right = left + 1;
            nodes.push(TreeNode::Leaf { value: 0.0 });
            nodes.push(TreeNode::Leaf { value: 0.0 });
            stats.push(NodeStats {
                sum: c.left_sum,
                sum_sq: c.left_sum_sq,
                count: c.left_count,
            });
            stats.push(NodeStats {
                sum: parent.sum - c.left_sum,
                sum_sq: parent.sum_sq - c.left_sum_sq,
                count: parent.count - c.left_count,
            });
            nodes[id as usize] = TreeNode::Split {
                feature: c.feature,
                threshold: c.threshold,
                left,
                right,
            };
            route[id as usize] = Some((c.feature, c.threshold, left, right));
            next_active.push(left);
            next_active.push(right);
        }
        if next_active.is_empty() {
            break;
        }
        for (row, node) in node_of_row.iter_mut().enumerate() {
            if let Some((feature, threshold, left, right)) = route[*node as usize] {
                *node = if columns[feature][row] <= threshold { left } else { right };
            }
        }
        // Exact per-leaf sums from the rows themselves, so leaf values do not
        // inherit the running-sum subtraction error.
        let first_child = route.len();
        for &id in &next_active {
            stats[id as usize] = NodeStats {
                sum: 0.0,
                sum_sq: 0.0,
                count: 0,
            };
        }
        for (row, &node) in node_of_row.iter().enumerate() {
            if node as usize >= first_child {
                let s = &mut stats[node as usize];
                s.sum += residual[row];
                s.sum_sq += residual[row] * residual[row];
                s.count += 1;
            }
        }
        active = next_active;
    }

    let mut score = 0.0;
    for (id, node) in nodes.iter_mut().enumerate() {
        if let TreeNode::Leaf { value } = node {
            let s = stats[id];
            if s.count > 0 {
                *value = s.sum / s.count as f64;
                score += s.sum * s.sum / s.count as f64;
            }
        }
    }
    let outputs = node_of_row
        .iter()
        .map(|&id| match nodes[id as usize] {
            TreeNode::Leaf { value } => value,
            TreeNode::Split { .. } => unreachable!("rows always end in leaves"),
        })
        .collect();
    GrownTree {
        tree: RegressionTree {
            nodes,
            group_tag: None,
        },
        outputs,
        score,
    }
}

fn scan_feature(
    sf: &SortedFeature,
    residual: &[f64],
    node_of_row: &[u32],
    slot_of: &[u32],
    slot_stats: &[NodeStats],
    min_leaf: usize,
) -> Vec<Option<Candidate>> {
    let mut scans = vec![
        Scan {
            last: f64::NEG_INFINITY,
            ..Scan::default()
        };
        slot_stats.len()
    ];
    let mut best: Vec<Option<Candidate>> = vec![None; slot_stats.len()];
    for (&row, &value) in sf.rows.iter().zip(&sf.values) {
        let slot = slot_of[node_of_row[row as usize] as usize];
        if slot == u32::MAX {
            continue;
        }
        let slot = slot as usize;
        let scan = &mut scans[slot];
        let total = slot_stats[slot];
        if value > scan.last && scan.count >= min_leaf && total.count - scan.count >= min_leaf {
            let right_sum = total.sum - scan.sum;
            let right_count = (total.count - scan.count) as f64;
            let gain = scan.sum * scan.sum / scan.count as f64 + right_sum * right_sum / right_count
                - total.sum * total.sum / total.count as f64;
            // Splits below float resolution of the node's sum of squares are noise.
            let floor = 1e-12 * total.sum_sq.max(f64::MIN_POSITIVE);
            if gain > floor && best[slot].is_none_or(|b| gain > b.gain) {
                best[slot] = Some(Candidate {
                    gain,
                    feature: sf.feature,
                    threshold: scan.last,
                    left_sum: scan.sum,
                    left_sum_sq: scan.sum_sq,
                    left_count: scan.count,
                });
            }
        }
        let r = residual[row as usize];
        scan.sum += r;
        scan.sum_sq += r * r;
        scan.count += 1;
        scan.last = value;
    }
    best
}
