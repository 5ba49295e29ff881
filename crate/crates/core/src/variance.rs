//! Conditional variances and the quantities built from them: `L`, `W`, their
//! restricted versions, component covariance and `φ_I`.
//!
//! Population convention (divide by n) throughout. Every statistic is taken
//! on the test split.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::{ModelMode, TreeEnsemble};
use crate::coalition::{CoalitionKey, Estimator, Workbench};
use crate::data::{Dataset, FeatureGrouping};
use crate::error::{Error, Result};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn population_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
}

pub fn population_covariance(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / x.len() as f64
}

pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    population_covariance(x, y) / (population_variance(x) * population_variance(y)).sqrt()
}

/// Mean of `(t − prediction)²`: the test average of `w`.
pub fn mean_squared_error(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    if predictions.len() != targets.len() {
        return Err(Error::InvalidDataset(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (t - p).powi(2))
        .sum::<f64>()
        / targets.len() as f64)
}

pub fn conditional_variance(estimator: &Estimator, rows: &Dataset) -> Result<f64> {
    if rows.row_count() == 0 {
        return Err(Error::EmptyTestSet);
    }
    mean_squared_error(&estimator.evaluate(rows)?, rows.target())
}

/// Exact empirical `E[T | cell]` for a discrete conditioning variable.
pub fn cell_means<K: Ord + Clone>(cells: &[K], targets: &[f64]) -> Vec<f64> {
    let mut sums: BTreeMap<K, (f64, usize)> = BTreeMap::new();
    for (c, t) in cells.iter().zip(targets) {
        let e = sums.entry(c.clone()).or_insert((0.0, 0));
        e.0 += t;
        e.1 += 1;
    }
    cells
        .iter()
        .map(|c| {
            let (s, n) = sums[c];
            s / n as f64
        })
        .collect()
}

/// `|[σ²(T) − mse(g)] − σ²(g)|`, zero when `g` is the conditional expectation.
pub fn lemma1_gap(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    let l = population_variance(targets) - mean_squared_error(predictions, targets)?;
    Ok((l - population_variance(predictions)).abs())
}

/// Conditional variances of one run, keyed by coalition and mode.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceLedger {
    run_id: String,
    sigma2_t: f64,
    entries: BTreeMap<CoalitionKey, f64>,
}

impl VarianceLedger {
    /// `sigma2_t` is the empty coalition's conditional variance.
    pub fn new(run_id: impl Into<String>, sigma2_t: f64) -> Self {
        Self {
            run_id: run_id.into(),
            sigma2_t,
            entries: BTreeMap::new(),
        }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn sigma2_t(&self) -> f64 {
        self.sigma2_t
    }

    pub fn insert(&mut self, key: CoalitionKey, conditional_variance: f64) {
        if key.is_empty() {
            return;
        }
        self.entries.insert(key, conditional_variance);
    }

    /// Overwrites an entry regardless of provenance (negative controls).
    pub fn corrupt(&mut self, key: &CoalitionKey, delta: f64) {
        if let Some(v) = self.entries.get_mut(key) {
            *v += delta;
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&CoalitionKey, f64)> {
        self.entries.iter().map(|(k, v)| (k, *v))
    }

    pub fn contains(&self, key: &CoalitionKey) -> bool {
        key.is_empty() || self.entries.contains_key(key)
    }

    pub fn conditional_variance(&self, key: &CoalitionKey) -> Result<f64> {
        if key.is_empty() {
            return Ok(self.sigma2_t);
        }
        self.entries
            .get(key)
            .copied()
            .ok_or_else(|| Error::MissingLedgerEntry(key.to_string()))
    }

    /// `L(S) = σ²(T) − cv(S)`; restricted when the key is in gam mode.
    pub fn variance_reduction(&self, key: &CoalitionKey) -> Result<f64> {
        Ok(self.sigma2_t - self.conditional_variance(key)?)
    }

    /// `W(A;B) = L(A∪B) − L(A) − L(B)` for disjoint `A`, `B` in one mode.
    pub fn interaction_w(&self, a: &CoalitionKey, b: &CoalitionKey) -> Result<f64> {
        if a.mode != b.mode || a.target_id != b.target_id {
            return Err(Error::MismatchedRuns(format!("{a} vs {b}")));
        }
        if let Some(g) = a.group_ids.iter().find(|g| b.group_ids.contains(g)) {
            return Err(Error::OverlappingCoalitions(format!("group {g} in {a} and {b}")));
        }
        let union = CoalitionKey::new(
            a.group_ids.iter().chain(&b.group_ids).copied().collect(),
            a.mode,
            a.target_id.clone(),
        );
        Ok(self.variance_reduction(&union)? - self.variance_reduction(a)? - self.variance_reduction(b)?)
    }

    /// `φ_I = cv(unrestricted, full) − cv(gam, full)`, negative when the
    /// unrestricted model is stronger.
    pub fn complex_interaction_phi_i(&self, full: &CoalitionKey) -> Result<f64> {
        Ok(self.conditional_variance(&full.with_mode(ModelMode::Unrestricted))?
            - self.conditional_variance(&full.with_mode(ModelMode::Gam))?)
    }

    pub fn percent(&self, value: f64) -> f64 {
        if self.sigma2_t == 0.0 {
            0.0
        } else {
            100.0 * value / self.sigma2_t
        }
    }

    /// CSV with columns mode, coalition, conditional_variance, L, percent_of_sigma2.
    pub fn write_csv(&self, path: &Path, grouping: &FeatureGrouping) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["mode", "coalition", "conditional_variance", "L", "percent_of_sigma2"])?;
        let mut rows = vec![(
            "-".to_string(),
            "{}".to_string(),
            self.sigma2_t,
        )];
        rows.extend(
            self.entries
                .iter()
                .map(|(k, v)| (k.mode.to_string(), coalition_label(grouping, &k.group_ids), *v)),
        );
        for (mode, label, cv) in rows {
            let l = self.sigma2_t - cv;
            w.write_record([mode, label, cv.to_string(), l.to_string(), self.percent(l).to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// `{a+b}` style label with group names.
pub fn coalition_label(grouping: &FeatureGrouping, ids: &[usize]) -> String {
    let names: Vec<&str> = ids.iter().map(|&g| grouping.group(g).name.as_str()).collect();
    format!("{{{}}}", names.join("+"))
}

/// Sample covariance of the A-side and B-side component sums of a gam ensemble.
pub fn component_covariance(
    ensemble: &TreeEnsemble,
    a_groups: &[&str],
    b_groups: &[&str],
    rows: &Dataset,
) -> Result<f64> {
    let side = |names: &[&str]| -> Result<Vec<f64>> {
        let mut sum = vec![0.0; rows.row_count()];
        for name in names {
            let g = ensemble.group_index(name)?;
            for (s, c) in sum.iter_mut().zip(ensemble.extract_group_component(g)?.predict(rows)?) {
                *s += c;
            }
        }
        Ok(sum)
    };
    if ensemble.mode != ModelMode::Gam {
        return Err(Error::NotGam);
    }
    if rows.row_count() == 0 {
        return Err(Error::EmptyTestSet);
    }
    Ok(population_covariance(&side(a_groups)?, &side(b_groups)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixUnit {
    Raw,
    Percent,
}

impl fmt::Display for MatrixUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatrixUnit::Raw => "raw",
            MatrixUnit::Percent => "percent of sigma2(T)",
        })
    }
}

/// Symmetric `W` matrix over groups; zero diagonal, NaN where not scanned.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    pub unit: MatrixUnit,
    pub mode: ModelMode,
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl InteractionMatrix {
    pub fn new(unit: MatrixUnit, mode: ModelMode, labels: Vec<String>) -> Self {
        let k = labels.len();
        let mut values = vec![vec![f64::NAN; k]; k];
        for (i, row) in values.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        Self {
            unit,
            mode,
            labels,
            values,
        }
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.values[i][j] = value;
        self.values[j][i] = value;
    }

    pub fn to_percent(&self, sigma2_t: f64) -> Self {
        let scale = |v: f64| if sigma2_t == 0.0 { 0.0 } else { 100.0 * v / sigma2_t };
        match self.unit {
            MatrixUnit::Percent => self.clone(),
            MatrixUnit::Raw => Self {
                unit: MatrixUnit::Percent,
                values: self
                    .values
                    .iter()
                    .map(|r| r.iter().map(|&v| scale(v)).collect())
                    .collect(),
                ..self.clone()
            },
        }
    }

    /// Scanned off-diagonal values, upper triangle.
    pub fn pair_values(&self) -> Vec<f64> {
        let k = self.labels.len();
        (0..k)
            .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
            .map(|(i, j)| self.values[i][j])
            .filter(|v| !v.is_nan())
            .collect()
    }

    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(&self.values) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<matrix>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairInteraction {
    pub a: usize,
    pub b: usize,
    pub l_a: f64,
    pub l_b: f64,
    pub l_ab: f64,
    pub w: f64,
}

#[derive(Debug, Clone)]
pub struct InteractionScan {
    pub mode: ModelMode,
    pub ledger: VarianceLedger,
    pub pairs: Vec<PairInteraction>,
    pub matrix: InteractionMatrix,
}

impl InteractionScan {
    pub fn count_above(&self, percent_threshold: f64) -> usize {
        self.pairs
            .iter()
            .filter(|p| self.ledger.percent(p.w) > percent_threshold)
            .count()
    }
}

/// Number of models a scan of `pairs` needs (singletons plus unions).
pub fn required_trainings(pairs: &[(usize, usize)]) -> usize {
    let singles: BTreeSet<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    let unions: BTreeSet<(usize, usize)> = pairs.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    singles.len() + unions.len()
}

pub fn all_pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect()
}

/// Cached test-split conditional variances for a set of coalitions.
pub fn fill_ledger(
    wb: &Workbench<'_>,
    run_id: &str,
    keys: &[CoalitionKey],
) -> Result<VarianceLedger> {
    let sigma2 = conditional_variance(&Estimator::empty(wb.splits), &wb.splits.test)?;
    let trained = wb.train_all(keys)?;
    let cvs: Vec<(CoalitionKey, f64)> = keys
        .par_iter()
        .filter(|k| !k.is_empty())
        .map(|k| {
            let est = wb.estimator(k, &trained)?;
            Ok((k.clone(), conditional_variance(&est, &wb.splits.test)?))
        })
        .collect::<Result<_>>()?;
    let mut ledger = VarianceLedger::new(run_id, sigma2);
    for (k, v) in cvs {
        ledger.insert(k, v);
    }
    Ok(ledger)
}

/// `W` for each pair of groups, in one mode.
pub fn interaction_scan(
    wb: &Workbench<'_>,
    pairs: &[(usize, usize)],
    mode: ModelMode,
) -> Result<InteractionScan> {
    let mut keys: Vec<CoalitionKey> = Vec::new();
    let mut seen = HashMap::new();
    for &(a, b) in pairs {
        if a == b {
            return Err(Error::OverlappingCoalitions(format!("pair ({a}, {a})")));
        }
        for ids in [vec![a], vec![b], vec![a, b]] {
            let k = wb.key(ids, mode);
            if seen.insert(k.clone(), ()).is_none() {
                keys.push(k);
            }
        }
    }
    let ledger = fill_ledger(wb, &format!("scan-{mode}"), &keys)?;
    let labels = wb.grouping.names().iter().map(|s| s.to_string()).collect();
    let mut matrix = InteractionMatrix::new(MatrixUnit::Raw, mode, labels);
    let mut out = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        let (ka, kb) = (wb.key(vec![a], mode), wb.key(vec![b], mode));
        let w = ledger.interaction_w(&ka, &kb)?;
        matrix.set(a, b, w);
        out.push(PairInteraction {
            a,
            b,
            l_a: ledger.variance_reduction(&ka)?,
            l_b: ledger.variance_reduction(&kb)?,
            l_ab: ledger.variance_reduction(&wb.key(vec![a, b], mode))?,
            w,
        });
    }
    Ok(InteractionScan {
        mode,
        ledger,
        pairs: out,
        matrix,
    })
}
