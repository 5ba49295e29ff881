//! Local SHAP and ASV attributions of the value functions `v` and `w`, global
//! variance reports, and the identity and theorem verifiers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::{ModelMode, TreeEnsemble};
use crate::coalition::{CoalitionKey, EstimatorHandle, Workbench, MODEL_OUTPUT_TARGET};
use crate::data::{Dataset, FeatureGrouping, Splits};
use crate::error::{Error, Result};
use crate::ordering::{count_with_limit, enumerate_orderings, CausalDag, OrderingSet, DEFAULT_COUNT_LIMIT};
use crate::variance::{self, coalition_label, component_covariance, VarianceLedger};

pub const SHAP_GROUP_LIMIT: usize = 20;
pub const DEFAULT_SLACK_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    /// `v(S) = E[T | X_S]`.
    VExpectation,
    /// `w(S) = (t − v(S))²`.
    WSquaredError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    DatasetTarget,
    ModelOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ValueFunctionKind {
    pub kind: ValueKind,
    pub target_source: TargetSource,
}

impl ValueFunctionKind {
    pub const V: Self = Self {
        kind: ValueKind::VExpectation,
        target_source: TargetSource::DatasetTarget,
    };
    pub const W: Self = Self {
        kind: ValueKind::WSquaredError,
        target_source: TargetSource::DatasetTarget,
    };
}

/// Per-row estimator outputs for a set of coalitions, plus the row targets.
#[derive(Debug, Clone)]
pub struct CoalitionValues {
    run_id: String,
    index: HashMap<Vec<usize>, usize>,
    coalitions: Vec<Vec<usize>>,
    predictions: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl CoalitionValues {
    /// `empty` is `v(∅)` for every row.
    pub fn new(run_id: impl Into<String>, targets: Vec<f64>, empty: f64) -> Self {
        let mut v = Self {
            run_id: run_id.into(),
            index: HashMap::new(),
            coalitions: Vec::new(),
            predictions: Vec::new(),
            targets,
        };
        let n = v.targets.len();
        v.insert(Vec::new(), vec![empty; n]).expect("lengths match");
        v
    }

    pub fn insert(&mut self, mut coalition: Vec<usize>, predictions: Vec<f64>) -> Result<()> {
        if predictions.len() != self.targets.len() {
            return Err(Error::InvalidDataset(format!(
                "{} predictions for {} rows",
                predictions.len(),
                self.targets.len()
            )));
        }
        coalition.sort_unstable();
        match self.index.get(&coalition) {
            Some(&i) => self.predictions[i] = predictions,
            None => {
                self.index.insert(coalition.clone(), self.coalitions.len());
                self.coalitions.push(coalition);
                self.predictions.push(predictions);
            }
        }
        Ok(())
    }

    /// Evaluates the workbench's estimators for `coalitions` on `rows`.
    pub fn evaluate(
        wb: &Workbench<'_>,
        run_id: &str,
        mode: ModelMode,
        coalitions: &BTreeSet<Vec<usize>>,
        trained: &BTreeMap<CoalitionKey, Arc<EstimatorHandle>>,
        rows: &Dataset,
    ) -> Result<Self> {
        let empty = crate::coalition::Estimator::empty(wb.splits);
        let crate::coalition::Estimator::Empty { mean } = empty else {
            unreachable!()
        };
        let mut out = Self::new(run_id, rows.target().to_vec(), mean);
        let evaluated: Vec<(Vec<usize>, Vec<f64>)> = coalitions
            .par_iter()
            .filter(|c| !c.is_empty())
            .map(|c| {
                let est = wb.estimator(&wb.key(c.clone(), mode), trained)?;
                Ok((c.clone(), est.evaluate(rows)?))
            })
            .collect::<Result<_>>()?;
        for (c, p) in evaluated {
            out.insert(c, p)?;
        }
        Ok(out)
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn rows(&self) -> usize {
        self.targets.len()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn coalitions(&self) -> &[Vec<usize>] {
        &self.coalitions
    }

    fn slot(&self, coalition: &[usize]) -> Result<usize> {
        if coalition.windows(2).all(|w| w[0] < w[1]) {
            if let Some(&i) = self.index.get(coalition) {
                return Ok(i);
            }
        } else {
            let mut c = coalition.to_vec();
            c.sort_unstable();
            c.dedup();
            if let Some(&i) = self.index.get(&c) {
                return Ok(i);
            }
        }
        Err(Error::MissingEstimator(format!("{coalition:?}")))
    }

    fn at(&self, kind: ValueFunctionKind, slot: usize, row: usize) -> f64 {
        let v = self.predictions[slot][row];
        match kind.kind {
            ValueKind::VExpectation => v,
            ValueKind::WSquaredError => (self.targets[row] - v).powi(2),
        }
    }

    pub fn predictions(&self, coalition: &[usize]) -> Result<&[f64]> {
        Ok(&self.predictions[self.slot(coalition)?])
    }

    pub fn value(&self, kind: ValueFunctionKind, coalition: &[usize], row: usize) -> Result<f64> {
        Ok(self.at(kind, self.slot(coalition)?, row))
    }

    /// Row average of the value function: `mean w(S)` is the conditional variance.
    pub fn mean_value(&self, kind: ValueFunctionKind, coalition: &[usize]) -> Result<f64> {
        let s = self.slot(coalition)?;
        Ok((0..self.rows()).map(|r| self.at(kind, s, r)).sum::<f64>() / self.rows() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalAttribution {
    pub row: usize,
    pub phi_0: f64,
    pub phi: Vec<f64>,
}

impl LocalAttribution {
    pub fn total(&self) -> f64 {
        self.phi_0 + self.phi.iter().sum::<f64>()
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley weight `|S|!(k−|S|−1)!/k!`.
fn shap_weight(k: usize, size: usize) -> f64 {
    1.0 / (k as f64 * binomial(k - 1, size).round())
}

fn mask_to_ids(mask: usize, k: usize) -> Vec<usize> {
    (0..k).filter(|g| mask & (1 << g) != 0).collect()
}

/// Exact SHAP over all subsets of `k` groups for one row.
pub fn shap_local(
    row: usize,
    k: usize,
    kind: ValueFunctionKind,
    values: &CoalitionValues,
) -> Result<LocalAttribution> {
    if k > SHAP_GROUP_LIMIT {
        return Err(Error::TooManyGroups {
            groups: k,
            limit: SHAP_GROUP_LIMIT,
        });
    }
    let by_mask: Vec<f64> = (0..1usize << k)
        .map(|m| values.value(kind, &mask_to_ids(m, k), row))
        .collect::<Result<_>>()?;
    let mut phi = vec![0.0; k];
    for (j, p) in phi.iter_mut().enumerate() {
        for mask in 0..1usize << k {
            if mask & (1 << j) == 0 {
                let w = shap_weight(k, mask.count_ones() as usize);
                *p += w * (by_mask[mask | (1 << j)] - by_mask[mask]);
            }
        }
    }
    Ok(LocalAttribution {
        row,
        phi_0: by_mask[0],
        phi,
    })
}

/// Weighted average over orderings of the per-position value deltas.
pub fn asv_local(
    row: usize,
    orderings: &OrderingSet,
    kind: ValueFunctionKind,
    values: &CoalitionValues,
) -> Result<LocalAttribution> {
    let k = orderings.orderings.first().map_or(0, Vec::len);
    let phi_0 = values.value(kind, &[], row)?;
    let mut phi = vec![0.0; k];
    for (ordering, weight) in orderings.iter() {
        let mut prefix: Vec<usize> = Vec::with_capacity(k);
        let mut prev = phi_0;
        for &g in ordering {
            let at = prefix.partition_point(|&x| x < g);
            prefix.insert(at, g);
            let cur = values.value(kind, &prefix, row)?;
            phi[g] += weight * (cur - prev);
            prev = cur;
        }
    }
    Ok(LocalAttribution { row, phi_0, phi })
}

/// Every attribution method here is linear in the coalition values: group
/// `j` gets `Σ_S c_j(S) · value(S)`. The plan stores those coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionPlan {
    k: usize,
    coalitions: Vec<Vec<usize>>,
    terms: Vec<Vec<(usize, f64)>>,
}

impl AttributionPlan {
    fn from_coefficients(k: usize, coef: Vec<BTreeMap<Vec<usize>, f64>>) -> Self {
        let mut all: BTreeSet<Vec<usize>> = coef.iter().flat_map(|c| c.keys().cloned()).collect();
        all.insert(Vec::new());
        let coalitions: Vec<Vec<usize>> = all.into_iter().collect();
        let pos: HashMap<&Vec<usize>, usize> = coalitions.iter().enumerate().map(|(i, c)| (c, i)).collect();
        let terms = coef
            .iter()
            .map(|c| c.iter().filter(|(_, &w)| w != 0.0).map(|(s, &w)| (pos[s], w)).collect())
            .collect();
        Self { k, coalitions, terms }
    }

    pub fn asv(orderings: &OrderingSet) -> Self {
        let k = orderings.orderings.first().map_or(0, Vec::len);
        let mut coef = vec![BTreeMap::<Vec<usize>, f64>::new(); k];
        for (ordering, weight) in orderings.iter() {
            let mut prefix: Vec<usize> = Vec::with_capacity(k);
            for &g in ordering {
                *coef[g].entry(prefix.clone()).or_default() -= weight;
                let at = prefix.partition_point(|&x| x < g);
                prefix.insert(at, g);
                *coef[g].entry(prefix.clone()).or_default() += weight;
            }
        }
        Self::from_coefficients(k, coef)
    }

    pub fn shap(k: usize) -> Result<Self> {
        if k > SHAP_GROUP_LIMIT {
            return Err(Error::TooManyGroups {
                groups: k,
                limit: SHAP_GROUP_LIMIT,
            });
        }
        let mut coef = vec![BTreeMap::<Vec<usize>, f64>::new(); k];
        for (j, c) in coef.iter_mut().enumerate() {
            for mask in 0..1usize << k {
                if mask & (1 << j) == 0 {
                    let w = shap_weight(k, mask.count_ones() as usize);
                    *c.entry(mask_to_ids(mask, k)).or_default() -= w;
                    *c.entry(mask_to_ids(mask | (1 << j), k)).or_default() += w;
                }
            }
        }
        Ok(Self::from_coefficients(k, coef))
    }

    pub fn groups(&self) -> usize {
        self.k
    }

    /// Coalitions whose values the plan reads (including ∅).
    pub fn coalitions(&self) -> &[Vec<usize>] {
        &self.coalitions
    }

    /// Applies the plan to per-coalition scalars.
    pub fn assemble(&self, mut scalar: impl FnMut(&[usize]) -> Result<f64>) -> Result<Vec<f64>> {
        let s: Vec<f64> = self.coalitions.iter().map(|c| scalar(c)).collect::<Result<_>>()?;
        Ok(self
            .terms
            .iter()
            .map(|t| t.iter().map(|&(i, w)| w * s[i]).sum())
            .collect())
    }

    /// Local attributions for every row.
    pub fn attribute(&self, values: &CoalitionValues, kind: ValueFunctionKind) -> Result<Vec<LocalAttribution>> {
        let slots: Vec<usize> = self.coalitions.iter().map(|c| values.slot(c)).collect::<Result<_>>()?;
        let empty = values.slot(&[])?;
        Ok((0..values.rows())
            .into_par_iter()
            .map(|row| LocalAttribution {
                row,
                phi_0: values.at(kind, empty, row),
                phi: self
                    .terms
                    .iter()
                    .map(|t| t.iter().map(|&(i, w)| w * values.at(kind, slots[i], row)).sum())
                    .collect(),
            })
            .collect())
    }
}

/// Column means of local attributions, in row order.
pub fn mean_attribution(locals: &[LocalAttribution]) -> LocalAttribution {
    let k = locals.first().map_or(0, |l| l.phi.len());
    let n = locals.len() as f64;
    let mut phi = vec![0.0; k];
    let mut phi_0 = 0.0;
    for l in locals {
        phi_0 += l.phi_0;
        for (p, v) in phi.iter_mut().zip(&l.phi) {
            *p += v;
        }
    }
    LocalAttribution {
        row: usize::MAX,
        phi_0: phi_0 / n,
        phi: phi.into_iter().map(|p| p / n).collect(),
    }
}

/// Standard errors of each group's local attribution mean.
pub fn attribution_stderr(locals: &[LocalAttribution]) -> Vec<f64> {
    let k = locals.first().map_or(0, |l| l.phi.len());
    (0..k)
        .map(|j| {
            let col: Vec<f64> = locals.iter().map(|l| l.phi[j]).collect();
            (variance::population_variance(&col) / col.len() as f64).sqrt()
        })
        .collect()
}

/// Largest `|φ_0 + Σφ − value(full)|` over rows.
pub fn efficiency_deviation(
    locals: &[LocalAttribution],
    kind: ValueFunctionKind,
    values: &CoalitionValues,
    full: &[usize],
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for l in locals {
        worst = worst.max((l.total() - values.value(kind, full, l.row)?).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Verdict {
    fn bound(name: &str, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: value <= tolerance,
            value,
            tolerance,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub value: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingMeta {
    pub exact: bool,
    pub orderings_used: usize,
    /// Number of linear extensions when countable.
    pub total_orderings: Option<u64>,
    pub cap: usize,
    pub distinct_prefixes: usize,
    /// Distinct estimators the run reads (prefixes, singletons, full models).
    pub required_models: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub mode: ModelMode,
    pub target_id: String,
    /// `σ²(T)`: the test mean of `w(∅)`.
    pub phi_0: f64,
    #[serde(with = "ordered_contributions")]
    pub contributions: Vec<(String, Contribution)>,
    #[serde(rename = "phi_I")]
    pub phi_i: f64,
    /// Unrestricted full-model conditional variance.
    pub residual_variance: f64,
    /// Gam full-model conditional variance (gam runs).
    pub gam_residual_variance: Option<f64>,
    pub test_rows: usize,
    pub ordering_meta: OrderingMeta,
    pub verdicts: Vec<Verdict>,
}

impl AttributionReport {
    pub fn contribution(&self, group: &str) -> Option<f64> {
        self.contributions.iter().find(|(g, _)| g == group).map(|(_, c)| c.value)
    }

    pub fn values(&self) -> Vec<f64> {
        self.contributions.iter().map(|(_, c)| c.value).collect()
    }

    pub fn percent(&self, value: f64) -> f64 {
        if self.phi_0 == 0.0 {
            0.0
        } else {
            100.0 * value / self.phi_0
        }
    }

    pub fn identities_hold(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

mod ordered_contributions {
    use super::Contribution;
    use serde::de::Deserializer;
    use serde::ser::{SerializeMap, Serializer};
    use serde::Deserialize;

    pub fn serialize<S: Serializer>(v: &[(String, Contribution)], s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(v.len()))?;
        for (k, c) in v {
            m.serialize_entry(k, c)?;
        }
        m.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(String, Contribution)>, D::Error> {
        let map = serde_json::Map::deserialize(d)?;
        map.into_iter()
            .map(|(k, v)| serde_json::from_value(v).map(|c| (k, c)).map_err(serde::de::Error::custom))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub ordering_cap: usize,
    pub seed: u64,
    pub count_limit: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            ordering_cap: 2000,
            seed: 0,
            count_limit: DEFAULT_COUNT_LIMIT,
        }
    }
}

/// Everything a global run produces; the report plus what verifiers need.
#[derive(Debug, Clone)]
pub struct AttributionRun {
    pub report: AttributionReport,
    pub ledger: VarianceLedger,
    pub values: CoalitionValues,
    pub orderings: OrderingSet,
    pub plan: AttributionPlan,
    pub trained: BTreeMap<CoalitionKey, Arc<EstimatorHandle>>,
}

impl AttributionRun {
    pub fn locals(&self, kind: ValueFunctionKind) -> Result<Vec<LocalAttribution>> {
        self.plan.attribute(&self.values, kind)
    }

    pub fn full_key(&self, wb: &Workbench<'_>) -> CoalitionKey {
        wb.key((0..wb.grouping.len()).collect(), self.report.mode)
    }
}

/// Orderings over DAG nodes, renumbered to group indices.
pub fn group_orderings(dag: &CausalDag, grouping: &FeatureGrouping, set: OrderingSet) -> Result<OrderingSet> {
    if dag.len() != grouping.len() {
        return Err(Error::InvalidDag(format!(
            "{} nodes for {} groups",
            dag.len(),
            grouping.len()
        )));
    }
    let map: Vec<usize> = dag
        .names()
        .iter()
        .map(|n| grouping.index_of(n).ok_or_else(|| Error::UnknownNode(n.clone())))
        .collect::<Result<_>>()?;
    Ok(OrderingSet {
        orderings: set
            .orderings
            .into_iter()
            .map(|o| o.into_iter().map(|v| map[v]).collect())
            .collect(),
        ..set
    })
}

fn scale_tolerance(base: f64, scale: f64) -> f64 {
    base * scale.abs().max(1.0)
}

/// Trains every prefix estimator the DAG needs, attributes `w` on the test
/// split, and cross-checks against the ledger.
pub fn asv_global_report(
    wb: &Workbench<'_>,
    dag: &CausalDag,
    mode: ModelMode,
    options: &ReportOptions,
) -> Result<AttributionRun> {
    let k = wb.grouping.len();
    let orderings = group_orderings(dag, wb.grouping, enumerate_orderings(dag, options.ordering_cap, options.seed))?;
    let total_orderings = count_with_limit(dag, options.count_limit)
        .ok()
        .and_then(|c| u64::try_from(c.orderings).ok());
    let plan = AttributionPlan::asv(&orderings);
    let prefixes = crate::coalition::enumerate_required_coalitions(&orderings.orderings);

    let mut coalitions: BTreeSet<Vec<usize>> = plan.coalitions().iter().cloned().collect();
    coalitions.extend((0..k).map(|g| vec![g]));
    let full: Vec<usize> = (0..k).collect();
    let mut keys: Vec<CoalitionKey> = coalitions
        .iter()
        .filter(|c| !c.is_empty())
        .map(|c| wb.key(c.clone(), mode))
        .collect();
    let unrestricted_full = wb.key(full.clone(), ModelMode::Unrestricted);
    if mode == ModelMode::Gam {
        keys.push(unrestricted_full.clone());
    }
    let trained = wb.train_all(&keys)?;

    let run_id = format!("{}:{}:{}", wb.splits.fingerprint(), mode, wb.target_id);
    let test = &wb.splits.test;
    if test.row_count() == 0 {
        return Err(Error::EmptyTestSet);
    }
    let values = CoalitionValues::evaluate(wb, &run_id, mode, &coalitions, &trained, test)?;

    let sigma2 = values.mean_value(ValueFunctionKind::W, &[])?;
    let mut ledger = VarianceLedger::new(&run_id, sigma2);
    for c in coalitions.iter().filter(|c| !c.is_empty()) {
        ledger.insert(wb.key(c.clone(), mode), values.mean_value(ValueFunctionKind::W, c)?);
    }
    if mode == ModelMode::Gam {
        let est = wb.estimator(&unrestricted_full, &trained)?;
        ledger.insert(unrestricted_full.clone(), variance::conditional_variance(&est, test)?);
    }

    // Path 1: mean of local w-attributions.
    let locals = plan.attribute(&values, ValueFunctionKind::W)?;
    let means = mean_attribution(&locals);
    // Path 2: the same linear plan over ledger variance reductions, negated.
    let from_ledger = proposition1_contributions(&ledger, &orderings, mode, wb.target_id)?;

    let full_key = wb.key(full.clone(), mode);
    let gam_residual = ledger.conditional_variance(&full_key)?;
    let (phi_i, residual) = match mode {
        ModelMode::Unrestricted => (0.0, gam_residual),
        ModelMode::Gam => (
            ledger.complex_interaction_phi_i(&full_key)?,
            ledger.conditional_variance(&unrestricted_full)?,
        ),
    };

    let mut verdicts = Vec::new();
    let eff = locals
        .iter()
        .map(|l| {
            let target = values.value(ValueFunctionKind::W, &full, l.row)?;
            Ok((l.total() - target).abs() / target.abs().max(1.0))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    verdicts.push(Verdict::bound("efficiency", eff, 1e-9, "max per-row |phi_0 + sum phi - w(full)|, relative to max(1, |w|)"));
    let cross = means
        .phi
        .iter()
        .zip(&from_ledger)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    verdicts.push(Verdict::bound(
        "ledger_cross_check",
        cross,
        scale_tolerance(1e-6, sigma2),
        "mean local attribution vs ledger assembly",
    ));
    let prop1 = verify_proposition1(&values, &ledger, &orderings, mode, wb.target_id, wb.grouping)?;
    verdicts.push(Verdict::bound("proposition1", prop1.max_deviation, prop1.tolerance, prop1.worst.clone().unwrap_or_default()));
    let total = means.phi_0 + means.phi.iter().sum::<f64>() + phi_i;
    let accounting = (total - residual).abs() / sigma2.max(residual.abs()).max(f64::MIN_POSITIVE);
    verdicts.push(Verdict::bound(
        "accounting",
        accounting,
        1e-6,
        "phi_0 + sum contributions + phi_I vs unrestricted full residual, relative to sigma2(T)",
    ));

    let pct = |v: f64| if sigma2 == 0.0 { 0.0 } else { 100.0 * v / sigma2 };
    let report = AttributionReport {
        mode,
        target_id: wb.target_id.to_string(),
        phi_0: means.phi_0,
        contributions: wb
            .grouping
            .names()
            .iter()
            .zip(&means.phi)
            .map(|(n, &v)| (n.to_string(), Contribution { value: v, percent: pct(v) }))
            .collect(),
        phi_i,
        residual_variance: residual,
        gam_residual_variance: (mode == ModelMode::Gam).then_some(gam_residual),
        test_rows: test.row_count(),
        ordering_meta: OrderingMeta {
            exact: orderings.exact,
            orderings_used: orderings.len(),
            total_orderings,
            cap: options.ordering_cap,
            distinct_prefixes: prefixes.len(),
            required_models: keys.len(),
        },
        verdicts,
    };
    Ok(AttributionRun {
        report,
        ledger,
        values,
        orderings,
        plan,
        trained,
    })
}

/// `φ_j = −Σ_π ω(π) [L(g) + W(g; R_j)]` from the ledger alone.
pub fn proposition1_contributions(
    ledger: &VarianceLedger,
    orderings: &OrderingSet,
    mode: ModelMode,
    target_id: &str,
) -> Result<Vec<f64>> {
    let k = orderings.orderings.first().map_or(0, Vec::len);
    let mut memo: HashMap<(usize, Vec<usize>), f64> = HashMap::new();
    let mut phi = vec![0.0; k];
    for (ordering, weight) in orderings.iter() {
        let mut prefix: Vec<usize> = Vec::with_capacity(k);
        for &g in ordering {
            let term = match memo.get(&(g, prefix.clone())) {
                Some(&t) => t,
                None => {
                    let t = prop1_rhs(ledger, g, &prefix, mode, target_id)?;
                    memo.insert((g, prefix.clone()), t);
                    t
                }
            };
            phi[g] -= weight * term;
            let at = prefix.partition_point(|&x| x < g);
            prefix.insert(at, g);
        }
    }
    Ok(phi)
}

fn prop1_rhs(ledger: &VarianceLedger, g: usize, r: &[usize], mode: ModelMode, target_id: &str) -> Result<f64> {
    let single = CoalitionKey::new(vec![g], mode, target_id);
    let l_g = ledger.variance_reduction(&single)?;
    if r.is_empty() {
        return Ok(l_g);
    }
    let rest = CoalitionKey::new(r.to_vec(), mode, target_id);
    Ok(l_g + ledger.interaction_w(&single, &rest)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposition1Verdict {
    pub passed: bool,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub checked: usize,
    /// The ledger coalition that disagrees most with the value table at the
    /// worst position.
    pub worst: Option<String>,
}

/// Checks `−mean(w(R∪g) − w(R)) = L(g) + W(g; R)` at every ordering position.
pub fn verify_proposition1(
    values: &CoalitionValues,
    ledger: &VarianceLedger,
    orderings: &OrderingSet,
    mode: ModelMode,
    target_id: &str,
    grouping: &FeatureGrouping,
) -> Result<Proposition1Verdict> {
    if values.run_id() != ledger.run_id() {
        return Err(Error::MismatchedRuns(format!("{} vs {}", values.run_id(), ledger.run_id())));
    }
    let tolerance = scale_tolerance(1e-6, ledger.sigma2_t());
    let mut pairs: BTreeSet<(usize, Vec<usize>)> = BTreeSet::new();
    for (ordering, _) in orderings.iter() {
        let mut prefix: Vec<usize> = Vec::new();
        for &g in ordering {
            pairs.insert((g, prefix.clone()));
            let at = prefix.partition_point(|&x| x < g);
            prefix.insert(at, g);
        }
    }
    let mut worst = (0.0f64, None::<(usize, Vec<usize>)>);
    for (g, r) in &pairs {
        let mut with = r.clone();
        with.insert(with.partition_point(|&x| x < *g), *g);
        let lhs = -(values.mean_value(ValueFunctionKind::W, &with)? - values.mean_value(ValueFunctionKind::W, r)?);
        let rhs = prop1_rhs(ledger, *g, r, mode, target_id)?;
        let d = (lhs - rhs).abs();
        if d > worst.0 || worst.1.is_none() {
            worst = (d.max(worst.0), Some((*g, r.clone())));
        }
    }
    let passed = worst.0 <= tolerance;
    let culprit = match (&worst.1, passed) {
        (Some((g, r)), false) => {
            let mut with = r.clone();
            with.insert(with.partition_point(|&x| x < *g), *g);
            let mut candidates = vec![vec![*g], with];
            if !r.is_empty() {
                candidates.push(r.clone());
            }
            let mut best = (f64::NEG_INFINITY, String::new());
            for c in candidates {
                let key = CoalitionKey::new(c.clone(), mode, target_id);
                let gap = (ledger.conditional_variance(&key)? - values.mean_value(ValueFunctionKind::W, &c)?).abs();
                if gap > best.0 {
                    best = (gap, coalition_label(grouping, &c));
                }
            }
            Some(best.1)
        }
        _ => None,
    };
    Ok(Proposition1Verdict {
        passed,
        max_deviation: worst.0,
        tolerance,
        checked: pairs.len(),
        worst: culprit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremPair {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    /// The pair satisfies Theorem 1's independence hypothesis.
    pub independent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub a: String,
    pub b: String,
    pub lr_a: f64,
    pub lr_b: f64,
    pub lr_ab: f64,
    pub w_r: f64,
    pub covariance: f64,
    /// `−2·cov(F_A, F_B)`.
    pub bound: f64,
    /// `bound − W^r`; negative means the raw inequality is violated.
    pub theorem2_margin: f64,
    pub theorem2_pass: bool,
    /// `|W^r|` for independent pairs.
    pub theorem1_residual: Option<f64>,
    pub theorem1_pass: Option<bool>,
    /// `W^r` above the bound by more than the slack.
    pub anomaly: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremVerdicts {
    pub sigma2_t: f64,
    pub slack: f64,
    pub theorem1_tolerance: f64,
    pub checks: Vec<PairCheck>,
    pub anomalies: usize,
    pub theorem1_pass: bool,
    pub theorem2_pass: bool,
}

pub const THEOREM1_FRACTION: f64 = 0.03;
pub const THEOREM2_FRACTION: f64 = 0.03;

/// Theorem 1 on independent pairs and Theorem 2 on every pair, using gam
/// estimators. Theorem 2 uses a 0.03·σ²(T) slack; anomalies use
/// `slack_fraction`·σ²(T).
pub fn verify_theorems(wb: &Workbench<'_>, pairs: &[TheoremPair], slack_fraction: f64) -> Result<TheoremVerdicts> {
    let mode = ModelMode::Gam;
    let mut keys = Vec::new();
    for p in pairs {
        if let Some(g) = p.a.iter().find(|g| p.b.contains(g)) {
            return Err(Error::OverlappingCoalitions(format!("group {g}")));
        }
        keys.push(wb.key(p.a.clone(), mode));
        keys.push(wb.key(p.b.clone(), mode));
        keys.push(wb.key(p.a.iter().chain(&p.b).copied().collect(), mode));
    }
    keys.sort();
    keys.dedup();
    let trained = wb.train_all(&keys)?;
    let test = &wb.splits.test;
    let empty = crate::coalition::Estimator::empty(wb.splits);
    let sigma2 = variance::conditional_variance(&empty, test)?;
    let mut ledger = VarianceLedger::new("theorems", sigma2);
    for k in &keys {
        let est = wb.estimator(k, &trained)?;
        ledger.insert(k.clone(), variance::conditional_variance(&est, test)?);
    }
    let side_cv = |side: &[usize], pair: &CoalitionKey| -> Result<Option<f64>> {
        if !wb.config.component_reuse {
            return Ok(None);
        }
        let est = crate::coalition::Estimator::component(trained[pair].clone(), side, wb.grouping, wb.splits)?;
        Ok(Some(variance::conditional_variance(&est, test)?))
    };
    let slack = slack_fraction * sigma2;
    let t1_tol = THEOREM1_FRACTION * sigma2;
    let t2_slack = THEOREM2_FRACTION * sigma2;
    let mut checks = Vec::new();
    for p in pairs {
        let (ka, kb) = (wb.key(p.a.clone(), mode), wb.key(p.b.clone(), mode));
        let kab = wb.key(p.a.iter().chain(&p.b).copied().collect(), mode);
        let names = |ids: &[usize]| -> Vec<&str> { ids.iter().map(|&g| wb.grouping.group(g).name.as_str()).collect() };
        // With component reuse each side is read from this pair's model.
        let mut local = ledger.clone();
        for (side, key) in [(&p.a, &ka), (&p.b, &kb)] {
            if let Some(cv) = side_cv(side, &kab)? {
                local.insert(key.clone(), cv);
            }
        }
        let ledger = &local;
        let w_r = ledger.interaction_w(&ka, &kb)?;
        let covariance = component_covariance(&trained[&kab].ensemble, &names(&p.a), &names(&p.b), test)?;
        let bound = -2.0 * covariance;
        let t1 = p.independent.then(|| w_r.abs());
        checks.push(PairCheck {
            a: coalition_label(wb.grouping, &ka.group_ids),
            b: coalition_label(wb.grouping, &kb.group_ids),
            lr_a: ledger.variance_reduction(&ka)?,
            lr_b: ledger.variance_reduction(&kb)?,
            lr_ab: ledger.variance_reduction(&kab)?,
            w_r,
            covariance,
            bound,
            theorem2_margin: bound - w_r,
            theorem2_pass: w_r <= bound + t2_slack,
            theorem1_residual: t1,
            theorem1_pass: t1.map(|r| r <= t1_tol),
            anomaly: w_r > bound + slack,
        });
    }
    Ok(TheoremVerdicts {
        sigma2_t: sigma2,
        slack,
        theorem1_tolerance: t1_tol,
        anomalies: checks.iter().filter(|c| c.anomaly).count(),
        theorem1_pass: checks.iter().all(|c| c.theorem1_pass != Some(false)),
        theorem2_pass: checks.iter().all(|c| c.theorem2_pass),
        checks,
    })
}

/// The splits with the target replaced by `model`'s predictions.
pub fn self_explanation_target(model: &TreeEnsemble, splits: &Splits) -> Result<Splits> {
    let predict = |d: &Dataset| model.predict(d).and_then(|p| d.with_target(MODEL_OUTPUT_TARGET, p));
    Ok(Splits::new(predict(&splits.train)?, predict(&splits.val)?, predict(&splits.test)?))
}
