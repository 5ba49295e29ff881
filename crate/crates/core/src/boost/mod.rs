//! Squared-error gradient boosting with an optional one-group-per-tree
//! constraint, which makes the ensemble an additive model over feature groups.

mod tree;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureGrouping};
use crate::error::{Error, Result};

pub use tree::{RegressionTree, TreeNode};
use tree::{grow_tree, GrownTree, SortedFeature};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    Unrestricted,
    Gam,
}

impl ModelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelMode::Unrestricted => "unrestricted",
            ModelMode::Gam => "gam",
        }
    }
}

impl fmt::Display for ModelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unrestricted" => Ok(ModelMode::Unrestricted),
            "gam" => Ok(ModelMode::Gam),
            other => Err(Error::InvalidParams(format!("unknown mode `{other}`"))),
        }
    }
}

/// How a gam ensemble picks the group for each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupSchedule {
    /// Round-robin over groups.
    Cyclic,
    /// One candidate tree per group; keep the largest training-loss reduction.
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub num_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// 0 disables early stopping.
    pub early_stopping_rounds: usize,
    pub group_schedule: GroupSchedule,
}

impl BoostParams {
    pub fn for_mode(mode: ModelMode) -> Self {
        Self {
            num_rounds: 500,
            learning_rate: 0.1,
            max_depth: match mode {
                ModelMode::Unrestricted => 6,
                ModelMode::Gam => 3,
            },
            min_samples_leaf: 20,
            early_stopping_rounds: 50,
            group_schedule: GroupSchedule::Greedy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_rounds == 0 {
            return Err(Error::InvalidParams("num_rounds must be at least 1".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::InvalidParams("max_depth must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "learning_rate {} outside (0, 1]",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// `base_score + learning_rate · Σ tree outputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub format_version: u32,
    pub mode: ModelMode,
    pub base_score: f64,
    pub learning_rate: f64,
    pub params: BoostParams,
    /// Features the ensemble was allowed to use.
    pub features: Vec<usize>,
    /// GAM partition; tree group tags index into it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grouping: Option<FeatureGrouping>,
    pub trees: Vec<RegressionTree>,
}

/// Per-round training record of [`fit_with_diagnostics`].
#[derive(Debug, Clone)]
pub struct FitDiagnostics {
    /// Training MSE before any tree, then after each round (including rounds
    /// later discarded by early stopping).
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    pub best_rounds: usize,
    /// `base_score + lr · Σ` over the kept trees, accumulated during training.
    pub train_predictions: Vec<f64>,
}

pub fn fit(
    train: &Dataset,
    val: &Dataset,
    mode: ModelMode,
    grouping: Option<&FeatureGrouping>,
    params: &BoostParams,
) -> Result<TreeEnsemble> {
    fit_with_diagnostics(train, val, mode, grouping, params).map(|(e, _)| e)
}

pub fn fit_with_diagnostics(
    train: &Dataset,
    val: &Dataset,
    mode: ModelMode,
    grouping: Option<&FeatureGrouping>,
    params: &BoostParams,
) -> Result<(TreeEnsemble, FitDiagnostics)> {
    params.validate()?;
    let n = train.row_count();
    if n == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    let features = match (mode, grouping) {
        (ModelMode::Gam, None) => return Err(Error::MissingGrouping),
        (_, Some(g)) => g.all_features(),
        (ModelMode::Unrestricted, None) => (0..train.feature_count()).collect(),
    };
    if let Some(&f) = features.iter().find(|&&f| f >= train.feature_count()) {
        return Err(Error::MissingFeature(f));
    }
    if val.row_count() > 0 && val.feature_count() != train.feature_count() {
        return Err(Error::InvalidDataset("validation schema differs from training".into()));
    }

    let y = train.target();
    let base_score = y.iter().sum::<f64>() / n as f64;
    let lr = params.learning_rate;
    let columns = train.columns();
    let sorted: Vec<SortedFeature> = features
        .par_iter()
        .map(|&f| SortedFeature::new(f, &columns[f]))
        .collect();
    let sorted_for = |fs: &[usize]| -> Vec<&SortedFeature> {
        sorted.iter().filter(|s| fs.contains(&s.feature)).collect()
    };
    // Per-group feature sets for gam mode, or one set for unrestricted.
    let candidate_sets: Vec<(Option<usize>, Vec<&SortedFeature>)> = match mode {
        ModelMode::Unrestricted => vec![(None, sorted.iter().collect())],
        ModelMode::Gam => grouping
            .expect("checked above")
            .groups()
            .iter()
            .enumerate()
            .map(|(g, grp)| (Some(g), sorted_for(&grp.features)))
            .collect(),
    };

    let mut tree_sum = vec![0.0; n];
    let mut val_sum = vec![0.0; val.row_count()];
    let mse = |target: &[f64], sum: &[f64]| -> f64 {
        if target.is_empty() {
            return f64::NAN;
        }
        target
            .iter()
            .zip(sum)
            .map(|(t, s)| (t - (base_score + lr * s)).powi(2))
            .sum::<f64>()
            / target.len() as f64
    };
    let mut diag = FitDiagnostics {
        train_mse: vec![mse(y, &tree_sum)],
        val_mse: vec![mse(val.target(), &val_sum)],
        best_rounds: 0,
        train_predictions: Vec::new(),
    };
    let mut best_val = diag.val_mse[0];
    let mut best_train_sum = tree_sum.clone();
    let use_val = val.row_count() > 0 && params.early_stopping_rounds > 0;

    let mut trees: Vec<RegressionTree> = Vec::new();
    let mut residual = vec![0.0; n];
    for round in 0..params.num_rounds {
        for ((r, t), s) in residual.iter_mut().zip(y).zip(&tree_sum) {
            *r = t - (base_score + lr * s);
        }
        let grow = |set: &[&SortedFeature]| {
            grow_tree(columns, set, &residual, params.max_depth, params.min_samples_leaf)
        };
        let (tag, grown): (Option<usize>, GrownTree) = match mode {
            ModelMode::Unrestricted => (None, grow(&candidate_sets[0].1)),
            ModelMode::Gam => match params.group_schedule {
                GroupSchedule::Cyclic => {
                    let (tag, set) = &candidate_sets[round % candidate_sets.len()];
                    (*tag, grow(set))
                }
                GroupSchedule::Greedy => {
                    let candidates: Vec<GrownTree> =
                        candidate_sets.par_iter().map(|(_, set)| grow(set)).collect();
                    let mut best = 0;
                    for (i, c) in candidates.iter().enumerate() {
                        if c.score > candidates[best].score {
                            best = i;
                        }
                    }
                    let tag = candidate_sets[best].0;
                    (tag, candidates.into_iter().nth(best).expect("at least one group"))
                }
            },
        };
        let mut tree = grown.tree;
        tree.group_tag = tag;
        for (s, o) in tree_sum.iter_mut().zip(&grown.outputs) {
            *s += o;
        }
        let val_columns = val.columns();
        for (row, s) in val_sum.iter_mut().enumerate() {
            *s += tree.predict_row(val_columns, row);
        }
        trees.push(tree);
        diag.train_mse.push(mse(y, &tree_sum));
        let v = mse(val.target(), &val_sum);
        diag.val_mse.push(v);

        if use_val {
            if v < best_val {
                best_val = v;
                diag.best_rounds = trees.len();
                best_train_sum.copy_from_slice(&tree_sum);
            } else if trees.len() - diag.best_rounds >= params.early_stopping_rounds {
                break;
            }
        } else {
            diag.best_rounds = trees.len();
        }
    }
    if use_val {
        trees.truncate(diag.best_rounds);
    } else {
        best_train_sum = tree_sum;
    }
    diag.train_predictions = best_train_sum.iter().map(|s| base_score + lr * s).collect();

    let ensemble = TreeEnsemble {
        format_version: FORMAT_VERSION,
        mode,
        base_score,
        learning_rate: lr,
        params: *params,
        features,
        grouping: match mode {
            ModelMode::Gam => grouping.cloned(),
            ModelMode::Unrestricted => None,
        },
        trees,
    };
    Ok((ensemble, diag))
}

impl TreeEnsemble {
    /// A constant predictor with no trees.
    pub fn constant(base_score: f64, params: BoostParams) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            mode: ModelMode::Unrestricted,
            base_score,
            learning_rate: params.learning_rate,
            params,
            features: Vec::new(),
            grouping: None,
            trees: Vec::new(),
        }
    }

    fn check_rows(&self, rows: &Dataset) -> Result<()> {
        let max = self
            .trees
            .iter()
            .flat_map(|t| t.split_features())
            .chain(self.features.iter().copied())
            .max();
        match max {
            Some(f) if f >= rows.feature_count() => Err(Error::MissingFeature(f)),
            _ => Ok(()),
        }
    }

    fn tree_sum<'a>(&self, trees: impl Iterator<Item = &'a RegressionTree>, rows: &Dataset) -> Vec<f64> {
        let columns = rows.columns();
        let mut sum = vec![0.0; rows.row_count()];
        for tree in trees {
            for (row, s) in sum.iter_mut().enumerate() {
                *s += tree.predict_row(columns, row);
            }
        }
        sum
    }

    pub fn predict(&self, rows: &Dataset) -> Result<Vec<f64>> {
        self.check_rows(rows)?;
        let sum = self.tree_sum(self.trees.iter(), rows);
        Ok(sum.iter().map(|s| self.base_score + self.learning_rate * s).collect())
    }

    /// Group id → index into this ensemble's grouping, by name.
    pub fn group_index(&self, name: &str) -> Result<usize> {
        self.grouping
            .as_ref()
            .ok_or(Error::NotGam)?
            .index_of(name)
            .ok_or_else(|| Error::UnknownGroup(name.to_owned()))
    }

    /// The single-group function: `lr · Σ` over the trees tagged `group`, without base score.
    pub fn extract_group_component(&self, group: usize) -> Result<GroupComponent<'_>> {
        let grouping = match (self.mode, &self.grouping) {
            (ModelMode::Gam, Some(g)) => g,
            _ => return Err(Error::NotGam),
        };
        if group >= grouping.len() {
            return Err(Error::UnknownGroup(group.to_string()));
        }
        Ok(GroupComponent {
            ensemble: self,
            group,
        })
    }

    /// Every feature referenced by a split.
    pub fn used_features(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.trees.iter().flat_map(|t| t.split_features()).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Gam purity: every tree carries a tag and splits only inside its group.
    pub fn is_gam_pure(&self) -> bool {
        let Some(grouping) = &self.grouping else {
            return false;
        };
        self.trees.iter().all(|t| match t.group_tag {
            Some(g) if g < grouping.len() => t
                .split_features()
                .iter()
                .all(|f| grouping.group(g).features.contains(f)),
            _ => false,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let e: TreeEnsemble = serde_json::from_str(text)?;
        if e.format_version != FORMAT_VERSION {
            return Err(Error::Store(format!(
                "unsupported ensemble format version {}",
                e.format_version
            )));
        }
        Ok(e)
    }
}

/// Predictor for one group of a gam ensemble.
#[derive(Debug, Clone, Copy)]
pub struct GroupComponent<'a> {
    ensemble: &'a TreeEnsemble,
    group: usize,
}

impl GroupComponent<'_> {
    pub fn group(&self) -> usize {
        self.group
    }

    pub fn predict(&self, rows: &Dataset) -> Result<Vec<f64>> {
        self.ensemble.check_rows(rows)?;
        let trees = self
            .ensemble
            .trees
            .iter()
            .filter(|t| t.group_tag == Some(self.group));
        let sum = self.ensemble.tree_sum(trees, rows);
        Ok(sum.iter().map(|s| self.ensemble.learning_rate * s).collect())
    }
}
