//! One trained estimator per (coalition, mode): `Ê[T | X_S]` or `Ê^r[T | X_S]`.
//!
//! Estimators are cached in memory and, when the store has a run directory,
//! on disk as `<run>/<mode>/<sorted-group-ids>.model.json` with a
//! `manifest.json` of fingerprints. A cached model is served only when its
//! fingerprint (data splits, grouping, params, key) matches.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boost::{fit_with_diagnostics, BoostParams, ModelMode, TreeEnsemble};
use crate::data::{Dataset, FeatureGrouping, Splits};
use crate::error::{Error, Result};

pub const DATASET_TARGET: &str = "dataset";
pub const MODEL_OUTPUT_TARGET: &str = "model_output";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CoalitionKey {
    pub mode: ModelMode,
    pub group_ids: Vec<usize>,
    pub target_id: String,
}

impl CoalitionKey {
    pub fn new(mut group_ids: Vec<usize>, mode: ModelMode, target_id: impl Into<String>) -> Self {
        group_ids.sort_unstable();
        group_ids.dedup();
        Self {
            mode,
            group_ids,
            target_id: target_id.into(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.group_ids.is_empty()
    }

    /// `0-3-7`, or `empty`.
    pub fn stem(&self) -> String {
        if self.group_ids.is_empty() {
            return "empty".into();
        }
        self.group_ids
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("-")
    }

    pub fn with_mode(&self, mode: ModelMode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }
}

impl fmt::Display for CoalitionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{{{}}}", self.mode, self.stem())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorHandle {
    pub key: CoalitionKey,
    pub ensemble: TreeEnsemble,
    pub val_mse: f64,
    pub train_fingerprint: String,
}

impl EstimatorHandle {
    /// Every split stays inside the coalition's features.
    pub fn is_confined(&self, grouping: &FeatureGrouping) -> bool {
        let allowed = grouping.features_of(&self.key.group_ids);
        self.ensemble.used_features().iter().all(|f| allowed.contains(f))
    }
}

/// Something that produces `v(S)` for rows.
#[derive(Debug, Clone)]
pub enum Estimator {
    /// `v(∅)`: the training mean of T.
    Empty { mean: f64 },
    Trained(Arc<EstimatorHandle>),
    /// Components of some groups of a larger gam ensemble plus a
    /// least-squares intercept.
    Component {
        source: Arc<EstimatorHandle>,
        groups: Vec<usize>,
        intercept: f64,
    },
}

impl Estimator {
    pub fn empty(splits: &Splits) -> Self {
        let t = splits.train.target();
        Estimator::Empty {
            mean: t.iter().sum::<f64>() / t.len() as f64,
        }
    }

    /// Serves the groups `group_ids` (indices into `grouping`) from the gam
    /// ensemble of `source`.
    pub fn component(
        source: Arc<EstimatorHandle>,
        group_ids: &[usize],
        grouping: &FeatureGrouping,
        splits: &Splits,
    ) -> Result<Self> {
        let groups = group_ids
            .iter()
            .map(|&g| source.ensemble.group_index(&grouping.group(g).name))
            .collect::<Result<Vec<_>>>()?;
        let fitted = component_sum(&source.ensemble, &groups, &splits.train)?;
        let t = splits.train.target();
        let intercept = t.iter().zip(&fitted).map(|(t, f)| t - f).sum::<f64>() / t.len() as f64;
        Ok(Estimator::Component {
            source,
            groups,
            intercept,
        })
    }

    pub fn evaluate(&self, rows: &Dataset) -> Result<Vec<f64>> {
        match self {
            Estimator::Empty { mean } => Ok(vec![*mean; rows.row_count()]),
            Estimator::Trained(h) => h.ensemble.predict(rows),
            Estimator::Component {
                source,
                groups,
                intercept,
            } => Ok(component_sum(&source.ensemble, groups, rows)?
                .into_iter()
                .map(|v| v + intercept)
                .collect()),
        }
    }
}

fn component_sum(ensemble: &TreeEnsemble, groups: &[usize], rows: &Dataset) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; rows.row_count()];
    for &g in groups {
        for (s, c) in sum.iter_mut().zip(ensemble.extract_group_component(g)?.predict(rows)?) {
            *s += c;
        }
    }
    Ok(sum)
}

/// Boosting parameters per mode plus the per-coalition overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub unrestricted: BoostParams,
    pub gam: BoostParams,
    /// Replaces the mode's params for single-group coalitions.
    #[serde(default)]
    pub singleton_override: Option<BoostParams>,
    /// Serve single-group gam values from the largest trained containing gam.
    #[serde(default)]
    pub component_reuse: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            unrestricted: BoostParams::for_mode(ModelMode::Unrestricted),
            gam: BoostParams::for_mode(ModelMode::Gam),
            singleton_override: None,
            component_reuse: false,
        }
    }
}

impl ModelConfig {
    pub fn params_for(&self, key: &CoalitionKey) -> BoostParams {
        match (key.group_ids.len(), self.singleton_override) {
            (1, Some(p)) => p,
            _ => match key.mode {
                ModelMode::Unrestricted => self.unrestricted,
                ModelMode::Gam => self.gam,
            },
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StoredModel {
    fingerprint: String,
    key: CoalitionKey,
    val_mse: f64,
    ensemble: TreeEnsemble,
}

type Slot = Arc<Mutex<Option<Arc<EstimatorHandle>>>>;

/// Cache of trained coalition estimators.
#[derive(Debug, Default)]
pub struct CoalitionStore {
    dir: Option<PathBuf>,
    slots: Mutex<HashMap<CoalitionKey, Slot>>,
    manifest: Mutex<BTreeMap<String, String>>,
    trainings: AtomicUsize,
}

impl CoalitionStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let manifest_path = dir.join("manifest.json");
        let manifest = if manifest_path.exists() {
            let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
            serde_json::from_str(&text).unwrap_or_default()
        } else {
            BTreeMap::new()
        };
        Ok(Self {
            dir: Some(dir),
            manifest: Mutex::new(manifest),
            ..Self::default()
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Number of models trained (not loaded) by this store.
    pub fn trainings(&self) -> usize {
        self.trainings.load(Ordering::SeqCst)
    }

    fn model_path(&self, key: &CoalitionKey) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(key.mode.as_str()).join(format!("{}.model.json", key.stem())))
    }

    pub fn fingerprint(
        splits: &Splits,
        grouping: &FeatureGrouping,
        key: &CoalitionKey,
        params: &BoostParams,
    ) -> String {
        let mut h = Sha256::new();
        h.update(splits.fingerprint().as_bytes());
        h.update(serde_json::to_vec(key).expect("keys serialize"));
        h.update(serde_json::to_vec(params).expect("params serialize"));
        h.update(serde_json::to_vec(&grouping.subset(&key.group_ids)).expect("groupings serialize"));
        hex::encode(h.finalize())
    }

    /// Returns the cached estimator or trains it. Concurrent calls for one key
    /// train it exactly once.
    pub fn get_or_train(
        &self,
        splits: &Splits,
        grouping: &FeatureGrouping,
        key: &CoalitionKey,
        params: &BoostParams,
    ) -> Result<Arc<EstimatorHandle>> {
        if key.is_empty() {
            return Err(Error::MissingEstimator(
                "the empty coalition is served by Estimator::empty".into(),
            ));
        }
        if let Some(&g) = key.group_ids.iter().find(|&&g| g >= grouping.len()) {
            return Err(Error::UnknownGroup(g.to_string()));
        }
        let fingerprint = Self::fingerprint(splits, grouping, key, params);
        let slot = {
            let mut slots = self.slots.lock().expect("store lock");
            slots.entry(key.clone()).or_default().clone()
        };
        let mut guard = slot.lock().expect("slot lock");
        if let Some(h) = guard.as_ref() {
            if h.train_fingerprint == fingerprint {
                return Ok(h.clone());
            }
        }
        if let Some(h) = self.load(key, &fingerprint)? {
            let h = Arc::new(h);
            *guard = Some(h.clone());
            return Ok(h);
        }

        let sub = grouping.subset(&key.group_ids);
        let (ensemble, diag) = fit_with_diagnostics(&splits.train, &splits.val, key.mode, Some(&sub), params)?;
        self.trainings.fetch_add(1, Ordering::SeqCst);
        let val_mse = diag.val_mse.get(diag.best_rounds).copied().unwrap_or(f64::NAN);
        let handle = Arc::new(EstimatorHandle {
            key: key.clone(),
            ensemble,
            val_mse,
            train_fingerprint: fingerprint,
        });
        self.persist(&handle)?;
        *guard = Some(handle.clone());
        Ok(handle)
    }

    /// Whether `get_or_train` would be served without training.
    pub fn has(&self, splits: &Splits, grouping: &FeatureGrouping, key: &CoalitionKey, params: &BoostParams) -> bool {
        if key.is_empty() {
            return true;
        }
        let fingerprint = Self::fingerprint(splits, grouping, key, params);
        let slot = self.slots.lock().expect("store lock").get(key).cloned();
        if let Some(slot) = slot {
            if slot
                .lock()
                .expect("slot lock")
                .as_ref()
                .is_some_and(|h| h.train_fingerprint == fingerprint)
            {
                return true;
            }
        }
        matches!(self.load(key, &fingerprint), Ok(Some(_)))
    }

    fn load(&self, key: &CoalitionKey, fingerprint: &str) -> Result<Option<EstimatorHandle>> {
        let Some(path) = self.model_path(key) else {
            return Ok(None);
        };
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let Ok(stored) = serde_json::from_str::<StoredModel>(&text) else {
            return Ok(None);
        };
        if stored.fingerprint != fingerprint || &stored.key != key {
            return Ok(None);
        }
        Ok(Some(EstimatorHandle {
            key: stored.key,
            ensemble: stored.ensemble,
            val_mse: stored.val_mse,
            train_fingerprint: stored.fingerprint,
        }))
    }

    fn persist(&self, handle: &EstimatorHandle) -> Result<()> {
        let (Some(dir), Some(path)) = (&self.dir, self.model_path(&handle.key)) else {
            return Ok(());
        };
        let parent = path.parent().expect("model paths have a parent");
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let stored = StoredModel {
            fingerprint: handle.train_fingerprint.clone(),
            key: handle.key.clone(),
            val_mse: handle.val_mse,
            ensemble: handle.ensemble.clone(),
        };
        let text = serde_json::to_string(&stored)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

        let mut manifest = self.manifest.lock().expect("manifest lock");
        manifest.insert(
            format!("{}/{}", handle.key.mode, handle.key.stem()),
            handle.train_fingerprint.clone(),
        );
        let manifest_path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&*manifest)?;
        fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
        Ok(())
    }
}

/// Data, grouping, store and parameters shared by every estimator of one run.
#[derive(Debug, Clone, Copy)]
pub struct Workbench<'a> {
    pub splits: &'a Splits,
    pub grouping: &'a FeatureGrouping,
    pub store: &'a CoalitionStore,
    pub config: &'a ModelConfig,
    pub target_id: &'a str,
}

impl<'a> Workbench<'a> {
    pub fn key(&self, group_ids: Vec<usize>, mode: ModelMode) -> CoalitionKey {
        CoalitionKey::new(group_ids, mode, self.target_id)
    }

    pub fn is_cached(&self, key: &CoalitionKey) -> bool {
        self.store
            .has(self.splits, self.grouping, key, &self.config.params_for(key))
    }

    pub fn train(&self, key: &CoalitionKey) -> Result<Arc<EstimatorHandle>> {
        self.store
            .get_or_train(self.splits, self.grouping, key, &self.config.params_for(key))
    }

    /// Trains every nonempty key, in parallel.
    pub fn train_all(&self, keys: &[CoalitionKey]) -> Result<BTreeMap<CoalitionKey, Arc<EstimatorHandle>>> {
        keys.par_iter()
            .filter(|k| !k.is_empty())
            .map(|k| self.train(k).map(|h| (k.clone(), h)))
            .collect()
    }

    /// The estimator serving `key`. With component reuse on, a single-group gam
    /// coalition is served by its component in the largest trained gam that
    /// contains it (falling back to its own model).
    pub fn estimator(
        &self,
        key: &CoalitionKey,
        trained: &BTreeMap<CoalitionKey, Arc<EstimatorHandle>>,
    ) -> Result<Estimator> {
        if key.is_empty() {
            return Ok(Estimator::empty(self.splits));
        }
        if self.config.component_reuse && key.mode == ModelMode::Gam && key.group_ids.len() == 1 {
            let g = key.group_ids[0];
            let host = trained
                .iter()
                .filter(|(k, _)| {
                    k.mode == ModelMode::Gam
                        && k.target_id == key.target_id
                        && k.group_ids.len() > 1
                        && k.group_ids.contains(&g)
                })
                .max_by(|(a, _), (b, _)| a.group_ids.len().cmp(&b.group_ids.len()).then(b.cmp(a)));
            if let Some((_, h)) = host {
                return Estimator::component(h.clone(), &[g], self.grouping, self.splits);
            }
        }
        match trained.get(key) {
            Some(h) => Ok(Estimator::Trained(h.clone())),
            None => Ok(Estimator::Trained(self.train(key)?)),
        }
    }
}

/// Stable run-directory name for one (data, grouping, target) combination.
pub fn run_name(splits: &Splits, grouping: &FeatureGrouping, target_id: &str) -> String {
    let mut h = Sha256::new();
    h.update(splits.fingerprint().as_bytes());
    h.update(serde_json::to_vec(grouping).expect("groupings serialize"));
    h.update(target_id.as_bytes());
    format!("{target_id}-{}", &hex::encode(h.finalize())[..16])
}

/// Every distinct nonempty prefix set of the orderings: the training workload.
pub fn enumerate_required_coalitions(orderings: &[Vec<usize>]) -> BTreeSet<Vec<usize>> {
    crate::ordering::distinct_prefixes(orderings)
}
