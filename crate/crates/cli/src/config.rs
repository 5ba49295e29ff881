//! Run configuration: flags merged over an optional JSON file.

use std::fs;
use std::path::{Path, PathBuf};

use asv_core::boost::GroupSchedule;
use asv_core::coalition::{run_name, DATASET_TARGET, MODEL_OUTPUT_TARGET};
use asv_core::data::{generate_synthetic, load_csv, split, SplitSpec, SyntheticKind, SyntheticSpec};
use asv_core::ordering::load_dag;
use asv_core::{
    BoostParams, CausalDag, CoalitionKey, CoalitionStore, FeatureGrouping, ModelConfig, ModelMode, Splits, Workbench,
};
use clap::Args;
use serde::Deserialize;

use crate::error::CliError;

pub const DEFAULT_SYNTHETIC_ROWS: usize = 10_000;
pub const DEFAULT_OUT: &str = "asv-out";

/// Options shared by every data-driven subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON config file; flags take precedence over its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV dataset with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Built-in synthetic example instead of a CSV.
    #[arg(long)]
    pub synthetic: Option<String>,
    /// Rows to draw for a synthetic example.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub target: Option<String>,
    /// Comma-separated subset of feature columns.
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    /// JSON object mapping group name to feature names.
    #[arg(long)]
    pub grouping: Option<PathBuf>,
    /// JSON causal graph over groups: {"nodes": [...], "edges": [[from, to], ...]}.
    #[arg(long)]
    pub dag: Option<PathBuf>,
    /// unrestricted, gam or both.
    #[arg(long)]
    pub modes: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub ordering_cap: Option<usize>,
    /// Serve gam singletons from the components of a larger gam.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub component_reuse: Option<bool>,
    /// Attribute the unrestricted model's own predictions instead of the dataset target.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub explain_model: Option<bool>,
    /// Gam round schedule: greedy or cyclic.
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_samples_leaf: Option<usize>,
    #[arg(long)]
    pub early_stopping: Option<usize>,
    /// Round count for single-group gam estimators.
    #[arg(long)]
    pub singleton_rounds: Option<usize>,
    /// Root for cached estimators (default: <out>/cache).
    #[arg(long, env = "ASV_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    data: Option<PathBuf>,
    synthetic: Option<String>,
    n: Option<usize>,
    target: Option<String>,
    features: Option<Vec<String>>,
    grouping: Option<PathBuf>,
    dag: Option<PathBuf>,
    modes: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    ordering_cap: Option<usize>,
    component_reuse: Option<bool>,
    explain_model: Option<bool>,
    schedule: Option<String>,
    rounds: Option<usize>,
    learning_rate: Option<f64>,
    max_depth: Option<usize>,
    min_samples_leaf: Option<usize>,
    early_stopping: Option<usize>,
    singleton_rounds: Option<usize>,
    cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic { kind: SyntheticKind, n: usize },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub source: DataSource,
    pub target: Option<String>,
    pub features: Option<Vec<String>>,
    pub grouping: Option<PathBuf>,
    pub dag: Option<PathBuf>,
    pub modes: Vec<ModelMode>,
    pub seed: u64,
    pub out: PathBuf,
    pub ordering_cap: usize,
    pub explain_model: bool,
    pub models: ModelConfig,
    pub cache_dir: PathBuf,
}

fn read_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg: FileConfig = serde_json::from_str(&text).map_err(|e| {
        CliError::Config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut cfg.data, &mut cfg.grouping, &mut cfg.dag, &mut cfg.out, &mut cfg.cache_dir]
        .into_iter()
        .flatten()
    {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

pub fn parse_modes(s: &str) -> Result<Vec<ModelMode>, CliError> {
    match s {
        "both" => Ok(vec![ModelMode::Unrestricted, ModelMode::Gam]),
        "unrestricted" => Ok(vec![ModelMode::Unrestricted]),
        "gam" => Ok(vec![ModelMode::Gam]),
        other => Err(CliError::Config(format!(
            "mode must be unrestricted, gam or both, got `{other}`"
        ))),
    }
}

fn require_file(p: &Path, what: &str) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} not found: {}", p.display())))
    }
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let file = match &self.config {
            Some(p) => read_file_config(p)?,
            None => FileConfig::default(),
        };
        macro_rules! pick {
            ($f:ident) => {
                self.$f.clone().or(file.$f.clone())
            };
        }
        let data: Option<PathBuf> = pick!(data);
        let synthetic: Option<String> = pick!(synthetic);
        let source = match (data, synthetic) {
            (Some(_), Some(_)) => return Err(CliError::Config("give either --data or --synthetic, not both".into())),
            (None, None) => return Err(CliError::Config("no data source: pass --data or --synthetic".into())),
            (Some(p), None) => {
                require_file(&p, "data file")?;
                DataSource::Csv(p)
            }
            (None, Some(s)) => DataSource::Synthetic {
                kind: s.parse().map_err(|e: asv_core::Error| CliError::Config(e.to_string()))?,
                n: pick!(n).unwrap_or(DEFAULT_SYNTHETIC_ROWS),
            },
        };
        let target: Option<String> = pick!(target);
        if matches!(source, DataSource::Csv(_)) && target.is_none() {
            return Err(CliError::Config("--target is required with --data".into()));
        }
        let grouping: Option<PathBuf> = pick!(grouping);
        if let Some(p) = &grouping {
            require_file(p, "grouping file")?;
        }
        let dag: Option<PathBuf> = pick!(dag);
        if let Some(p) = &dag {
            require_file(p, "DAG file")?;
        }
        let modes = parse_modes(&pick!(modes).unwrap_or_else(|| "both".into()))?;

        let out: PathBuf = pick!(out).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        fs::create_dir_all(&out)
            .map_err(|e| CliError::Config(format!("output directory {} not writable: {e}", out.display())))?;
        let probe = out.join(".asv-write-probe");
        fs::write(&probe, b"")
            .and_then(|_| fs::remove_file(&probe))
            .map_err(|e| CliError::Config(format!("output directory {} not writable: {e}", out.display())))?;
        let cache_dir = pick!(cache_dir).unwrap_or_else(|| out.join("cache"));

        let mut models = ModelConfig::default();
        let schedule = match pick!(schedule).as_deref() {
            None | Some("greedy") => GroupSchedule::Greedy,
            Some("cyclic") => GroupSchedule::Cyclic,
            Some(other) => return Err(CliError::Config(format!("schedule must be greedy or cyclic, got `{other}`"))),
        };
        for p in [&mut models.unrestricted, &mut models.gam] {
            if let Some(v) = pick!(rounds) {
                p.num_rounds = v;
            }
            if let Some(v) = pick!(learning_rate) {
                p.learning_rate = v;
            }
            if let Some(v) = pick!(max_depth) {
                p.max_depth = v;
            }
            if let Some(v) = pick!(min_samples_leaf) {
                p.min_samples_leaf = v;
            }
            if let Some(v) = pick!(early_stopping) {
                p.early_stopping_rounds = v;
            }
        }
        models.gam.group_schedule = schedule;
        if let Some(r) = pick!(singleton_rounds) {
            models.singleton_override = Some(BoostParams { num_rounds: r, ..models.gam });
        }
        models.component_reuse = pick!(component_reuse).unwrap_or(false);
        for p in [Some(&models.unrestricted), Some(&models.gam), models.singleton_override.as_ref()]
            .into_iter()
            .flatten()
        {
            p.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }

        Ok(RunConfig {
            source,
            target,
            features: pick!(features),
            grouping,
            dag,
            modes,
            seed: pick!(seed).unwrap_or(0),
            out,
            ordering_cap: pick!(ordering_cap).unwrap_or(2000),
            explain_model: pick!(explain_model).unwrap_or(false),
            models,
            cache_dir,
        })
    }
}

/// Loaded data, grouping and store for one run.
pub struct Prepared {
    pub config: RunConfig,
    pub splits: Splits,
    pub grouping: FeatureGrouping,
    pub store: CoalitionStore,
    pub target_id: String,
    pub dropped_rows: usize,
}

impl Prepared {
    pub fn load(config: RunConfig) -> Result<Self, CliError> {
        let (dataset, dropped_rows) = match &config.source {
            DataSource::Csv(path) => {
                let target = config.target.as_deref().expect("validated");
                let load = load_csv(path, target, config.features.as_deref())?;
                (load.dataset, load.dropped_rows)
            }
            DataSource::Synthetic { kind, n } => {
                let d = generate_synthetic(&SyntheticSpec { kind: *kind, n: *n, seed: config.seed })?;
                (d, 0)
            }
        };
        if dropped_rows > 0 {
            log::warn!("dropped {dropped_rows} rows with missing or non-numeric values");
        }
        let splits = split(&dataset, &SplitSpec::standard(config.seed))?;
        let grouping = match &config.grouping {
            Some(p) => FeatureGrouping::load(p, &splits.train)?,
            None => FeatureGrouping::singletons(&splits.train),
        };
        let store = CoalitionStore::with_dir(config.cache_dir.join(run_name(&splits, &grouping, DATASET_TARGET)))?;
        let mut prepared = Prepared {
            config,
            splits,
            grouping,
            store,
            target_id: DATASET_TARGET.to_string(),
            dropped_rows,
        };
        if prepared.config.explain_model {
            prepared = prepared.explain_model()?;
        }
        Ok(prepared)
    }

    /// Swap the target for the unrestricted full model's predictions.
    fn explain_model(self) -> Result<Self, CliError> {
        let wb = self.workbench();
        let full = wb.key((0..self.grouping.len()).collect(), ModelMode::Unrestricted);
        let model = wb.train(&full)?;
        let splits = asv_core::attribution::self_explanation_target(&model.ensemble, &self.splits)?;
        let store = CoalitionStore::with_dir(
            self.config
                .cache_dir
                .join(run_name(&splits, &self.grouping, MODEL_OUTPUT_TARGET)),
        )?;
        Ok(Prepared {
            splits,
            store,
            target_id: MODEL_OUTPUT_TARGET.to_string(),
            ..self
        })
    }

    pub fn workbench(&self) -> Workbench<'_> {
        self.workbench_for(&self.grouping, &self.store)
    }

    pub fn workbench_for<'a>(&'a self, grouping: &'a FeatureGrouping, store: &'a CoalitionStore) -> Workbench<'a> {
        Workbench {
            splits: &self.splits,
            grouping,
            store,
            config: &self.config.models,
            target_id: &self.target_id,
        }
    }

    /// A store for another grouping of the same data, under the same cache root.
    pub fn store_for(&self, grouping: &FeatureGrouping) -> Result<CoalitionStore, CliError> {
        Ok(CoalitionStore::with_dir(
            self.config
                .cache_dir
                .join(run_name(&self.splits, grouping, &self.target_id)),
        )?)
    }

    pub fn dag(&self) -> Result<CausalDag, CliError> {
        match &self.config.dag {
            Some(p) => load_dag(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display()))),
            None => Err(CliError::Config("a DAG is required: pass --dag".into())),
        }
    }

    /// The configured DAG, or the unordered graph over groups when none is given.
    pub fn dag_or_unordered(&self) -> Result<CausalDag, CliError> {
        match &self.config.dag {
            Some(_) => self.dag(),
            None => Ok(CausalDag::unordered(
                self.grouping.names().iter().map(|s| s.to_string()).collect(),
            )),
        }
    }

    pub fn group_id(&self, name: &str) -> Result<usize, CliError> {
        self.grouping
            .index_of(name)
            .ok_or_else(|| CliError::Config(format!("unknown group `{name}`")))
    }

    pub fn full_key(&self, mode: ModelMode) -> CoalitionKey {
        CoalitionKey::new((0..self.grouping.len()).collect(), mode, self.target_id.as_str())
    }
}
