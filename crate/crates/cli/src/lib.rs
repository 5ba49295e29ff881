//! The `asv` command line.

pub mod commands;
pub mod config;
pub mod error;
pub mod svg;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{GroupingChoices, VerifyOptions, DEFAULT_TRAINING_BUDGET};
use config::{Prepared, RunArgs};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "asv", version, about = "Causality-aware variance attribution over feature groups")]
pub struct Cli {
    /// Worker threads for estimator training (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Global attribution reports for each mode.
    Attribute {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Pairwise interaction scan with heatmap and histogram.
    Interactions {
        #[command(flatten)]
        run: RunArgs,
        /// `all` or comma-separated `a:b` pairs of group names.
        #[arg(long, default_value = "all")]
        pairs: String,
        /// Maximum number of estimators to train (cache hits are free).
        #[arg(long, default_value_t = DEFAULT_TRAINING_BUDGET)]
        budget: usize,
    },
    /// Unexplained fraction of variance for several groupings.
    RemainingVariance {
        #[command(flatten)]
        run: RunArgs,
        /// Additional grouping files, comma-separated.
        #[arg(long, value_delimiter = ',')]
        groupings: Vec<PathBuf>,
        /// Random groupings with these group sizes, comma-separated.
        #[arg(long, value_delimiter = ',')]
        random_groups: Vec<usize>,
        /// Include the one-feature-per-group gam.
        #[arg(long)]
        features_as_groups: bool,
    },
    /// Runs every verifier and writes verdicts.json.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        /// Pairs for the theorem checks: `all` or `a:b,...`.
        #[arg(long, default_value = "all")]
        pairs: String,
        /// Pairs known to be independent, checked against the additivity bound.
        #[arg(long, default_value = "")]
        independent: String,
        /// Anomaly slack as a fraction of sigma2(T).
        #[arg(long, default_value_t = asv_core::attribution::DEFAULT_SLACK_FRACTION)]
        slack: f64,
    },
    /// Counts orderings and distinct prefixes of a DAG file.
    Count {
        dag: PathBuf,
        #[arg(long, default_value_t = asv_core::ordering::DEFAULT_COUNT_LIMIT)]
        limit: usize,
    },
    /// Writes a synthetic example as CSV and prints its closed-form values.
    Synth {
        #[arg(long)]
        example: String,
        #[arg(long, default_value_t = config::DEFAULT_SYNTHETIC_ROWS)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn prepare(run: &RunArgs) -> Result<Prepared, CliError> {
    Prepared::load(run.resolve()?)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size thread pool: {e}")))?;
    }
    match cli.command {
        Command::Attribute { run } => commands::attribute(&prepare(&run)?),
        Command::Interactions { run, pairs, budget } => commands::interactions(&prepare(&run)?, &pairs, budget),
        Command::RemainingVariance {
            run,
            groupings,
            random_groups,
            features_as_groups,
        } => commands::remaining_variance(
            &prepare(&run)?,
            &GroupingChoices {
                files: groupings,
                random_sizes: random_groups,
                features_as_groups,
            },
        ),
        Command::Verify {
            run,
            pairs,
            independent,
            slack,
        } => commands::verify(
            &prepare(&run)?,
            &VerifyOptions {
                pairs,
                independent,
                slack,
            },
        ),
        Command::Count { dag, limit } => commands::count(&dag, limit),
        Command::Synth { example, n, seed, out } => commands::synth(&example, n, seed, &out),
    }
}
