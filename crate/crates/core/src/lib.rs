//! Asymmetric Shapley value attribution of target variance.
//!
//! The crate estimates conditional expectations `E[T | X_S]` (unrestricted
//! boosted trees) and restricted ones `E^r[T | X_S]` (boosted GAMs over
//! feature groups) for every coalition a causal ordering needs, and turns the
//! resulting conditional variances into local and global attributions.

pub mod attribution;
pub mod boost;
pub mod coalition;
pub mod data;
pub mod error;
pub mod ordering;
pub mod variance;

pub use attribution::{AttributionReport, AttributionRun, LocalAttribution, ValueFunctionKind};
pub use boost::{BoostParams, GroupSchedule, ModelMode, RegressionTree, TreeEnsemble, TreeNode};
pub use coalition::{CoalitionKey, CoalitionStore, Estimator, EstimatorHandle, ModelConfig, Workbench};
pub use variance::{InteractionMatrix, VarianceLedger};
pub use data::{Dataset, FeatureGrouping, Group, SplitSpec, Splits};
pub use error::{Error, Result};
pub use ordering::{CausalDag, OrderingSet};
