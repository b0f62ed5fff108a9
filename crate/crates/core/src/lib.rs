//! Federated contribution evaluation with gradient-coalition Shapley values
//! and a dynamically pruned validation set.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: a small softmax classifier, local training, FedAvg
//!   reconstruction of coalition models and per-sample evaluation;
//! - [`data`]: synthetic blobs, CSV loading, client partitioning and noise;
//! - [`ledger`]: per-sample correctness/confidence history across rounds;
//! - [`pruner`]: easy/hard based prune plans, EE/ET schedules and the
//!   accuracy correction for pruned evaluations;
//! - [`shapley`]: utility tables, exact Shapley values, accumulation;
//! - [`metrics`]: distances between contribution vectors, time saving;
//! - [`experiment`]: the seeded two-pipeline experiment runner and reports.

pub mod coalition;
pub mod data;
pub mod error;
pub mod experiment;
pub mod ledger;
pub mod metrics;
pub mod model;
pub mod pruner;
pub mod seed;
pub mod shapley;

pub use coalition::Coalition;
pub use data::{LabeledDataset, PartitionKind, PartitionScheme};
pub use error::{DpvsError, Result};
pub use experiment::{
    emit_reports, run_experiment, ExperimentConfig, ExperimentResult, MetricsFile, PipelineMode,
};
pub use ledger::{LedgerParams, ValidationLedger};
pub use metrics::MetricReport;
pub use model::{EvalRecord, GradientUpdate, Layout, ModelParams, TrainOptions};
pub use pruner::{PruneConfig, PrunePlan, PruneStrategy, Schedule, Timing, WeightTransform};
pub use shapley::{ContributionVector, UtilityTable};
