//! Experiment harness: configuration, training loop, metrics and the three
//! desk-scale studies, plus the verification suite.

pub mod config;
pub mod metrics;
pub mod studies;
pub mod train;
pub mod verify;

pub use config::{DatasetKind, ExperimentConfig, ExperimentKind, SelectionRule, DATA_DIR_ENV};
pub use metrics::{MetricsLog, MetricsRow};
pub use studies::{
    prepare_data, run_balance_study, run_optimizer_compare, run_train, run_width_sweep, BalanceReport, CompareReport,
    WidthSweepReport,
};
pub use train::{train, PreparedData, RunOutcome, RunSpec};
pub use verify::{run_verify, VerifyOptions, VerifyReport};
