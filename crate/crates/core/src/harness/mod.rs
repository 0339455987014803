//! Experiment harness: configuration, checkpoints, trials and CSV output.

pub mod checkpoint;
pub mod config;
pub mod records;
pub mod report;
pub mod scenario;

pub use checkpoint::Checkpoint;
pub use config::{ExperimentConfig, Scenario, TrialFault};
pub use records::{emit_csv, parse_csv, read_csv, Phase, RunRecord, Variant, CSV_HEADER};
pub use scenario::{build_complement, run_adaptation_trial, run_pretrain, run_scenario};
