//! Experiment harness: config parsing, two-stage training runs, JSON-lines
//! reports, checkpoints and report comparison.

mod checkpoint;
mod compare;
mod config;
mod report;
mod run;

pub use checkpoint::{load_checkpoint, restore_into, save_checkpoint};
pub use compare::{compare_runs, Comparison, ComparisonRow};
pub use config::{parse_config, LandscapeOptions, LossKind, ModelKind, ModelOptions, RunConfig};
pub use report::{weights_hash, EpochRecord, GroupAccuracy, LandscapeSummary, RunReport, RunStatus, Summary};
pub use run::{
    class_split, evaluate, landscape_for, run_experiment, stage_weights, train, training_objective,
    write_landscape_csv, TrainedRun, CHECKPOINT_FILE, REPORT_FILE,
};
