//! Experiment harness: configs and presets, ground-truth metrics, runs and
//! their CSV/JSON artifacts.

pub mod config;
pub mod metrics;
pub mod report;
pub mod run;

pub use config::{load_config, parse_config, preset, RunConfig, PRESETS};
pub use metrics::{accuracy, selection_metrics, SelectionMetrics};
pub use report::{compare_runs, count_ratio, EpochRecord, FinalMetrics, RunDelta, RunReport, SCHEMA_VERSION};
pub use run::{
    build_datasets, execute, execute_on, load_report, output_root, run_to_dir, Datasets, RunArtifacts, RunOptions,
    Session, OUTPUT_ROOT_ENV,
};
