//! Replicated, seeded experiments and their CSV and JSON reports.

mod config;
mod report;
mod run;
mod stats;

pub use config::{
    prepare, replica_train_config, Analyses, AnyModel, DatasetSpec, ExperimentConfig, Method,
    ModelSpec, Prepared,
};
pub use report::{
    write_experiment, write_json_file, write_noise_suite, write_partial, write_sweep,
};
pub use run::{
    run_experiment, run_msharpness_sweep, run_noise_suite, ExperimentReport, ExperimentSummary,
    NoiseCell, NoiseSuiteReport, NoiseSuiteSummary, ReplicaAnalysis, RhoScore, RunFailure,
    RunRecord, SweepCell, SweepReport, SweepSummary, NOISE_METHODS,
};
pub use stats::Stat;

/// Environment variable that replaces the base seed.
pub const SEED_ENV: &str = "SHARPMIN_SEED";
