//! Experiment configs, metrics, oracle suite and artifact writing.

mod config;
mod experiment;
mod manifest;
mod metrics;
pub mod oracles;

pub use config::{
    derive_seed, DataSpec, ExperimentConfig, ExperimentName, ModelSpec, MpcSpec, Plant, PlantSpec, PredictorKind,
    ReferenceSpec, ScenarioSpec, SignalSpec, TeacherStudentSpec,
};
pub use experiment::{
    experiment_dir, generate_data, run_experiment, settle_step, train_model, ClosedLoopSummary, ExperimentReport,
    TrainingSummary,
};
pub use manifest::{sha256_file, sha256_hex, Manifest, SolveTiming};
pub use metrics::{aggregate, compute_metrics, Aggregate, RunMetrics, Stat};
pub use oracles::{run_oracles, OracleOutcome};
