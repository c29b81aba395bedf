//! Experiment orchestration: configuration, pipeline, comparison, sweeps and
//! persistence.

pub mod compare;
pub mod config;
pub mod persist;
pub mod pipeline;
pub mod sweep;

pub use compare::{compare_trajectories, trace_distance};
pub use config::ExperimentConfig;
pub use persist::{ArtifactMeta, SCHEMA_VERSION};
pub use pipeline::{prepare, run_dephasing, run_pipeline, ComparisonReport, DephasingReport, PipelineOutput, Prepared};
pub use sweep::{sweep, SweepKey, SweepSummary};
