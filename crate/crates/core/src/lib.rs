//! Numerical laboratory for environmental-branch dynamics of a small quantum
//! system coupled to a chaotic environment.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod branch;
pub mod error;
pub mod eth;
pub mod expansion;
pub mod harness;
pub mod linalg;
pub mod master;
pub mod model;
pub mod random;
pub mod stats;

pub use branch::{BranchModel, BranchSet, EnergyWindow, EthSplit, Propagator};
pub use error::{Error, Result, Stage};
pub use eth::{EthParams, EthStatistics};
pub use expansion::{FluctuationReport, GTermLedger, YOperatorSet};
pub use harness::{ComparisonReport, ExperimentConfig};
pub use linalg::{c64, CMat, RMat, SpectralData};
pub use master::{DephasingSpec, LindbladSpec};
pub use model::{EnvironmentSpec, SystemSpec, TotalModel};
