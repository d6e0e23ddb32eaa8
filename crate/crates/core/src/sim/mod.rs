//! Stochastic particle transport: process steps, a full extraction
//! iteration, extinction experiments, calibration and CSV reports.

mod bench;
mod calibrate;
mod extinction;
mod iteration;
pub mod kernel;
mod params;
pub mod report;

use thiserror::Error;

use crate::model::{ModelError, SieveId};

pub use bench::{EggLedger, Inventory, Workbench};
pub use calibrate::{calibrate, CalibrationResult, Targets};
pub use extinction::{
    run_extinction, run_on_samples, ExtinctionPlan, IterationStats, Method, RecoveryReport,
    ReplicateResult, SampleResult,
};
pub use iteration::{run_iteration, IterationOutcome, IterationProtocol};
pub use params::{ProcessParams, StrayLosses};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0} is not part of the sieve kit")]
    UnknownSieve(SieveId),
    #[error("conservation violated: {0}")]
    Conservation(String),
    #[error("invalid experiment plan: {0}")]
    Plan(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
}
