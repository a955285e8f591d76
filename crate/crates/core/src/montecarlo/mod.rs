//! Replica orchestration and the named experiments.

pub mod config;
pub mod constants;
mod experiments;
pub mod report;

pub use config::{ExperimentConfig, ExperimentId};
pub use experiments::{
    lambda_discretization, run_experiment, run_lemma1, run_lemma3, run_theorem1_chain, run_theorem2,
    run_theorem3_bridge, run_wald_hitting,
};
pub use report::{summarize, FitPoint, RateFit, Report, SummaryTable};

use thiserror::Error;

use crate::coupling::CouplingError;
use crate::flows::FlowError;
use crate::kernels::KernelError;
use crate::transport::TransportError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    /// Malformed or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// A hypothesis of the result being checked does not hold.
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Flow(FlowError),
    #[error(transparent)]
    Coupling(CouplingError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

impl From<FlowError> for ExperimentError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::GapNotAboveEpsilon { .. } => ExperimentError::Hypothesis(e.to_string()),
            FlowError::InvalidGrid { .. } | FlowError::InvalidEpsilon(_) | FlowError::Unsorted(_) => {
                ExperimentError::Config(e.to_string())
            }
            other => ExperimentError::Flow(other),
        }
    }
}

impl From<CouplingError> for ExperimentError {
    fn from(e: CouplingError) -> Self {
        match e {
            CouplingError::Flow(f) => f.into(),
            CouplingError::InvalidArgument(m) => ExperimentError::Config(m),
            other => ExperimentError::Coupling(other),
        }
    }
}

impl ExperimentError {
    /// Process exit code: 2 for configuration errors, 3 for hypothesis
    /// violations, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Hypothesis(_) => 3,
            _ => 1,
        }
    }
}
