//! Config for `simulate` and `couple`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CliError;
use crate::flows::{FlowKind, FlowModel, FlowPath, GluedFlowParams, Recording, TimeGrid};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::montecarlo::config::{json_hash, layer_json};
use crate::seeding::stream_seed;

/// One flow realization. `epsilon` is the gluing distance of the glued flow
/// and of the coupling; `weights` are the coupling cost weights (uniform
/// when absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub flow: FlowKind,
    pub kernel: KernelSpec,
    pub initial_points: Vec<f64>,
    pub epsilon: f64,
    pub dt: f64,
    pub horizon: f64,
    pub bridge_correction: bool,
    pub master_seed: u64,
    pub weights: Option<Vec<f64>>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            flow: FlowKind::Harris,
            kernel: KernelSpec { family: KernelFamily::Triangle, d_gamma: 0.02 },
            initial_points: vec![0.0, 0.5],
            epsilon: 0.01,
            dt: 1e-3,
            horizon: 1.0,
            bridge_correction: true,
            master_seed: 20240501,
            weights: None,
        }
    }
}

impl FlowConfig {
    pub fn resolve(file: Option<&Value>, overrides: &[String]) -> Result<Self, CliError> {
        let cfg: Self = layer_json(&Self::default(), file, overrides, &[], &["kernel"]).map_err(CliError::Usage)?;
        if cfg.initial_points.is_empty() {
            return Err(CliError::Usage("initial_points must not be empty".into()));
        }
        if cfg.initial_points.iter().any(|x| !x.is_finite()) {
            return Err(CliError::Usage("initial_points must be finite".into()));
        }
        Ok(cfg)
    }

    pub fn hash(&self) -> String {
        json_hash(self)
    }

    /// Seed of the simulated path; shared by `simulate` and `couple` so both
    /// see the same realization.
    pub fn path_seed(&self) -> u64 {
        stream_seed(self.master_seed, "cli/path")
    }

    pub fn model(&self) -> Result<FlowModel<f64>, CliError> {
        Ok(match self.flow {
            FlowKind::Harris => {
                FlowModel::Harris(self.kernel.build().map_err(|e| CliError::Usage(e.to_string()))?)
            }
            FlowKind::Arratia => FlowModel::Arratia { bridge_correction: self.bridge_correction },
            FlowKind::Glued => FlowModel::Glued(GluedFlowParams::new(self.epsilon)?.with_bridge_correction(self.bridge_correction)),
            FlowKind::Identity => FlowModel::Identity,
        })
    }

    pub fn simulate(&self, recording: Recording) -> Result<FlowPath<f64>, CliError> {
        let grid = TimeGrid::new(self.dt, self.horizon)?;
        Ok(self.model()?.simulate(&self.initial_points, &grid, self.path_seed(), recording)?)
    }

    pub fn coupling_weights(&self, n: usize) -> Result<Vec<f64>, CliError> {
        match &self.weights {
            None => Ok(vec![1.0 / n as f64; n]),
            Some(w) if w.len() == n => Ok(w.clone()),
            Some(w) => Err(CliError::Usage(format!("weights has {} entries, expected {n}", w.len()))),
        }
    }
}
