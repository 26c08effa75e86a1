//! Selected model state.

use serde::{Deserialize, Serialize};

use crate::equivariant::{build_model, ModelSpec};
use crate::nn::Model;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub seed: u64,
    /// Epoch whose weights are stored.
    pub epoch: usize,
    /// Selection criterion at that epoch.
    pub criterion: f64,
    pub eta: Option<[f64; 2]>,
    pub sigma_trace: Vec<f64>,
    /// Parameters then buffers, as produced by [`Model::state_vector`].
    #[serde(skip)]
    pub state: Vec<f32>,
}

impl Checkpoint {
    /// Rebuilds the network and loads the stored state.
    pub fn model(&self) -> Result<Model> {
        let mut m = build_model(&self.spec, 0)?;
        m.load_state_vector(&self.state)?;
        Ok(m)
    }
}
