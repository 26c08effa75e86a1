//! Sequential classifier with a latent tap.

use super::layers::{Layer, Param};
use crate::rng::Rng;
use crate::{Error, Result, Tensor};

/// Ordered layers ending in a logit head. The output of layer `tap` is
/// returned alongside the logits as the latent representation.
#[derive(Debug)]
pub struct Model {
    pub layers: Vec<Layer>,
    pub tap: usize,
    pub num_classes: usize,
    /// `(C, H, W)` the model was built for.
    pub input_shape: [usize; 3],
}

impl Model {
    pub fn new(layers: Vec<Layer>, tap: usize, num_classes: usize, input_shape: [usize; 3]) -> Result<Self> {
        if tap >= layers.len() {
            return Err(Error::Config(format!(
                "latent tap {tap} out of range for {} layers",
                layers.len()
            )));
        }
        Ok(Self {
            layers,
            tap,
            num_classes,
            input_shape,
        })
    }

    /// Returns `(logits, latents)`.
    pub fn forward(&mut self, x: Tensor, train: bool, rng: &mut Rng) -> Result<(Tensor, Tensor)> {
        if x.ndim() != 4 || x.shape()[1..] != self.input_shape {
            return Err(Error::Config(format!(
                "model built for inputs (B, {}, {}, {}), got {:?}",
                self.input_shape[0],
                self.input_shape[1],
                self.input_shape[2],
                x.shape()
            )));
        }
        let mut h = x;
        let mut latents = None;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(h, train, rng)?;
            if !h.is_finite() {
                return Err(Error::NonFinite {
                    layer: format!("{i}:{}", layer.name()),
                });
            }
            if i == self.tap {
                latents = Some(h.clone());
            }
        }
        let latents = latents.expect("tap index validated at construction");
        Ok((h, latents))
    }

    /// Backpropagates `grad_logits`, adding `grad_latents` (if any) at the
    /// tap. Parameter gradients accumulate into each [`Param::grad`].
    pub fn backward(&mut self, grad_logits: Tensor, grad_latents: Option<&Tensor>) -> Result<()> {
        let mut g = grad_logits;
        for i in (0..self.layers.len()).rev() {
            if i == self.tap {
                if let Some(gl) = grad_latents {
                    if gl.shape() != g.shape() {
                        return Err(Error::Shape(format!(
                            "latent grad {:?} does not match tap output {:?}",
                            gl.shape(),
                            g.shape()
                        )));
                    }
                    g.data_mut().iter_mut().zip(gl.data()).for_each(|(a, b)| *a += b);
                }
            }
            g = self.layers[i].backward(g, i > 0)?;
        }
        Ok(())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f32>> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// All parameter values followed by all buffers, flattened.
    pub fn state_vector(&mut self) -> Vec<f32> {
        let mut out: Vec<f32> = self
            .params()
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect();
        for b in self.buffers_mut() {
            out.extend_from_slice(b);
        }
        out
    }

    /// Inverse of [`Model::state_vector`].
    pub fn load_state_vector(&mut self, state: &[f32]) -> Result<()> {
        let expected = self.num_params() + self.buffers_mut().iter().map(|b| b.len()).sum::<usize>();
        if state.len() != expected {
            return Err(Error::Shape(format!(
                "state vector has {} values, model needs {expected}",
                state.len()
            )));
        }
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&state[off..off + n]);
            off += n;
        }
        for b in self.buffers_mut() {
            let n = b.len();
            b.copy_from_slice(&state[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Eval-mode forward in chunks, returning `(logits, latents)` for all rows.
    pub fn predict(&mut self, x: &Tensor, chunk: usize) -> Result<(Tensor, Tensor)> {
        let mut rng = crate::rng::from_seed(0);
        let n = x.dim(0);
        let mut logits = Vec::new();
        let mut latents = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + chunk.max(1)).min(n);
            let (l, z) = self.forward(x.slice_rows(start, end), false, &mut rng)?;
            logits.push(l);
            latents.push(z);
            start = end;
        }
        if logits.is_empty() {
            return Ok((
                Tensor::zeros(&[0, self.num_classes]),
                Tensor::zeros(&[0, 0]),
            ));
        }
        Ok((
            Tensor::concat_rows(&logits.iter().collect::<Vec<_>>())?,
            Tensor::concat_rows(&latents.iter().collect::<Vec<_>>())?,
        ))
    }
}
