//! AdamW, global-norm gradient clipping and the step learning-rate schedule.

use super::layers::Param;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

/// AdamW with decoupled weight decay. Parameters are identified by their
/// position in the slice passed to [`AdamW::step`]; slots are created on
/// first use, so parameters may be appended later (e.g. loss weights that
/// join after warm-up).
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    slots: Vec<Slot>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            slots: Vec::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Number of updates applied to the parameter at `index`.
    pub fn steps(&self, index: usize) -> u64 {
        self.slots.get(index).map_or(0, |s| s.step)
    }

    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        for (i, p) in params.iter().enumerate() {
            if !p.grad.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for parameter {i}")));
            }
        }
        let c = self.config;
        for (i, p) in params.iter_mut().enumerate() {
            if self.slots.len() <= i {
                self.slots.push(Slot {
                    m: vec![0.0; p.value.len()],
                    v: vec![0.0; p.value.len()],
                    step: 0,
                });
            }
            let slot = &mut self.slots[i];
            if slot.m.len() != p.value.len() {
                return Err(Error::Shape(format!(
                    "parameter {i} changed size from {} to {}",
                    slot.m.len(),
                    p.value.len()
                )));
            }
            slot.step += 1;
            let bc1 = 1.0 - c.beta1.powi(slot.step as i32);
            let bc2 = 1.0 - c.beta2.powi(slot.step as i32);
            let decay = 1.0 - c.lr * c.weight_decay;
            let grads = p.grad.data().to_vec();
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grads[j] as f64;
                slot.m[j] = c.beta1 * slot.m[j] + (1.0 - c.beta1) * g;
                slot.v[j] = c.beta2 * slot.v[j] + (1.0 - c.beta2) * g * g;
                let mhat = slot.m[j] / bc1;
                let vhat = slot.v[j] / bc2;
                let x = *w as f64 * decay - c.lr * mhat / (vhat.sqrt() + c.eps);
                *w = x as f32;
            }
        }
        Ok(())
    }
}

/// Scales all gradients by `max_norm / norm` when their joint L2 norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_grad_norm(params: &mut [&mut Param], max_norm: f64) -> f64 {
    let sq: f64 = params
        .iter()
        .flat_map(|p| p.grad.data().iter())
        .map(|&g| (g as f64) * (g as f64))
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for p in params.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = (*g as f64 * s) as f32);
        }
    }
    norm
}

/// Global L2 norm of the gradients.
pub fn global_grad_norm(params: &[&Param]) -> f64 {
    params
        .iter()
        .flat_map(|p| p.grad.data().iter())
        .map(|&g| (g as f64) * (g as f64))
        .sum::<f64>()
        .sqrt()
}

/// Learning rate for `epoch`: `base`, then x0.1 from `T/3` and x0.01 from
/// `2*(T/3)` (integer division).
pub fn lr_schedule(epoch: usize, total_epochs: usize, base_lr: f64) -> f64 {
    let third = total_epochs / 3;
    if third == 0 {
        return base_lr;
    }
    if epoch >= 2 * third {
        base_lr * 0.01
    } else if epoch >= third {
        base_lr * 0.1
    } else {
        base_lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn param(v: &[f32], g: &[f32]) -> Param {
        let mut p = Param::new(Tensor::new(vec![v.len()], v.to_vec()).unwrap());
        p.grad = Tensor::new(vec![g.len()], g.to_vec()).unwrap();
        p
    }

    #[test]
    fn zero_gradient_applies_pure_decay() {
        let mut p = param(&[2.0, -4.0], &[0.0, 0.0]);
        let mut opt = AdamW::new(AdamWConfig { lr: 0.1, weight_decay: 0.5, ..Default::default() });
        opt.step(&mut [&mut p]).unwrap();
        assert_eq!(p.value.data(), &[(2.0f64 * 0.95) as f32, (-4.0f64 * 0.95) as f32]);
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut p = param(&[1.5], &[3.0]);
        let mut opt = AdamW::new(AdamWConfig { lr: 0.0, ..Default::default() });
        opt.step(&mut [&mut p]).unwrap();
        assert_eq!(p.value.data(), &[1.5]);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = param(&[1.0], &[f32::NAN]);
        let mut opt = AdamW::new(AdamWConfig::default());
        assert!(matches!(opt.step(&mut [&mut p]), Err(Error::Numeric(_))));
    }

    #[test]
    fn clipping_scales_to_max_norm() {
        let mut p = param(&[0.0, 0.0], &[30.0, 40.0]);
        let n = clip_global_grad_norm(&mut [&mut p], 10.0);
        assert_eq!(n, 50.0);
        assert_eq!(p.grad.data(), &[6.0, 8.0]);
        let mut q = param(&[0.0, 0.0], &[3.0, 4.0]);
        clip_global_grad_norm(&mut [&mut q], 10.0);
        assert_eq!(q.grad.data(), &[3.0, 4.0]);
    }

    #[test]
    fn schedule_boundaries() {
        assert_eq!(lr_schedule(0, 100, 1e-2), 1e-2);
        assert_eq!(lr_schedule(32, 100, 1e-2), 1e-2);
        assert!((lr_schedule(33, 100, 1e-2) - 1e-3).abs() < 1e-15);
        assert!((lr_schedule(66, 100, 1e-2) - 1e-4).abs() < 1e-15);
        assert_eq!(lr_schedule(15, 50, 1.0), 1.0);
        assert!((lr_schedule(16, 50, 1.0) - 0.1).abs() < 1e-15);
        assert!((lr_schedule(32, 50, 1.0) - 0.01).abs() < 1e-15);
    }
}
