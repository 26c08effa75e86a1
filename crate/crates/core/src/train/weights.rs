//! Trainable loss weights and the combined objective.

use crate::nn::Param;
use crate::{Error, Result, Tensor};

pub const ETA1_FLOOR: f64 = 1e-3;
pub const ETA_RATIO_FLOOR: f64 = 0.25;

/// `eta1` weighs the classification loss, `eta2` the alignment loss.
/// Stored as one two-element parameter so the optimizer treats them like
/// model weights.
#[derive(Debug, Clone)]
pub struct LossWeights {
    pub param: Param,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::new(1.0, 1.0)
    }
}

impl LossWeights {
    pub fn new(eta1: f32, eta2: f32) -> Self {
        Self {
            param: Param::new(Tensor::new(vec![2], vec![eta1, eta2]).expect("two values")),
        }
    }

    pub fn eta1(&self) -> f64 {
        self.param.value.data()[0] as f64
    }

    pub fn eta2(&self) -> f64 {
        self.param.value.data()[1] as f64
    }

    pub fn set(&mut self, eta1: f64, eta2: f64) {
        self.param.value.data_mut().copy_from_slice(&[eta1 as f32, eta2 as f32]);
    }

    pub fn satisfies_floors(&self) -> bool {
        self.eta1() >= ETA1_FLOOR as f32 as f64 && self.eta2() >= (ETA_RATIO_FLOOR * self.eta1()) as f32 as f64
    }
}

/// Value and partial derivatives of the weighted objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    /// `1 / (2 eta1^2)`, the factor on the classification loss.
    pub ce_scale: f64,
    /// `1 / (2 eta2^2)`, the factor on the alignment loss.
    pub da_scale: f64,
    pub d_eta1: f64,
    pub d_eta2: f64,
}

/// `l_ce / (2 eta1^2) + l_da / (2 eta2^2) + ln|eta1 eta2|`.
pub fn total_loss(l_ce: f64, l_da: f64, eta1: f64, eta2: f64) -> Result<TotalLoss> {
    if !(eta1 > 0.0 && eta2 > 0.0) {
        return Err(Error::State(format!("loss weights must be positive (eta1 = {eta1}, eta2 = {eta2})")));
    }
    let ce_scale = 0.5 / (eta1 * eta1);
    let da_scale = 0.5 / (eta2 * eta2);
    Ok(TotalLoss {
        value: ce_scale * l_ce + da_scale * l_da + (eta1 * eta2).abs().ln(),
        ce_scale,
        da_scale,
        d_eta1: -l_ce / eta1.powi(3) + 1.0 / eta1,
        d_eta2: -l_da / eta2.powi(3) + 1.0 / eta2,
    })
}

/// `eta1 <- max(eta1, 1e-3)`, then `eta2 <- max(eta2, 0.25 eta1)`.
pub fn clip_etas(w: &mut LossWeights) {
    let e1 = w.eta1().max(ETA1_FLOOR);
    let e2 = w.eta2().max(ETA_RATIO_FLOOR * e1);
    w.set(e1, e2);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_weights() {
        let t = total_loss(1.0, 0.5, 1.0, 1.0).unwrap();
        assert_eq!(t.value, 0.75);
        assert_eq!(t.d_eta1, 0.0);
        assert_eq!(t.d_eta2, 0.5);
        assert!(total_loss(1.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn clipping() {
        let mut w = LossWeights::new(1e-4, 1.0);
        clip_etas(&mut w);
        assert!((w.eta1() - 1e-3).abs() < 1e-9);
        let mut w = LossWeights::new(1.0, 0.1);
        clip_etas(&mut w);
        assert_eq!(w.eta2(), 0.25);
        let mut w = LossWeights::new(2.0, 1.0);
        clip_etas(&mut w);
        assert_eq!((w.eta1(), w.eta2()), (2.0, 1.0));
        assert!(w.satisfies_floors());
    }
}
