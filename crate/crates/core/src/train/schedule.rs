//! Training schedule and alignment method.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How source and target latents are aligned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DaMethod {
    /// Cross-entropy only.
    None,
    /// Sinkhorn divergence at the dynamic regularization, trainable weights.
    Sidda,
    /// Squared Gaussian MMD with fixed width, trainable weights.
    Mmd { eps: f64 },
    /// Sinkhorn divergence at a vanishing fixed regularization, trainable weights.
    Wasserstein,
    /// `ce * L_CE + da * L_DA` with the dynamic Sinkhorn divergence.
    Fixed { ce: f64, da: f64 },
}

pub const MMD_EPS: f64 = 0.05;
pub const WASSERSTEIN_SIGMA: f64 = 1e-12;

impl DaMethod {
    pub fn is_da(&self) -> bool {
        !matches!(self, DaMethod::None)
    }

    /// Whether the loss is balanced by trainable weights.
    pub fn uses_weights(&self) -> bool {
        matches!(self, DaMethod::Sidda | DaMethod::Mmd { .. } | DaMethod::Wasserstein)
    }

    pub fn name(&self) -> String {
        match self {
            DaMethod::None => "none".into(),
            DaMethod::Sidda => "sidda".into(),
            DaMethod::Mmd { .. } => "mmd".into(),
            DaMethod::Wasserstein => "wasserstein".into(),
            DaMethod::Fixed { ce, da } => format!("fixed({ce},{da})"),
        }
    }

    /// Parses `none`, `sidda`, `mmd`, `wasserstein` or `fixed(c_ce,c_da)`.
    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "none" => return Ok(DaMethod::None),
            "sidda" => return Ok(DaMethod::Sidda),
            "mmd" => return Ok(DaMethod::Mmd { eps: MMD_EPS }),
            "wasserstein" => return Ok(DaMethod::Wasserstein),
            _ => {}
        }
        let bad = || Error::Config(format!("unknown DA method {s:?}"));
        let inner = t
            .strip_prefix("fixed(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(bad)?;
        let (a, b) = inner.split_once(',').ok_or_else(bad)?;
        let ce: f64 = a.trim().parse().map_err(|_| bad())?;
        let da: f64 = b.trim().parse().map_err(|_| bad())?;
        if !(ce >= 0.0 && da >= 0.0) {
            return Err(Error::Config(format!("fixed coefficients must be non-negative in {s:?}")));
        }
        Ok(DaMethod::Fixed { ce, da })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub total_epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub da_method: DaMethod,
    /// Share of each training set held out for validation.
    pub val_fraction: f64,
    pub augment: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            total_epochs: 50,
            warmup_epochs: 10,
            batch_size: 128,
            base_lr: 1e-2,
            weight_decay: 1e-3,
            grad_clip: 10.0,
            da_method: DaMethod::Sidda,
            val_fraction: 0.2,
            augment: true,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 {
            return Err(Error::Config("total_epochs must be at least 1".into()));
        }
        if self.warmup_epochs >= self.total_epochs {
            return Err(Error::Config(format!(
                "warmup_epochs ({}) must be below total_epochs ({})",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.base_lr > 0.0) || !(self.weight_decay >= 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::Config("learning rate and clip must be positive, weight decay non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) || self.val_fraction == 0.0 {
            return Err(Error::Config(format!("val_fraction must be in (0, 1), got {}", self.val_fraction)));
        }
        if let DaMethod::Mmd { eps } = self.da_method {
            if !(eps > 0.0) {
                return Err(Error::Config(format!("mmd eps must be positive, got {eps}")));
            }
        }
        Ok(())
    }

    /// Whether alignment is active in `epoch`.
    pub fn da_active(&self, epoch: usize) -> bool {
        self.da_method.is_da() && epoch >= self.warmup_epochs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_methods() {
        assert_eq!(DaMethod::parse("SIDDA").unwrap(), DaMethod::Sidda);
        assert_eq!(DaMethod::parse("mmd").unwrap(), DaMethod::Mmd { eps: 0.05 });
        assert_eq!(DaMethod::parse("fixed(1, 10)").unwrap(), DaMethod::Fixed { ce: 1.0, da: 10.0 });
        assert!(DaMethod::parse("fixed(1)").is_err());
        assert!(DaMethod::parse("sinkhorn").is_err());
        assert_eq!(DaMethod::parse(&DaMethod::Fixed { ce: 10.0, da: 1.0 }.name()).unwrap(), DaMethod::Fixed { ce: 10.0, da: 1.0 });
    }

    #[test]
    fn schedule_validation() {
        let mut s = TrainSchedule::default();
        assert!(s.validate().is_ok());
        s.warmup_epochs = 50;
        assert!(s.validate().is_err());
    }
}
