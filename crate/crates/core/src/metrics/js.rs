//! Jensen-Shannon divergence between latent sample sets.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pseudo-count added to every histogram bin.
pub const JS_SMOOTHING: f64 = 1e-9;
pub const JS_ESTIMATOR: &str = "per-dimension histogram mean";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JSEstimate {
    /// Mean per-dimension divergence in nats, in `[0, ln 2]`.
    pub value: f64,
    /// `sqrt(value)`.
    pub distance: f64,
    pub bins: usize,
    pub dimensions: usize,
    pub estimator: String,
}

fn kl_to_mixture(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / (0.5 * (pi + qi))).ln())
        .sum()
}

/// Divergence of two 1-D samples on shared equal-width bins spanning the
/// pooled range.
pub fn js_divergence_1d(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let hist = |xs: &[f64]| {
        let mut h = vec![JS_SMOOTHING; bins];
        for &x in xs {
            let k = if width > 0.0 { ((x - lo) / width) as usize } else { 0 };
            h[k.min(bins - 1)] += 1.0;
        }
        let total = xs.len() as f64 + bins as f64 * JS_SMOOTHING;
        h.iter_mut().for_each(|v| *v /= total);
        h
    };
    let (p, q) = (hist(a), hist(b));
    let v = 0.5 * kl_to_mixture(&p, &q) + 0.5 * kl_to_mixture(&q, &p);
    v.clamp(0.0, std::f64::consts::LN_2)
}

/// Averages [`js_divergence_1d`] over the columns of two `(n, l)` sets.
pub fn js_distance(z: &Array2<f64>, z_star: &Array2<f64>, bins: usize) -> Result<JSEstimate> {
    if z.nrows() == 0 || z_star.nrows() == 0 {
        return Err(Error::Shape("JS estimate needs non-empty sample sets".into()));
    }
    if z.ncols() != z_star.ncols() {
        return Err(Error::Shape(format!("dimension {} vs {}", z.ncols(), z_star.ncols())));
    }
    if bins == 0 {
        return Err(Error::Config("JS estimate needs at least one bin".into()));
    }
    let l = z.ncols();
    let total: f64 = (0..l)
        .map(|d| {
            let a: Vec<f64> = z.column(d).to_vec();
            let b: Vec<f64> = z_star.column(d).to_vec();
            js_divergence_1d(&a, &b, bins)
        })
        .sum();
    let value = total / l.max(1) as f64;
    Ok(JSEstimate {
        value,
        distance: value.sqrt(),
        bins,
        dimensions: l,
        estimator: JS_ESTIMATOR.to_string(),
    })
}

/// Source loss minus JS distance, set against the observed target loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub source_loss: f64,
    pub target_loss: Option<f64>,
    pub js_distance: f64,
    pub bound: f64,
    /// Advisory only: whether `bound <= target_loss`.
    pub holds: Option<bool>,
}

pub fn js_bound_report(l_src: f64, l_tgt: Option<f64>, js: &JSEstimate) -> BoundReport {
    let bound = l_src - js.distance;
    BoundReport {
        source_loss: l_src,
        target_loss: l_tgt,
        js_distance: js.distance,
        bound,
        holds: l_tgt.map(|t| bound <= t),
    }
}
