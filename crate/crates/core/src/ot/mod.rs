//! Entropy-regularized optimal transport, Sinkhorn divergences, kernel MMD
//! and the dynamic regularization rule.

mod cost;
mod divergence;
mod mmd;
mod sinkhorn;

pub use cost::{cost_matrix, pairwise_distances, PointCloud};
pub use divergence::{sinkhorn_divergence, sinkhorn_divergence_grad, Divergence, DivergenceGrad};
pub use mmd::{mmd, mmd_squared, mmd_squared_grad, Kernel};
pub use sinkhorn::{regularized_value, sinkhorn, SinkhornConfig, SinkhornState};

use crate::{Error, Result};

/// Fraction of the largest source-target distance used as regularization.
pub const SIGMA_SCALE: f64 = 0.05;
/// Lower bound on the dynamic regularization.
pub const SIGMA_FLOOR: f64 = 0.01;

/// `max(0.05 * max_ij |z_i - z*_j|, 0.01)`.
pub fn dynamic_sigma(z: &PointCloud, z_star: &PointCloud) -> Result<f64> {
    if z.is_empty() || z_star.is_empty() {
        return Err(Error::Shape("dynamic sigma of an empty batch".into()));
    }
    let d = pairwise_distances(&z.points, &z_star.points)?;
    let max = d.iter().cloned().fold(0.0, f64::max);
    Ok((SIGMA_SCALE * max).max(SIGMA_FLOOR))
}
