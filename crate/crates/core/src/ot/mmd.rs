//! Kernel maximum mean discrepancy (biased V-statistic).

use ndarray::Array2;

use super::cost::PointCloud;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// `exp(-|x - y|^2 / (2 eps^2))`
    Gaussian { eps: f64 },
    /// `exp(-|x - y| / (2 eps))`
    Laplacian { eps: f64 },
    /// `x . y`
    Linear,
}

impl Kernel {
    fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Gaussian { eps } | Kernel::Laplacian { eps } if !(eps > 0.0) => {
                Err(Error::Config(format!("kernel width must be positive, got {eps}")))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            Kernel::Gaussian { eps } => (-sq(x, y) / (2.0 * eps * eps)).exp(),
            Kernel::Laplacian { eps } => (-sq(x, y).sqrt() / (2.0 * eps)).exp(),
            Kernel::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        }
    }

    /// `d k(x, y) / dx`, accumulated into `out` with factor `scale`.
    fn grad_into(&self, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) {
        match *self {
            Kernel::Gaussian { eps } => {
                let k = self.eval(x, y);
                let c = -scale * k / (eps * eps);
                for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
                    *o += c * (a - b);
                }
            }
            Kernel::Laplacian { eps } => {
                let d = sq(x, y).sqrt();
                if d > 0.0 {
                    let c = -scale * self.eval(x, y) / (2.0 * eps * d);
                    for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
                        *o += c * (a - b);
                    }
                }
            }
            Kernel::Linear => {
                for (o, b) in out.iter_mut().zip(y) {
                    *o += scale * b;
                }
            }
        }
    }
}

fn sq(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn rows(c: &PointCloud) -> Vec<Vec<f64>> {
    c.points.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn weighted_mean_kernel(a: &[Vec<f64>], wa: &[f64], b: &[Vec<f64>], wb: &[f64], k: &Kernel) -> f64 {
    let mut s = 0.0;
    for (x, &u) in a.iter().zip(wa) {
        for (y, &v) in b.iter().zip(wb) {
            s += u * v * k.eval(x, y);
        }
    }
    s
}

/// Squared MMD including the `i = j` terms (may be slightly negative only
/// through rounding).
pub fn mmd_squared(a: &PointCloud, b: &PointCloud, kernel: Kernel) -> Result<f64> {
    kernel.validate()?;
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("point dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    let (ra, rb) = (rows(a), rows(b));
    let (wa, wb) = (a.weights.to_vec(), b.weights.to_vec());
    Ok(weighted_mean_kernel(&ra, &wa, &ra, &wa, &kernel) + weighted_mean_kernel(&rb, &wb, &rb, &wb, &kernel)
        - 2.0 * weighted_mean_kernel(&ra, &wa, &rb, &wb, &kernel))
}

/// `sqrt(max(MMD^2, 0))`.
pub fn mmd(a: &PointCloud, b: &PointCloud, kernel: Kernel) -> Result<f64> {
    Ok(mmd_squared(a, b, kernel)?.max(0.0).sqrt())
}

/// `MMD^2` and its gradients with respect to both point sets.
pub fn mmd_squared_grad(a: &PointCloud, b: &PointCloud, kernel: Kernel) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let value = mmd_squared(a, b, kernel)?;
    let (ra, rb) = (rows(a), rows(b));
    let (wa, wb) = (a.weights.to_vec(), b.weights.to_vec());
    let l = a.dim();
    let mut ga = Array2::zeros((ra.len(), l));
    let mut gb = Array2::zeros((rb.len(), l));
    // The kernels are symmetric, so each self pair contributes twice.
    for (i, x) in ra.iter().enumerate() {
        let out = ga.row_mut(i).into_slice().expect("standard layout");
        for (j, y) in ra.iter().enumerate() {
            kernel.grad_into(x, y, 2.0 * wa[i] * wa[j], out);
        }
        for (j, y) in rb.iter().enumerate() {
            kernel.grad_into(x, y, -2.0 * wa[i] * wb[j], out);
        }
    }
    for (i, y) in rb.iter().enumerate() {
        let out = gb.row_mut(i).into_slice().expect("standard layout");
        for (j, z) in rb.iter().enumerate() {
            kernel.grad_into(y, z, 2.0 * wb[i] * wb[j], out);
        }
        for (j, x) in ra.iter().enumerate() {
            kernel.grad_into(y, x, -2.0 * wb[i] * wa[j], out);
        }
    }
    Ok((value, ga, gb))
}
