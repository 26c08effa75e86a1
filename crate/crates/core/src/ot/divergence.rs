//! Debiased Sinkhorn divergence and its gradient.

use std::cmp::Ordering;

use ndarray::Array2;

use super::cost::{cost_grad_into, PointCloud};
use super::sinkhorn::{sinkhorn, SinkhornConfig, SinkhornState};
use crate::Result;

/// `S(a, b) = OT(a, b) - OT(a, a)/2 - OT(b, b)/2` with solver diagnostics.
#[derive(Debug, Clone)]
pub struct Divergence {
    pub value: f64,
    /// All three solves met the tolerance.
    pub converged: bool,
    /// Iterations of the cross, `a`-self and `b`-self problems.
    pub iterations: [usize; 3],
}

#[derive(Debug, Clone)]
pub struct DivergenceGrad {
    pub value: f64,
    pub grad_a: Array2<f64>,
    pub grad_b: Array2<f64>,
    /// Set when a solve did not converge, so the envelope gradient is inexact.
    pub approximate: bool,
    pub iterations: [usize; 3],
}

fn cloud_order(a: &PointCloud, b: &PointCloud) -> Ordering {
    let key = |c: &PointCloud| (c.points.nrows(), c.points.ncols());
    key(a).cmp(&key(b)).then_with(|| {
        a.points
            .iter()
            .chain(a.weights.iter())
            .zip(b.points.iter().chain(b.weights.iter()))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

struct Solves {
    cross: SinkhornState,
    self_a: Option<SinkhornState>,
    self_b: Option<SinkhornState>,
}

impl Solves {
    fn value(&self) -> f64 {
        let half = |s: &Option<SinkhornState>| s.as_ref().map_or(0.0, |s| 0.5 * s.value);
        self.cross.value - half(&self.self_a) - half(&self.self_b)
    }

    fn converged(&self) -> bool {
        [Some(&self.cross), self.self_a.as_ref(), self.self_b.as_ref()]
            .iter()
            .flatten()
            .all(|s| s.converged)
    }

    fn iterations(&self) -> [usize; 3] {
        let it = |s: &Option<SinkhornState>| s.as_ref().map_or(0, |s| s.iterations);
        [self.cross.iterations, it(&self.self_a), it(&self.self_b)]
    }
}

/// Solves the three problems with the arguments in a canonical order, so
/// that swapping `a` and `b` gives bit-identical results. Returns whether
/// the arguments were swapped.
fn solve(a: &PointCloud, b: &PointCloud, cfg: &SinkhornConfig) -> Result<(Solves, bool)> {
    let swapped = cloud_order(a, b) == Ordering::Greater;
    let (x, y) = if swapped { (b, a) } else { (a, b) };
    let cross = sinkhorn(x, y, cfg)?;
    let (self_a, self_b) = if cfg.debias {
        (Some(sinkhorn(x, x, cfg)?), Some(sinkhorn(y, y, cfg)?))
    } else {
        (None, None)
    };
    Ok((Solves { cross, self_a, self_b }, swapped))
}

/// Debiased Sinkhorn divergence (or plain `OT_sigma` with `debias = false`).
pub fn sinkhorn_divergence(a: &PointCloud, b: &PointCloud, cfg: &SinkhornConfig) -> Result<Divergence> {
    let (s, _) = solve(a, b, cfg)?;
    Ok(Divergence {
        value: s.value(),
        converged: s.converged(),
        iterations: s.iterations(),
    })
}

/// Value and point gradients of the divergence by the envelope theorem: the
/// optimal plans are held fixed and only the costs are differentiated.
pub fn sinkhorn_divergence_grad(a: &PointCloud, b: &PointCloud, cfg: &SinkhornConfig) -> Result<DivergenceGrad> {
    let (s, swapped) = solve(a, b, cfg)?;
    let (x, y) = if swapped { (b, a) } else { (a, b) };
    let mut gx = Array2::zeros(x.points.raw_dim());
    let mut gy = Array2::zeros(y.points.raw_dim());
    let plan = &s.cross.plan;
    for i in 0..x.len() {
        for j in 0..y.len() {
            let w = plan[[i, j]];
            if w == 0.0 {
                continue;
            }
            let (xi, yj) = (x.points.row(i), y.points.row(j));
            cost_grad_into(xi, yj, cfg.p, w, gx.row_mut(i).as_slice_mut().expect("standard layout"));
            cost_grad_into(yj, xi, cfg.p, w, gy.row_mut(j).as_slice_mut().expect("standard layout"));
        }
    }
    if let Some(st) = &s.self_a {
        add_self_term(&mut gx, x, &st.plan, cfg.p);
    }
    if let Some(st) = &s.self_b {
        add_self_term(&mut gy, y, &st.plan, cfg.p);
    }
    let (grad_a, grad_b) = if swapped { (gy, gx) } else { (gx, gy) };
    Ok(DivergenceGrad {
        value: s.value(),
        grad_a,
        grad_b,
        approximate: !s.converged(),
        iterations: s.iterations(),
    })
}

/// Adds `-1/2 d/dx OT(x, x)` = `-1/2 sum_j (P_ij + P_ji) dC(x_i, x_j)/dx_i`.
fn add_self_term(grad: &mut Array2<f64>, x: &PointCloud, plan: &Array2<f64>, p: u32) {
    for i in 0..x.len() {
        for j in 0..x.len() {
            let w = plan[[i, j]] + plan[[j, i]];
            if w == 0.0 || i == j {
                continue;
            }
            cost_grad_into(
                x.points.row(i),
                x.points.row(j),
                p,
                -0.5 * w,
                grad.row_mut(i).as_slice_mut().expect("standard layout"),
            );
        }
    }
}
