//! Log-domain Sinkhorn for entropy-regularized optimal transport.
//!
//! Solves `min_{gamma in U(alpha, beta)} <gamma, C> + sigma * sum gamma log gamma`.
//! At the optimum `gamma_ij = alpha_i beta_j exp((f_i + g_j - C_ij) / sigma)`.
//! The potentials are kept in the log domain; iterations run as scaling
//! updates against a cached kernel and fall back to log-sum-exp updates
//! whenever the scalings would overflow.

use ndarray::{Array1, Array2};

use super::cost::{cost_matrix, PointCloud};
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    /// Entropic regularization `sigma > 0`.
    pub sigma: f64,
    /// Cost exponent, 1 or 2.
    pub p: u32,
    pub max_iters: usize,
    /// Tolerance on the L1 violation of the row marginal.
    pub tol: f64,
    /// Subtract the self-transport terms in [`sinkhorn_divergence`](super::sinkhorn_divergence).
    pub debias: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            p: 2,
            max_iters: 1000,
            tol: 1e-6,
            debias: true,
        }
    }
}

impl SinkhornConfig {
    pub fn with_sigma(sigma: f64) -> Self {
        Self { sigma, ..Self::default() }
    }

    /// Near-unregularized transport: `sigma = 1e-12`, up to 5000 iterations.
    pub fn wasserstein() -> Self {
        Self {
            sigma: 1e-12,
            max_iters: 5000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("sinkhorn sigma must be positive, got {}", self.sigma)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("sinkhorn tol must be positive, got {}", self.tol)));
        }
        if !(self.p == 1 || self.p == 2) {
            return Err(Error::Config(format!("cost exponent p must be 1 or 2, got {}", self.p)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("sinkhorn max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornState {
    pub cost: Array2<f64>,
    pub f: Array1<f64>,
    pub g: Array1<f64>,
    pub plan: Array2<f64>,
    pub iterations: usize,
    /// L1 distance between the plan's row sums and `alpha`.
    pub violation: f64,
    pub converged: bool,
    /// Regularized transport cost at the returned plan.
    pub value: f64,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `out_i = -sigma * LSE_j(log w_j + (pot_j - C_ij) / sigma)` for rows of `cost`.
fn soft_min(cost: &Array2<f64>, log_w: &[f64], pot: &Array1<f64>, sigma: f64) -> Array1<f64> {
    let rows = par::map_range(cost.nrows(), |i| {
        let row = cost.row(i);
        let terms = row
            .iter()
            .zip(log_w)
            .zip(pot.iter())
            .map(move |((&c, &lw), &p)| lw + (p - c) / sigma);
        -sigma * log_sum_exp(terms)
    });
    Array1::from(rows)
}

/// Solves the regularized problem between `a` and `b`. Non-convergence
/// within `max_iters` is reported through [`SinkhornState::converged`].
pub fn sinkhorn(a: &PointCloud, b: &PointCloud, cfg: &SinkhornConfig) -> Result<SinkhornState> {
    cfg.validate()?;
    let cost = cost_matrix(a, b, cfg.p)?;
    solve_with_cost(cost, &a.weights, &b.weights, cfg)
}

pub(crate) fn solve_with_cost(
    cost: Array2<f64>,
    alpha: &Array1<f64>,
    beta: &Array1<f64>,
    cfg: &SinkhornConfig,
) -> Result<SinkhornState> {
    let sigma = cfg.sigma;
    let cost_t = cost.t().as_standard_layout().into_owned();
    let log_a: Vec<f64> = alpha.iter().map(|w| w.ln()).collect();
    let log_b: Vec<f64> = beta.iter().map(|w| w.ln()).collect();
    let mut st = Scaled::new(cost.nrows(), cost.ncols());
    let mut iterations = 0;
    let mut violation = f64::INFINITY;
    let mut backoff = 0usize;
    let mut failures = 0u32;
    while iterations < cfg.max_iters {
        iterations += 1;
        let scaled_ok = backoff == 0 && st.scaled_iteration(&cost, alpha, beta, sigma);
        if scaled_ok {
            violation = st.scaled_violation(alpha, beta);
            if st.needs_absorb() {
                st.absorb(sigma);
            }
        } else {
            // The scalings left their safe range (typical for tiny sigma):
            // fall back to exact log-domain updates for a while.
            st.absorb(sigma);
            st.f = soft_min(&cost, &log_b, &st.g, sigma);
            st.g = soft_min(&cost_t, &log_a, &st.f, sigma);
            violation = row_violation(&cost, alpha, &log_b, &st.f, &st.g, sigma);
            if backoff == 0 {
                failures += 1;
                backoff = 1 << failures.min(8);
            }
            backoff -= 1;
        }
        if violation < cfg.tol {
            break;
        }
    }
    st.absorb(sigma);
    let (f, g) = (st.f, st.g);
    if !violation.is_finite() || f.iter().chain(g.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("sinkhorn potentials became non-finite".into()));
    }
    let plan = transport_plan(&cost, &log_a, &log_b, &f, &g, sigma);
    let value = regularized_value(&plan, &cost, sigma);
    Ok(SinkhornState {
        cost,
        f,
        g,
        plan,
        iterations,
        violation,
        converged: violation < cfg.tol,
        value,
    })
}

/// Largest `|ln u|` tolerated before scalings are folded into the potentials.
const ABSORB_AT: f64 = 30.0;

/// Dual potentials `f, g` plus multiplicative scalings `u, v`; the effective
/// potentials are `f + sigma ln u` and `g + sigma ln v`. Scaling updates are
/// matrix-vector products against the cached kernel
/// `K_ij = exp((f_i + g_j - C_ij) / sigma)`, so most iterations need no
/// exponentials while producing the same iterates as log-domain updates.
struct Scaled {
    f: Array1<f64>,
    g: Array1<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    kernel: Vec<f64>,
    kernel_t: Vec<f64>,
    stale: bool,
}

impl Scaled {
    fn new(n: usize, m: usize) -> Self {
        Self {
            f: Array1::zeros(n),
            g: Array1::zeros(m),
            u: vec![1.0; n],
            v: vec![1.0; m],
            kernel: Vec::new(),
            kernel_t: Vec::new(),
            stale: true,
        }
    }

    fn rebuild(&mut self, cost: &Array2<f64>, sigma: f64) {
        let (n, m) = cost.dim();
        let (f, g) = (&self.f, &self.g);
        self.kernel = par::map_range(n, |i| {
            (0..m).map(|j| ((f[i] + g[j] - cost[[i, j]]) / sigma).exp()).collect::<Vec<f64>>()
        })
        .concat();
        let mut kt = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                kt[j * n + i] = self.kernel[i * m + j];
            }
        }
        self.kernel_t = kt;
        self.stale = false;
    }

    fn absorb(&mut self, sigma: f64) {
        for (f, u) in self.f.iter_mut().zip(&mut self.u) {
            *f += sigma * u.ln();
            *u = 1.0;
        }
        for (g, v) in self.g.iter_mut().zip(&mut self.v) {
            *g += sigma * v.ln();
            *v = 1.0;
        }
        self.stale = true;
    }

    fn needs_absorb(&self) -> bool {
        self.u.iter().chain(&self.v).any(|s| s.ln().abs() > ABSORB_AT)
    }

    /// One `u` then `v` update. Returns false (leaving `u, v` untouched)
    /// when a new scaling would be zero, infinite or beyond the safe range.
    fn scaled_iteration(&mut self, cost: &Array2<f64>, alpha: &Array1<f64>, beta: &Array1<f64>, sigma: f64) -> bool {
        if self.stale {
            self.rebuild(cost, sigma);
        }
        let bv: Vec<f64> = beta.iter().zip(&self.v).map(|(b, v)| b * v).collect();
        let Some(u) = inverse_matvec(&self.kernel, &bv) else {
            return false;
        };
        let au: Vec<f64> = alpha.iter().zip(&u).map(|(a, u)| a * u).collect();
        let Some(v) = inverse_matvec(&self.kernel_t, &au) else {
            return false;
        };
        self.u = u;
        self.v = v;
        true
    }

    fn scaled_violation(&self, alpha: &Array1<f64>, beta: &Array1<f64>) -> f64 {
        let m = self.v.len();
        let bv: Vec<f64> = beta.iter().zip(&self.v).map(|(b, v)| b * v).collect();
        self.kernel
            .chunks(m)
            .zip(&self.u)
            .zip(alpha.iter())
            .map(|((row, u), a)| {
                let s: f64 = row.iter().zip(&bv).map(|(k, w)| k * w).sum();
                (a * u * s - a).abs()
            })
            .sum()
    }
}

/// `1 / (K w)` row-wise, or `None` if any result leaves the safe range.
fn inverse_matvec(kernel: &[f64], w: &[f64]) -> Option<Vec<f64>> {
    let m = w.len();
    kernel
        .chunks(m)
        .map(|row| {
            let s: f64 = row.iter().zip(w).map(|(k, x)| k * x).sum();
            let inv = 1.0 / s;
            (inv.is_finite() && inv > 0.0 && inv.ln().abs() <= 2.0 * ABSORB_AT).then_some(inv)
        })
        .collect()
}

fn row_violation(
    cost: &Array2<f64>,
    alpha: &Array1<f64>,
    log_b: &[f64],
    f: &Array1<f64>,
    g: &Array1<f64>,
    sigma: f64,
) -> f64 {
    let rows = par::map_range(cost.nrows(), |i| {
        let row = cost.row(i);
        let terms = row
            .iter()
            .zip(log_b)
            .zip(g.iter())
            .map(move |((&c, &lb), &gj)| lb + (f[i] + gj - c) / sigma);
        let mass = alpha[i] * log_sum_exp(terms).exp();
        (mass - alpha[i]).abs()
    });
    rows.iter().sum()
}

fn transport_plan(
    cost: &Array2<f64>,
    log_a: &[f64],
    log_b: &[f64],
    f: &Array1<f64>,
    g: &Array1<f64>,
    sigma: f64,
) -> Array2<f64> {
    let (n, m) = cost.dim();
    Array2::from_shape_fn((n, m), |(i, j)| (log_a[i] + log_b[j] + (f[i] + g[j] - cost[[i, j]]) / sigma).exp())
}

/// `<gamma, C> + sigma * sum gamma log gamma`, with `0 log 0 = 0`.
pub fn regularized_value(plan: &Array2<f64>, cost: &Array2<f64>, sigma: f64) -> f64 {
    plan.iter()
        .zip(cost.iter())
        .map(|(&p, &c)| if p > 0.0 { p * c + sigma * p * p.ln() } else { 0.0 })
        .sum()
}
