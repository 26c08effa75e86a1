//! Point clouds and ground costs.

use ndarray::{Array1, Array2, ArrayView1};

use crate::{par, Error, Result, Tensor};

/// Weighted empirical distribution: `n` points in `l` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Array2<f64>,
    pub weights: Array1<f64>,
}

impl PointCloud {
    pub fn new(points: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        if points.nrows() != weights.len() {
            return Err(Error::Shape(format!(
                "{} points with {} weights",
                points.nrows(),
                weights.len()
            )));
        }
        if points.nrows() == 0 {
            return Err(Error::Shape("empty point cloud".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("point weights must be finite and non-negative".into()));
        }
        let total = weights.sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("point weights sum to {total}, expected 1")));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite point coordinate".into()));
        }
        Ok(Self { points, weights })
    }

    /// Uniform weights `1/n`.
    pub fn uniform(points: Array2<f64>) -> Result<Self> {
        let n = points.nrows();
        Self::new(points, Array1::from_elem(n, 1.0 / n.max(1) as f64))
    }

    /// Rows of a `(n, l)` tensor as a uniform cloud.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.ndim() != 2 {
            return Err(Error::Shape(format!("expected (n, l) latents, got {:?}", t.shape())));
        }
        let points = Array2::from_shape_vec((t.dim(0), t.dim(1)), t.data().iter().map(|&v| v as f64).collect())
            .expect("shape matches");
        Self::uniform(points)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Euclidean distances `D_ij = |a_i - b_j|`.
pub fn pairwise_distances(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!(
            "point dimensions differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (n, m) = (a.nrows(), b.nrows());
    let rows = par::map_range(n, |i| {
        (0..m).map(|j| sq_dist(a.row(i), b.row(j)).sqrt()).collect::<Vec<f64>>()
    });
    Ok(Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect()).expect("shape matches"))
}

/// Ground cost `C_ij = |a_i - b_j|^p` for `p` in `{1, 2}`.
pub fn cost_matrix(a: &PointCloud, b: &PointCloud, p: u32) -> Result<Array2<f64>> {
    if !(p == 1 || p == 2) {
        return Err(Error::Config(format!("cost exponent p must be 1 or 2, got {p}")));
    }
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("point dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    let (n, m) = (a.len(), b.len());
    let rows = par::map_range(n, |i| {
        (0..m)
            .map(|j| {
                let d2 = sq_dist(a.points.row(i), b.points.row(j));
                if p == 2 {
                    d2
                } else {
                    d2.sqrt()
                }
            })
            .collect::<Vec<f64>>()
    });
    Ok(Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect()).expect("shape matches"))
}

/// `d/da C(a, b)` for `C = |a - b|^p`, written into `out`.
pub(crate) fn cost_grad_into(a: ArrayView1<f64>, b: ArrayView1<f64>, p: u32, scale: f64, out: &mut [f64]) {
    if p == 2 {
        for ((o, x), y) in out.iter_mut().zip(a.iter()).zip(b.iter()) {
            *o += scale * 2.0 * (x - y);
        }
    } else {
        let d = sq_dist(a, b).sqrt();
        if d > 0.0 {
            for ((o, x), y) in out.iter_mut().zip(a.iter()).zip(b.iter()) {
                *o += scale * (x - y) / d;
            }
        }
    }
}
