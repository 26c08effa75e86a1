//! Isomap embedding and CSV export.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::{par, Error, Result};

pub const DEFAULT_NEIGHBORS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingResult {
    /// `(Q, d)`, column means zero.
    pub coordinates: Array2<f64>,
    pub k: usize,
    pub geodesics: Array2<f64>,
    /// `1 - r^2` between geodesic and embedded distances.
    pub residual_variance: f64,
    /// Leading eigenvalues of the centred Gram matrix.
    pub eigenvalues: Vec<f64>,
}

fn euclid(points: &Array2<f64>, i: usize, j: usize) -> f64 {
    points
        .row(i)
        .iter()
        .zip(points.row(j))
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Symmetrised `k`-nearest-neighbour graph with Euclidean edge weights.
pub fn knn_graph(points: &Array2<f64>, k: usize) -> UnGraph<(), f64> {
    let q = points.nrows();
    let neighbours = par::map_range(q, |i| {
        let mut d: Vec<(f64, usize)> = (0..q).filter(|&j| j != i).map(|j| (euclid(points, i, j), j)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.truncate(k);
        d
    });
    let mut g = UnGraph::with_capacity(q, q * k);
    for _ in 0..q {
        g.add_node(());
    }
    for (i, nb) in neighbours.iter().enumerate() {
        for &(w, j) in nb {
            let (a, b) = (NodeIndex::new(i.min(j)), NodeIndex::new(i.max(j)));
            if g.find_edge(a, b).is_none() {
                g.add_edge(a, b, w);
            }
        }
    }
    g
}

/// Embeds `points` in `d` dimensions by classical scaling of graph geodesics.
pub fn isomap(points: &Array2<f64>, k: usize, d: usize) -> Result<EmbeddingResult> {
    let q = points.nrows();
    if k >= q {
        return Err(Error::Config(format!("isomap needs k < number of points (k = {k}, points = {q})")));
    }
    // With fewer than d + 2 points the complete graph is the best available.
    if d == 0 || k < (d + 1).min(q - 1) {
        return Err(Error::Config(format!("isomap needs k >= d + 1 (k = {k}, d = {d})")));
    }
    let graph = knn_graph(points, k);
    let mut uf = UnionFind::<usize>::new(q);
    for e in graph.raw_edges() {
        uf.union(e.source().index(), e.target().index());
    }
    let labels = uf.into_labeling();
    let mut sizes = std::collections::BTreeMap::<usize, usize>::new();
    for l in &labels {
        *sizes.entry(*l).or_default() += 1;
    }
    if sizes.len() > 1 {
        let mut s: Vec<usize> = sizes.into_values().collect();
        s.sort_unstable_by(|a, b| b.cmp(a));
        return Err(Error::Disconnected {
            components: s.len(),
            sizes: s,
        });
    }
    let rows = par::map_range(q, |i| {
        let dist = dijkstra(&graph, NodeIndex::new(i), None, |e| *e.weight());
        let mut row = vec![0.0; q];
        for (n, v) in dist {
            row[n.index()] = v;
        }
        row
    });
    let mut geo = Array2::zeros((q, q));
    for (i, row) in rows.iter().enumerate() {
        for j in 0..q {
            // Average the two directions so the matrix is exactly symmetric.
            geo[[i, j]] = 0.5 * (row[j] + rows[j][i]);
        }
    }
    // Double-centred squared distances.
    let sq = geo.mapv(|v| v * v);
    let row_mean: Vec<f64> = (0..q).map(|i| sq.row(i).sum() / q as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / q as f64;
    let b = DMatrix::from_fn(q, q, |i, j| -0.5 * (sq[[i, j]] - row_mean[i] - row_mean[j] + grand));
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut coords = Array2::zeros((q, d));
    let mut eigenvalues = Vec::with_capacity(d);
    for (c, &idx) in order.iter().take(d).enumerate() {
        let lambda = eig.eigenvalues[idx];
        eigenvalues.push(lambda);
        let v = eig.eigenvectors.column(idx);
        // Fix the sign so the largest-magnitude entry is positive.
        let pivot = (0..q).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        let scale = lambda.max(0.0).sqrt() * sign;
        for i in 0..q {
            coords[[i, c]] = v[i] * scale;
        }
    }
    for c in 0..d {
        let mean = coords.column(c).sum() / q as f64;
        coords.column_mut(c).mapv_inplace(|v| v - mean);
    }
    let residual_variance = residual_variance(&geo, &coords);
    Ok(EmbeddingResult {
        coordinates: coords,
        k,
        geodesics: geo,
        residual_variance,
        eigenvalues,
    })
}

fn residual_variance(geo: &Array2<f64>, coords: &Array2<f64>) -> f64 {
    let q = geo.nrows();
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..q {
        for j in i + 1..q {
            let x = geo[[i, j]];
            let y = euclid(coords, i, j);
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
            n += 1.0;
        }
    }
    if n == 0.0 {
        return 0.0;
    }
    let cov = sxy / n - sx * sy / (n * n);
    let vx = sxx / n - sx * sx / (n * n);
    let vy = syy / n - sy * sy / (n * n);
    if vx <= 0.0 || vy <= 0.0 {
        return 0.0;
    }
    1.0 - cov * cov / (vx * vy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// Writes `x,y,label,domain` rows for the first two embedding columns.
pub fn write_embedding_csv<W: Write>(
    mut out: W,
    coordinates: &Array2<f64>,
    labels: &[u16],
    domains: &[Domain],
) -> Result<()> {
    let q = coordinates.nrows();
    if labels.len() != q || domains.len() != q || coordinates.ncols() < 2 {
        return Err(Error::Shape(format!(
            "{q} points of dimension {} with {} labels and {} domains",
            coordinates.ncols(),
            labels.len(),
            domains.len()
        )));
    }
    writeln!(out, "x,y,label,domain")?;
    for i in 0..q {
        writeln!(
            out,
            "{},{},{},{}",
            coordinates[[i, 0]],
            coordinates[[i, 1]],
            labels[i],
            domains[i].as_str()
        )?;
    }
    Ok(())
}
