//! Silhouette score.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::{par, Error, Result};

/// Mean silhouette `(b - a) / max(a, b)` over all points. Points in
/// singleton clusters score 0.
pub fn silhouette(points: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let q = points.nrows();
    if labels.len() != q {
        return Err(Error::Shape(format!("{q} points with {} labels", labels.len())));
    }
    let mut ids = BTreeMap::new();
    for &l in labels {
        let next = ids.len();
        ids.entry(l).or_insert(next);
    }
    if ids.len() < 2 {
        return Err(Error::Config(format!("silhouette needs at least 2 clusters, found {}", ids.len())));
    }
    let cluster: Vec<usize> = labels.iter().map(|l| ids[l]).collect();
    let mut sizes = vec![0usize; ids.len()];
    for &c in &cluster {
        sizes[c] += 1;
    }
    let scores = par::map_range(q, |i| {
        let own = cluster[i];
        if sizes[own] == 1 {
            return 0.0;
        }
        let mut sums = vec![0.0; sizes.len()];
        let pi = points.row(i);
        for j in 0..q {
            if j != i {
                let d: f64 = pi.iter().zip(points.row(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                sums[cluster[j]] += d;
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..sizes.len())
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            (b - a) / m
        } else {
            0.0
        }
    });
    Ok(scores.iter().sum::<f64>() / q as f64)
}
