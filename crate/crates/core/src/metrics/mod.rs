//! Evaluation metrics: accuracy, calibration, clustering, JS divergence and
//! isomap embeddings.

mod calibration;
mod cluster;
mod isomap;
mod js;

use ndarray::Array2;

use crate::Tensor;

pub use calibration::{accuracy, brier, confusion, ece, PredictionSet};
pub use cluster::silhouette;
pub use isomap::{isomap, knn_graph, write_embedding_csv, Domain, EmbeddingResult, DEFAULT_NEIGHBORS};
pub use js::{js_bound_report, js_distance, js_divergence_1d, BoundReport, JSEstimate, JS_ESTIMATOR, JS_SMOOTHING};

pub const DEFAULT_ECE_BINS: usize = 10;
pub const DEFAULT_JS_BINS: usize = 64;

/// Rows of a 2-D tensor as f64.
pub fn to_array(t: &Tensor) -> Array2<f64> {
    let (n, l) = (t.dim(0), t.row_len());
    Array2::from_shape_fn((n, l), |(i, j)| t.data()[i * l + j] as f64)
}
