//! Accuracy and calibration of class-probability predictions.

use crate::nn::softmax_rows;
use crate::{Error, Result, Tensor};

/// Row-stochastic class probabilities with their true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    probabilities: Tensor,
    labels: Vec<u16>,
}

impl PredictionSet {
    pub fn new(probabilities: Tensor, labels: Vec<u16>) -> Result<Self> {
        if probabilities.ndim() != 2 || probabilities.dim(0) != labels.len() {
            return Err(Error::Shape(format!(
                "probabilities {:?} do not match {} labels",
                probabilities.shape(),
                labels.len()
            )));
        }
        let c = probabilities.dim(1);
        for (i, &l) in labels.iter().enumerate() {
            let row = probabilities.row(i);
            if l as usize >= c {
                return Err(Error::Config(format!("label {l} out of range for {c} classes")));
            }
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::Numeric(format!("row {i} has negative or NaN probability")));
            }
            let sum: f64 = row.iter().map(|&p| p as f64).sum();
            if (sum - 1.0).abs() > 1e-5 {
                return Err(Error::Numeric(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { probabilities, labels })
    }

    pub fn from_logits(logits: &Tensor, labels: Vec<u16>) -> Result<Self> {
        Self::new(softmax_rows(logits), labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.probabilities.dim(1)
    }

    pub fn probabilities(&self) -> &Tensor {
        &self.probabilities
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    /// Arg-max class (first on ties) and its probability for each row.
    pub fn predictions(&self) -> Vec<(u16, f64)> {
        (0..self.len())
            .map(|i| {
                let row = self.probabilities.row(i);
                let mut best = 0;
                for (c, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = c;
                    }
                }
                (best as u16, row[best] as f64)
            })
            .collect()
    }
}

pub fn accuracy(preds: &PredictionSet) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let hits = preds
        .predictions()
        .iter()
        .zip(preds.labels())
        .filter(|((p, _), &l)| *p == l)
        .count();
    hits as f64 / preds.len() as f64
}

/// `matrix[true][predicted]` counts.
pub fn confusion(preds: &PredictionSet) -> Vec<Vec<usize>> {
    let c = preds.num_classes();
    let mut m = vec![vec![0; c]; c];
    for ((p, _), &l) in preds.predictions().iter().zip(preds.labels()) {
        m[l as usize][*p as usize] += 1;
    }
    m
}

/// Expected calibration error over `bins` equal-width confidence bins.
/// Bin `v` holds confidences in `(v / V, (v + 1) / V]`; zero goes to the
/// first bin.
pub fn ece(preds: &PredictionSet, bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(Error::Config("ECE needs at least one bin".into()));
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let mut count = vec![0usize; bins];
    let mut correct = vec![0usize; bins];
    let mut conf = vec![0.0f64; bins];
    for ((p, c), &l) in preds.predictions().iter().zip(preds.labels()) {
        let b = ((c * bins as f64).ceil() as usize).clamp(1, bins) - 1;
        count[b] += 1;
        conf[b] += c;
        correct[b] += usize::from(*p == l);
    }
    let w = preds.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let n = count[b] as f64;
            n / w * (correct[b] as f64 / n - conf[b] / n).abs()
        })
        .sum())
}

/// Mean over samples of `(1/C) sum_i (y_i - [i == label])^2`.
pub fn brier(preds: &PredictionSet) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let c = preds.num_classes();
    let total: f64 = (0..preds.len())
        .map(|i| {
            let l = preds.labels()[i] as usize;
            preds
                .probabilities()
                .row(i)
                .iter()
                .enumerate()
                .map(|(k, &p)| (p as f64 - if k == l { 1.0 } else { 0.0 }).powi(2))
                .sum::<f64>()
                / c as f64
        })
        .sum();
    total / preds.len() as f64
}
