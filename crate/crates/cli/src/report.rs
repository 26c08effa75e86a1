//! Metric documents written by `train`, `eval` and `compare`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sidda_core::data::Dataset;
use sidda_core::metrics::{accuracy, brier, confusion, ece, silhouette, to_array, PredictionSet, DEFAULT_ECE_BINS};
use sidda_core::nn::Model;
use sidda_core::train::History;
use sidda_core::Tensor;

use crate::error::Result;

/// Rows per forward pass when evaluating whole datasets.
pub const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainMetrics {
    pub accuracy: f64,
    pub ece: f64,
    pub brier: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Classification metrics and latents of `model` on `ds`.
pub fn domain_metrics(model: &mut Model, ds: &Dataset) -> Result<(DomainMetrics, Tensor)> {
    let (logits, latents) = model.predict(&ds.tensor(), EVAL_CHUNK)?;
    let preds = PredictionSet::from_logits(&logits, ds.labels.clone())?;
    let m = DomainMetrics {
        accuracy: accuracy(&preds),
        ece: ece(&preds, DEFAULT_ECE_BINS)?,
        brier: brier(&preds),
        confusion: confusion(&preds),
    };
    Ok((m, latents))
}

/// Silhouette of latents grouped by true class.
pub fn latent_silhouette(latents: &Tensor, labels: &[u16]) -> Result<f64> {
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    Ok(silhouette(&to_array(latents), &labels)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedMetrics {
    pub seed: u64,
    pub best_epoch: usize,
    pub source: DomainMetrics,
    pub target: DomainMetrics,
    pub silhouette_source: f64,
    pub silhouette_target: f64,
    pub js_trace: Vec<f64>,
    pub eta1_trace: Vec<f64>,
    pub eta2_trace: Vec<f64>,
    pub sigma_trace: Vec<f64>,
    /// Training time, excluding the final test-set evaluation.
    pub wall_seconds: f64,
}

impl SeedMetrics {
    pub fn new(
        model: &mut Model,
        history: &History,
        source_test: &Dataset,
        target_test: &Dataset,
        wall_seconds: f64,
    ) -> Result<Self> {
        let (source, zs) = domain_metrics(model, source_test)?;
        let (target, zt) = domain_metrics(model, target_test)?;
        let (eta1_trace, eta2_trace) = history.eta_traces();
        Ok(Self {
            seed: history.seed,
            best_epoch: history.best_epoch,
            source,
            target,
            silhouette_source: latent_silhouette(&zs, &source_test.labels)?,
            silhouette_target: latent_silhouette(&zt, &target_test.labels)?,
            js_trace: history.js_trace(),
            eta1_trace,
            eta2_trace,
            sigma_trace: history.sigma_trace(),
            wall_seconds,
        })
    }

    /// Scalar summaries aggregated across seeds.
    fn scalars(&self) -> [(&'static str, f64); 9] {
        [
            ("source_accuracy", self.source.accuracy),
            ("source_ece", self.source.ece),
            ("source_brier", self.source.brier),
            ("target_accuracy", self.target.accuracy),
            ("target_ece", self.target.ece),
            ("target_brier", self.target.brier),
            ("silhouette_source", self.silhouette_source),
            ("silhouette_target", self.silhouette_target),
            ("wall_seconds", self.wall_seconds),
        ]
    }
}

/// Mean and sample standard deviation; `std` is absent for one value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stat {
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() > 1)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub model: String,
    pub method: String,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedMetrics>,
    pub aggregate: BTreeMap<String, Stat>,
}

impl RunReport {
    pub fn new(model: &str, method: &str, per_seed: Vec<SeedMetrics>) -> Self {
        let mut aggregate = BTreeMap::new();
        if let Some(first) = per_seed.first() {
            for (i, (name, _)) in first.scalars().iter().enumerate() {
                let values: Vec<f64> = per_seed.iter().map(|m| m.scalars()[i].1).collect();
                aggregate.insert(name.to_string(), Stat::of(&values));
            }
        }
        Self {
            model: model.to_string(),
            method: method.to_string(),
            seeds: per_seed.iter().map(|m| m.seed).collect(),
            per_seed,
            aggregate,
        }
    }

    pub fn mean(&self, key: &str) -> Option<f64> {
        self.aggregate.get(key).map(|s| s.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonRow {
    pub method: String,
    pub source_accuracy: Stat,
    pub target_accuracy: Stat,
    pub target_ece: Stat,
    pub target_brier: Stat,
    pub wall_seconds: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    pub model: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonRow {
    pub fn from_report(r: &RunReport) -> Self {
        let get = |k: &str| r.aggregate.get(k).copied().unwrap_or(Stat { mean: f64::NAN, std: None });
        Self {
            method: r.method.clone(),
            source_accuracy: get("source_accuracy"),
            target_accuracy: get("target_accuracy"),
            target_ece: get("target_ece"),
            target_brier: get("target_brier"),
            wall_seconds: get("wall_seconds"),
        }
    }
}
