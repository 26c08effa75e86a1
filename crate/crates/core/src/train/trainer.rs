//! Epoch loop, validation and model selection.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::schedule::{DaMethod, TrainSchedule};
use super::step::{ce_step, da_loss, sidda_step, StepReport};
use super::weights::LossWeights;
use crate::data::{augment_batch, Dataset};
use crate::equivariant::{build_model, ModelSpec};
use crate::metrics::{accuracy, js_bound_report, js_distance, to_array, BoundReport, JSEstimate, PredictionSet};
use crate::nn::{cross_entropy, lr_schedule, AdamW, AdamWConfig, Model};
use crate::rng::{self, Stream};
use crate::{Error, Result, Tensor};

pub const JS_BINS: usize = 64;

/// Training inputs. `monitor` is an optional labelled target set evaluated
/// after every epoch for diagnostics only.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub source: &'a Dataset,
    pub target: &'a Dataset,
    pub monitor: Option<&'a Dataset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub da_active: bool,
    pub train_ce: f64,
    pub train_da: Option<f64>,
    pub train_total: f64,
    /// Mean regularization over the epoch's steps.
    pub sigma: Option<f64>,
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
    /// Smallest `eta1` and `eta2 / eta1` seen after any step.
    pub min_eta1: Option<f64>,
    pub min_eta_ratio: Option<f64>,
    pub max_grad_norm: f64,
    pub max_clipped_norm: f64,
    pub approximate_steps: usize,
    pub steps: usize,
    pub val_ce: f64,
    pub val_accuracy: f64,
    pub val_da: Option<f64>,
    pub val_sigma: Option<f64>,
    pub criterion: Option<f64>,
    pub js: JSEstimate,
    pub bound: BoundReport,
    pub target_ce: Option<f64>,
    pub target_accuracy: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub spec: ModelSpec,
    pub schedule: TrainSchedule,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl History {
    pub fn sigma_trace(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.sigma).collect()
    }

    pub fn js_trace(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.js.distance).collect()
    }

    pub fn eta_traces(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.epochs.iter().filter_map(|e| e.eta1).collect(),
            self.epochs.iter().filter_map(|e| e.eta2).collect(),
        )
    }
}

pub struct TrainOutput {
    /// Network with the selected weights loaded.
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub history: History,
}

/// Epoch with the lowest criterion: validation cross-entropy without
/// alignment, validation cross-entropy plus raw validation alignment loss
/// (over epochs where alignment ran) otherwise. Ties go to the earlier epoch.
pub fn model_select(history: &[EpochRecord], method: &DaMethod) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for r in history {
        let value = if method.is_da() {
            match (r.da_active, r.val_da) {
                (true, Some(da)) => r.val_ce + da,
                _ => continue,
            }
        } else {
            r.val_ce
        };
        if best.is_none_or(|(_, b)| value < b) {
            best = Some((r.epoch, value));
        }
    }
    best.map(|(e, _)| e)
}

/// Deterministic `(train, validation)` split of one domain.
pub fn validation_split(ds: &Dataset, fraction: f64, seed: u64, stream: Stream) -> Result<(Dataset, Dataset)> {
    ds.split(fraction, &mut rng::stream(seed, stream))
}

/// Mean alignment loss over paired chunks of two latent sets.
pub fn chunked_da_loss(method: DaMethod, z_src: &Tensor, z_tgt: &Tensor, chunk: usize) -> Result<(f64, Option<f64>)> {
    let n = z_src.dim(0).min(z_tgt.dim(0));
    if n == 0 {
        return Err(Error::Shape("alignment loss of an empty set".into()));
    }
    let chunk = chunk.max(2).min(n);
    let (mut total, mut sigma, mut count) = (0.0, 0.0, 0);
    let mut start = 0;
    while start < n {
        let mut end = (start + chunk).min(n);
        // Fold a short tail into the previous chunk.
        if n - end < chunk / 2 {
            end = n;
        }
        let d = da_loss(method, &z_src.slice_rows(start, end), &z_tgt.slice_rows(start, end), false)?;
        total += d.value;
        sigma += d.sigma.unwrap_or(f64::NAN);
        count += 1;
        start = end;
    }
    let sigma = sigma / count as f64;
    Ok((total / count as f64, sigma.is_finite().then_some(sigma)))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Evaluation-mode cross-entropy and accuracy.
pub fn evaluate(model: &mut Model, ds: &Dataset, chunk: usize) -> Result<(f64, f64, Tensor)> {
    let (logits, latents) = model.predict(&ds.tensor(), chunk)?;
    let (ce, _) = cross_entropy(&logits, &ds.labels)?;
    let preds = PredictionSet::from_logits(&logits, ds.labels.clone())?;
    Ok((ce, accuracy(&preds), latents))
}

pub fn train(spec: &ModelSpec, schedule: &TrainSchedule, data: TrainData<'_>, seed: u64) -> Result<TrainOutput> {
    train_with(spec, schedule, data, seed, &mut |_| {})
}

/// Runs the full schedule, calling `observer` after every epoch.
pub fn train_with(
    spec: &ModelSpec,
    schedule: &TrainSchedule,
    data: TrainData<'_>,
    seed: u64,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutput> {
    schedule.validate()?;
    let TrainData { source, target, monitor } = data;
    for (name, ds) in [("source", Some(source)), ("target", Some(target)), ("monitor", monitor)] {
        if let Some(ds) = ds {
            if ds.image_shape() != spec.input || ds.num_classes != spec.num_classes {
                return Err(Error::Config(format!(
                    "{name} dataset {:?} with {} classes does not match model input {:?} with {} classes",
                    ds.image_shape(),
                    ds.num_classes,
                    spec.input,
                    spec.num_classes
                )));
            }
        }
    }
    let (src_train, src_val) = validation_split(source, schedule.val_fraction, seed, Stream::Data)?;
    let (tgt_train, tgt_val) = validation_split(target, schedule.val_fraction, seed, Stream::Target)?;
    if src_train.is_empty() || src_val.is_empty() || tgt_val.is_empty() {
        return Err(Error::Config("datasets too small for the validation split".into()));
    }
    if schedule.da_method.is_da() && tgt_train.is_empty() {
        return Err(Error::Config("alignment needs target training images".into()));
    }

    let mut model = build_model(spec, rng::derive(seed, Stream::Init as u64))?;
    let mut opt = AdamW::new(AdamWConfig {
        lr: schedule.base_lr,
        weight_decay: schedule.weight_decay,
        ..Default::default()
    });
    let mut weights = LossWeights::default();
    let mut data_rng = rng::stream(seed, Stream::Data);
    let mut target_rng = rng::stream(seed, Stream::Target);
    let mut aug_rng = rng::stream(seed, Stream::Augment);
    let mut drop_rng = rng::stream(seed, Stream::Dropout);
    let chunk = schedule.batch_size;

    let mut records: Vec<EpochRecord> = Vec::with_capacity(schedule.total_epochs);
    let mut best: Option<(f64, Vec<f32>, Option<[f64; 2]>)> = None;
    let mut best_epoch = 0;
    let mut tgt_order: Vec<usize> = Vec::new();
    let mut tgt_pos = 0;

    for epoch in 0..schedule.total_epochs {
        let started = Instant::now();
        let lr = lr_schedule(epoch, schedule.total_epochs, schedule.base_lr);
        opt.set_lr(lr);
        let active = schedule.da_active(epoch);
        let mut order: Vec<usize> = (0..src_train.len()).collect();
        order.shuffle(&mut data_rng);
        let mut reports: Vec<StepReport> = Vec::new();
        let mut min_eta1 = f64::INFINITY;
        let mut min_ratio = f64::INFINITY;
        for idx in order.chunks(schedule.batch_size) {
            let mut x = src_train.batch(idx);
            if schedule.augment {
                debug_assert_eq!(spec.input[1], spec.input[2]);
                x = augment_batch(&x, &mut aug_rng);
            }
            let y = src_train.batch_labels(idx);
            let report = if active {
                let mut tidx = Vec::with_capacity(idx.len());
                while tidx.len() < idx.len() {
                    if tgt_pos == tgt_order.len() {
                        tgt_order = (0..tgt_train.len()).collect();
                        tgt_order.shuffle(&mut target_rng);
                        tgt_pos = 0;
                    }
                    tidx.push(tgt_order[tgt_pos]);
                    tgt_pos += 1;
                }
                let mut xt = tgt_train.batch(&tidx);
                if schedule.augment {
                    xt = augment_batch(&xt, &mut aug_rng);
                }
                sidda_step(&mut model, &mut opt, &x, &y, &xt, &mut weights, schedule, &mut drop_rng)?
            } else {
                ce_step(&mut model, &mut opt, x, &y, schedule, &mut drop_rng)?
            };
            if let Some((e1, e2)) = report.eta {
                min_eta1 = min_eta1.min(e1);
                min_ratio = min_ratio.min(e2 / e1);
            }
            reports.push(report);
        }

        let (val_ce, val_accuracy, z_val) = evaluate(&mut model, &src_val, chunk)?;
        let (_, z_tgt_val) = model.predict(&tgt_val.tensor(), chunk)?;
        let js = js_distance(&to_array(&z_val), &to_array(&z_tgt_val), JS_BINS)?;
        let (val_da, val_sigma) = if active {
            let (v, s) = chunked_da_loss(schedule.da_method, &z_val, &z_tgt_val, chunk)?;
            (Some(v), s)
        } else {
            (None, None)
        };
        let (target_ce, target_accuracy) = match monitor {
            Some(m) => {
                let (ce, acc, _) = evaluate(&mut model, m, chunk)?;
                (Some(ce), Some(acc))
            }
            None => (None, None),
        };
        let criterion = if schedule.da_method.is_da() {
            val_da.map(|d| val_ce + d)
        } else {
            Some(val_ce)
        };
        let collect = |f: fn(&StepReport) -> Option<f64>| -> Option<f64> {
            let v: Vec<f64> = reports.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| mean(&v))
        };
        let eta_used = active && schedule.da_method.uses_weights();
        let record = EpochRecord {
            epoch,
            lr,
            da_active: active,
            train_ce: mean(&reports.iter().map(|r| r.l_ce).collect::<Vec<_>>()),
            train_da: collect(|r| r.l_da),
            train_total: mean(&reports.iter().map(|r| r.total).collect::<Vec<_>>()),
            sigma: collect(|r| r.sigma),
            eta1: eta_used.then(|| weights.eta1()),
            eta2: eta_used.then(|| weights.eta2()),
            min_eta1: min_eta1.is_finite().then_some(min_eta1),
            min_eta_ratio: min_ratio.is_finite().then_some(min_ratio),
            max_grad_norm: reports.iter().map(|r| r.grad_norm).fold(0.0, f64::max),
            max_clipped_norm: reports.iter().map(|r| r.clipped_norm).fold(0.0, f64::max),
            approximate_steps: reports.iter().filter(|r| r.approximate).count(),
            steps: reports.len(),
            val_ce,
            val_accuracy,
            val_da,
            val_sigma,
            criterion,
            bound: js_bound_report(val_ce, target_ce, &js),
            js,
            target_ce,
            target_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(c) = criterion {
            if best.as_ref().is_none_or(|(b, _, _)| c < *b) {
                let eta = schedule.da_method.uses_weights().then(|| [weights.eta1(), weights.eta2()]);
                best = Some((c, model.state_vector(), eta));
                best_epoch = epoch;
            }
        }
        observer(&record);
        records.push(record);
    }

    debug_assert_eq!(model_select(&records, &schedule.da_method), Some(best_epoch));
    let (criterion, state, eta) = best.ok_or_else(|| Error::State("no epoch qualified for selection".into()))?;
    model.load_state_vector(&state)?;
    let history = History {
        spec: spec.clone(),
        schedule: *schedule,
        seed,
        epochs: records,
        best_epoch,
    };
    let checkpoint = Checkpoint {
        spec: spec.clone(),
        seed,
        epoch: best_epoch,
        criterion,
        eta,
        sigma_trace: history.sigma_trace(),
        state,
    };
    Ok(TrainOutput {
        model,
        checkpoint,
        history,
    })
}
