//! One optimization step, with or without latent alignment.

use ndarray::Array2;

use super::schedule::{DaMethod, TrainSchedule, WASSERSTEIN_SIGMA};
use super::weights::{clip_etas, total_loss, LossWeights};
use crate::nn::{clip_global_grad_norm, cross_entropy, global_grad_norm, AdamW, Model};
use crate::ot::{
    dynamic_sigma, mmd_squared_grad, sinkhorn_divergence, sinkhorn_divergence_grad, Kernel, PointCloud,
    SinkhornConfig,
};
use crate::rng::Rng;
use crate::{Error, Result, Tensor};

/// Alignment loss between two latent batches.
#[derive(Debug, Clone)]
pub struct DaLoss {
    pub value: f64,
    /// Regularization used, for Sinkhorn-based methods.
    pub sigma: Option<f64>,
    pub grad_src: Option<Tensor>,
    pub grad_tgt: Option<Tensor>,
    /// A Sinkhorn solve stopped at the iteration cap.
    pub approximate: bool,
}

fn to_tensor(a: Array2<f64>) -> Tensor {
    let shape = vec![a.nrows(), a.ncols()];
    Tensor::new(shape, a.iter().map(|&v| v as f32).collect()).expect("shape matches")
}

/// Computes the alignment loss of `method` and, if asked, its gradient with
/// respect to both latent batches.
pub fn da_loss(method: DaMethod, z_src: &Tensor, z_tgt: &Tensor, with_grad: bool) -> Result<DaLoss> {
    let a = PointCloud::from_tensor(z_src)?;
    let b = PointCloud::from_tensor(z_tgt)?;
    let sinkhorn = |cfg: SinkhornConfig, sigma: f64| -> Result<DaLoss> {
        if with_grad {
            let d = sinkhorn_divergence_grad(&a, &b, &cfg)?;
            Ok(DaLoss {
                value: d.value,
                sigma: Some(sigma),
                grad_src: Some(to_tensor(d.grad_a)),
                grad_tgt: Some(to_tensor(d.grad_b)),
                approximate: d.approximate,
            })
        } else {
            let d = sinkhorn_divergence(&a, &b, &cfg)?;
            Ok(DaLoss {
                value: d.value,
                sigma: Some(sigma),
                grad_src: None,
                grad_tgt: None,
                approximate: !d.converged,
            })
        }
    };
    match method {
        DaMethod::None => Err(Error::Config("no alignment loss for method none".into())),
        DaMethod::Sidda | DaMethod::Fixed { .. } => {
            let sigma = dynamic_sigma(&a, &b)?;
            sinkhorn(SinkhornConfig::with_sigma(sigma), sigma)
        }
        DaMethod::Wasserstein => sinkhorn(SinkhornConfig::wasserstein(), WASSERSTEIN_SIGMA),
        DaMethod::Mmd { eps } => {
            let (value, ga, gb) = mmd_squared_grad(&a, &b, Kernel::Gaussian { eps })?;
            Ok(DaLoss {
                value,
                sigma: None,
                grad_src: with_grad.then(|| to_tensor(ga)),
                grad_tgt: with_grad.then(|| to_tensor(gb)),
                approximate: false,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub l_ce: f64,
    pub l_da: Option<f64>,
    pub sigma: Option<f64>,
    pub total: f64,
    /// Model gradient norm before clipping.
    pub grad_norm: f64,
    /// Model gradient norm after clipping.
    pub clipped_norm: f64,
    /// `(eta1, eta2)` after the step.
    pub eta: Option<(f64, f64)>,
    pub approximate: bool,
}

fn clip_model_grads(model: &mut Model, max: f64) -> (f64, f64) {
    let mut params = model.params_mut();
    let before = clip_global_grad_norm(&mut params, max);
    let after = global_grad_norm(&params.iter().map(|p| &**p).collect::<Vec<_>>());
    (before, after)
}

/// Plain cross-entropy step on a source batch.
pub fn ce_step(
    model: &mut Model,
    opt: &mut AdamW,
    x: Tensor,
    labels: &[u16],
    schedule: &TrainSchedule,
    rng: &mut Rng,
) -> Result<StepReport> {
    let (logits, _) = model.forward(x, true, rng)?;
    let (l_ce, grad) = cross_entropy(&logits, labels)?;
    model.zero_grad();
    model.backward(grad, None)?;
    let (grad_norm, clipped_norm) = clip_model_grads(model, schedule.grad_clip);
    opt.step(&mut model.params_mut())?;
    Ok(StepReport {
        l_ce,
        l_da: None,
        sigma: None,
        total: l_ce,
        grad_norm,
        clipped_norm,
        eta: None,
        approximate: false,
    })
}

/// One alignment step: a single forward over `[x_src, x_tgt]`, cross-entropy
/// on the source half, the alignment loss between the two latent halves,
/// then backward, gradient clipping, weight clipping and the update.
#[allow(clippy::too_many_arguments)]
pub fn sidda_step(
    model: &mut Model,
    opt: &mut AdamW,
    x_src: &Tensor,
    labels: &[u16],
    x_tgt: &Tensor,
    weights: &mut LossWeights,
    schedule: &TrainSchedule,
    rng: &mut Rng,
) -> Result<StepReport> {
    let n = x_src.dim(0);
    if x_tgt.dim(0) != n || labels.len() != n {
        return Err(Error::Config(format!(
            "unequal batch halves: {n} source images, {} labels, {} target images",
            labels.len(),
            x_tgt.dim(0)
        )));
    }
    let x = Tensor::concat_rows(&[x_src, x_tgt])?;
    let (logits, latents) = model.forward(x, true, rng)?;
    let z_src = latents.slice_rows(0, n);
    let z_tgt = latents.slice_rows(n, 2 * n);
    let da = da_loss(schedule.da_method, &z_src, &z_tgt, true)?;
    let (l_ce, grad_ce) = cross_entropy(&logits.slice_rows(0, n), labels)?;

    let (total, ce_scale, da_scale, eta_grad) = match schedule.da_method {
        DaMethod::Fixed { ce, da: c_da } => (ce * l_ce + c_da * da.value, ce, c_da, None),
        _ => {
            let t = total_loss(l_ce, da.value, weights.eta1(), weights.eta2())?;
            (t.value, t.ce_scale, t.da_scale, Some([t.d_eta1, t.d_eta2]))
        }
    };

    let classes = logits.dim(1);
    let mut grad_logits = vec![0.0f32; 2 * n * classes];
    for (g, &v) in grad_logits.iter_mut().zip(grad_ce.data()) {
        *g = (v as f64 * ce_scale) as f32;
    }
    let gs = da.grad_src.as_ref().expect("gradient requested");
    let gt = da.grad_tgt.as_ref().expect("gradient requested");
    let grad_latents = Tensor::concat_rows(&[gs, gt])?.map(|v| (v as f64 * da_scale) as f32);

    model.zero_grad();
    model.backward(Tensor::new(vec![2 * n, classes], grad_logits)?, Some(&grad_latents))?;
    let (grad_norm, clipped_norm) = clip_model_grads(model, schedule.grad_clip);

    let eta = if let Some([d1, d2]) = eta_grad {
        weights.param.grad.data_mut().copy_from_slice(&[d1 as f32, d2 as f32]);
        clip_etas(weights);
        let mut params = model.params_mut();
        params.push(&mut weights.param);
        opt.step(&mut params)?;
        // The update can undo the clip, so the floors are enforced again.
        clip_etas(weights);
        Some((weights.eta1(), weights.eta2()))
    } else {
        opt.step(&mut model.params_mut())?;
        None
    };
    Ok(StepReport {
        l_ce,
        l_da: Some(da.value),
        sigma: da.sigma,
        total,
        grad_norm,
        clipped_norm,
        eta,
        approximate: da.approximate,
    })
}
