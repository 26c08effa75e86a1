//! Sinkhorn-divergence domain adaptation for image classifiers.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`nn`]: a small dense tensor type and hand-written layers with
//!   explicit forward/backward passes, AdamW and gradient clipping.
//! * [`equivariant`]: dihedral groups `D_N`, weight-tied lifting and group
//!   convolutions, group pooling, and the CNN / `D_N` classifier builders.
//! * [`ot`]: log-domain Sinkhorn, the debiased Sinkhorn divergence and its
//!   gradient, kernel MMD, and the dynamic regularization rule.
//! * [`train`]: the adaptation loop with trainable loss weights, warm-up and
//!   checkpoint selection, plus MMD / Wasserstein / fixed-weight baselines.
//! * [`data`]: synthetic shape and astronomical-object generators, Poisson and
//!   PSF covariate shifts, augmentation and the binary dataset container.
//! * [`metrics`]: accuracy, ECE, Brier, silhouette, Jensen-Shannon estimates
//!   and isomap embeddings.
//!
//! Data-parallel inner loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iteration otherwise. Every parallel
//! loop writes disjoint outputs and reduces sequentially, so results do not
//! depend on the thread count.

pub mod data;
pub mod equivariant;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod ot;
pub mod par;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
