//! Training with latent alignment: loss weighting, the optimization step,
//! the epoch loop and model selection.

mod checkpoint;
mod schedule;
mod step;
mod trainer;
mod weights;

pub use checkpoint::Checkpoint;
pub use schedule::{DaMethod, TrainSchedule, MMD_EPS, WASSERSTEIN_SIGMA};
pub use step::{ce_step, da_loss, sidda_step, DaLoss, StepReport};
pub use trainer::{
    chunked_da_loss, evaluate, model_select, train, train_with, validation_split, EpochRecord, History, TrainData,
    TrainOutput, JS_BINS,
};
pub use weights::{clip_etas, total_loss, LossWeights, TotalLoss, ETA1_FLOOR, ETA_RATIO_FLOOR};
