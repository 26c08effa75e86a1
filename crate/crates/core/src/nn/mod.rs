//! Layers with explicit forward/backward contracts, the sequential classifier
//! model, AdamW, global gradient clipping and the step learning-rate schedule.

mod gemm;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;

pub use layers::{
    BatchNorm, Conv2d, Dense, Dropout, Flatten, GroupPool, Layer, LayerNorm, MaxPool2d, OrbitPool,
    Param, Relu, TieEntry, Tying,
};
pub use loss::{cross_entropy, softmax_rows};
pub use model::Model;
pub use optim::{clip_global_grad_norm, global_grad_norm, lr_schedule, AdamW, AdamWConfig};
