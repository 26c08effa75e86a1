//! Datasets, synthetic generators, covariate shifts and augmentation.

mod astro;
mod augment;
mod dataset;
pub mod format;
mod shapes;
mod shift;

pub use astro::{gen_astro, AstroObject, SersicProfile, SpiralParams, Star, StarField, ASTRO_CLASSES};
pub use augment::{augment_batch, AugmentParams};
pub use dataset::Dataset;
pub use format::{read_dataset, write_dataset};
pub use shapes::{gen_shapes, Shape, ShapeParams, SHAPE_CLASSES};
pub use shift::{gaussian_kernel, poisson_rate, poisson_shift, psf_blur, reflect_index, ShiftConfig};
