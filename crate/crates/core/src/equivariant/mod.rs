//! Dihedral-group equivariant convolutions and the classifier builders.

mod conv;
mod group;
mod models;

pub use conv::{group_conv, group_tying, lift_conv, lift_tying, GridMode};
pub use group::DihedralGroup;
pub use models::{build_cnn, build_dn_model, build_model, Architecture, ModelSpec};
