//! Classifier builders: a plain CNN and the `D_N`-equivariant network.
//!
//! Both use three convolution blocks (conv, batch norm, ReLU, 2x2 max pool,
//! dropout) with 5x5/pad 2, 3x3/pad 1 and 3x3/pad 1 kernels, followed by a
//! linear layer to the latent space, layer norm (the latent tap) and a
//! linear head.

use serde::{Deserialize, Serialize};

use super::conv::{group_conv, lift_conv, GridMode};
use super::group::DihedralGroup;
use crate::nn::{BatchNorm, Conv2d, Dense, Dropout, Flatten, GroupPool, Layer, LayerNorm, MaxPool2d, Model, OrbitPool, Relu};
use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Architecture {
    Cnn,
    /// `D_N`-equivariant network with `n` rotations.
    Dihedral { n: usize },
}

/// Everything needed to rebuild a model (e.g. from a checkpoint).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Architecture,
    /// Channels (CNN) or regular fields (`D_N`) of the three blocks.
    pub channels: [usize; 3],
    pub latent_dim: usize,
    pub num_classes: usize,
    /// `(C, H, W)`.
    pub input: [usize; 3],
    pub dropout: f32,
    /// Allow bilinear filter resampling for groups without exact grid action.
    pub resampled: bool,
}

impl ModelSpec {
    pub fn cnn(channels: [usize; 3], num_classes: usize, input: [usize; 3]) -> Self {
        Self {
            arch: Architecture::Cnn,
            channels,
            latent_dim: 256,
            num_classes,
            input,
            dropout: 0.2,
            resampled: false,
        }
    }

    pub fn dihedral(n: usize, channels: [usize; 3], num_classes: usize, input: [usize; 3]) -> Self {
        Self {
            arch: Architecture::Dihedral { n },
            resampled: n > 4 || 4 % n != 0,
            ..Self::cnn(channels, num_classes, input)
        }
    }

    /// True when the network is only approximately equivariant.
    pub fn is_approximate(&self) -> bool {
        match self.arch {
            Architecture::Cnn => false,
            Architecture::Dihedral { n } => !DihedralGroup::new(n).map(|g| g.is_grid_exact()).unwrap_or(false),
        }
    }
}

const KERNELS: [(usize, usize); 3] = [(5, 2), (3, 1), (3, 1)];

fn layer_rng(seed: u64, index: usize) -> Rng {
    rng::from_seed(rng::derive(seed, index as u64))
}

fn check_input(spec: &ModelSpec) -> Result<()> {
    let [c, h, w] = spec.input;
    if c == 0 || h < 8 || w < 8 {
        return Err(Error::Config(format!("input {:?} too small for three pooling stages", spec.input)));
    }
    if spec.channels.contains(&0) || spec.latent_dim == 0 || spec.num_classes == 0 {
        return Err(Error::Config("channels, latent_dim and num_classes must be positive".into()));
    }
    Ok(())
}

fn push_block(layers: &mut Vec<Layer>, conv: Conv2d, features: usize, group: usize, dropout: f32) {
    layers.push(Layer::Conv2d(conv));
    layers.push(Layer::BatchNorm(BatchNorm::new(features, group)));
    layers.push(Layer::Relu(Relu::default()));
    layers.push(Layer::MaxPool2d(MaxPool2d::default()));
    layers.push(Layer::Dropout(Dropout::new(dropout)));
}

fn push_head(layers: &mut Vec<Layer>, spec: &ModelSpec, features: usize, seed: u64) -> usize {
    let n = layers.len();
    layers.push(Layer::Dense(Dense::new(features, spec.latent_dim, &mut layer_rng(seed, n))));
    let tap = layers.len();
    layers.push(Layer::LayerNorm(LayerNorm::new(spec.latent_dim)));
    let n = layers.len();
    layers.push(Layer::Dense(Dense::new(spec.latent_dim, spec.num_classes, &mut layer_rng(seed, n))));
    tap
}

/// Plain CNN; the convolutional features are flattened into the latent layer.
pub fn build_cnn(spec: &ModelSpec, seed: u64) -> Result<Model> {
    check_input(spec)?;
    let [c, mut h, mut w] = spec.input;
    let mut layers = Vec::new();
    let mut cin = c;
    for (b, &(k, p)) in KERNELS.iter().enumerate() {
        let cout = spec.channels[b];
        let conv = Conv2d::new(cin, cout, k, p, &mut layer_rng(seed, layers.len()));
        push_block(&mut layers, conv, cout, 1, spec.dropout);
        cin = cout;
        h /= 2;
        w /= 2;
    }
    layers.push(Layer::Flatten(Flatten::default()));
    let tap = push_head(&mut layers, spec, cin * h * w, seed);
    Model::new(layers, tap, spec.num_classes, spec.input)
}

/// `D_N` network: a lifting convolution and two group convolutions on
/// regular fields, batch norm sharing statistics across each fibre, group
/// max-pooling, then averaging over spatial orbits of the grid-exact
/// subgroup so that the logits are invariant to those transformations.
pub fn build_dn_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    check_input(spec)?;
    let n = match spec.arch {
        Architecture::Dihedral { n } => n,
        Architecture::Cnn => return Err(Error::Config("build_dn_model needs a dihedral spec".into())),
    };
    let [c, h, w] = spec.input;
    if h != w || h % 8 != 0 {
        return Err(Error::Config(format!(
            "equivariant models need square inputs with size divisible by 8, got {h}x{w}"
        )));
    }
    let group = DihedralGroup::new(n)?;
    let mode = if spec.resampled { GridMode::Resampled } else { GridMode::Exact };
    let order = group.order();
    let mut layers = Vec::new();
    let mut fin = 0;
    for (b, &(k, p)) in KERNELS.iter().enumerate() {
        let fout = spec.channels[b];
        let mut r = layer_rng(seed, layers.len());
        let conv = if b == 0 {
            lift_conv(&group, c, fout, k, p, mode, &mut r)?
        } else {
            group_conv(&group, fin, fout, k, p, mode, &mut r)?
        };
        push_block(&mut layers, conv, fout, order, spec.dropout);
        fin = fout;
    }
    let size = h / 8;
    layers.push(Layer::GroupPool(GroupPool::new(order)));
    let orbits = group.grid_orbits(size);
    let pooled = fin * orbits.len();
    layers.push(Layer::OrbitPool(OrbitPool::new(orbits, size, size)));
    let tap = push_head(&mut layers, spec, pooled, seed);
    Model::new(layers, tap, spec.num_classes, spec.input)
}

pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    match spec.arch {
        Architecture::Cnn => build_cnn(spec, seed),
        Architecture::Dihedral { .. } => build_dn_model(spec, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    #[test]
    fn logits_have_class_count() {
        for spec in [
            ModelSpec::cnn([2, 3, 4], 3, [1, 16, 16]),
            ModelSpec::dihedral(4, [1, 2, 2], 5, [1, 16, 16]),
        ] {
            let mut m = build_model(&spec, 1).unwrap();
            let mut r = rng::from_seed(0);
            let (l, z) = m.forward(Tensor::zeros(&[2, 1, 16, 16]), false, &mut r).unwrap();
            assert_eq!(l.shape(), &[2, spec.num_classes]);
            assert_eq!(z.shape(), &[2, 256]);
        }
    }

    #[test]
    fn exact_mode_rejects_d8() {
        let mut spec = ModelSpec::dihedral(8, [1, 1, 1], 3, [1, 16, 16]);
        assert!(spec.resampled && spec.is_approximate());
        spec.resampled = false;
        assert!(matches!(build_model(&spec, 0), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_weights() {
        let spec = ModelSpec::dihedral(2, [1, 2, 2], 3, [1, 16, 16]);
        let mut a = build_model(&spec, 9).unwrap();
        let mut b = build_model(&spec, 9).unwrap();
        assert_eq!(a.state_vector(), b.state_vector());
    }
}
