//! Train-time augmentation: quarter turns, flips and integer translations.

use rand::Rng as _;

use crate::{rng, Tensor};

/// One augmentation draw. Applied as flips, then rotation, then translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AugmentParams {
    /// Counter-clockwise quarter turns, `0..4`.
    pub quarter_turns: u8,
    /// Mirror columns.
    pub flip_h: bool,
    /// Mirror rows.
    pub flip_v: bool,
    /// Columns to move right.
    pub shift_x: i32,
    /// Rows to move down.
    pub shift_y: i32,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self {
        quarter_turns: 0,
        flip_h: false,
        flip_v: false,
        shift_x: 0,
        shift_y: 0,
    };

    /// Uniform rotation, fair flips, shifts up to 10% of the side.
    pub fn draw(size: usize, rng: &mut rng::Rng) -> Self {
        let max = (size / 10) as i32;
        Self {
            quarter_turns: rng.random_range(0..4),
            flip_h: rng.random_bool(0.5),
            flip_v: rng.random_bool(0.5),
            shift_x: rng.random_range(-max..=max),
            shift_y: rng.random_range(-max..=max),
        }
    }

    /// Transform a `(C, S, S)` image.
    pub fn apply(&self, img: &[f32], channels: usize, size: usize) -> Vec<f32> {
        let n = size as i64;
        let plane = size * size;
        let mut out = vec![0.0f32; img.len()];
        for i in 0..n {
            for j in 0..n {
                // Invert translation, rotation and flips to find the source.
                let (mut si, mut sj) = (i - self.shift_y as i64, j - self.shift_x as i64);
                if si < 0 || si >= n || sj < 0 || sj >= n {
                    continue;
                }
                for _ in 0..self.quarter_turns % 4 {
                    // Undo one counter-clockwise turn.
                    (si, sj) = (sj, n - 1 - si);
                }
                if self.flip_v {
                    si = n - 1 - si;
                }
                if self.flip_h {
                    sj = n - 1 - sj;
                }
                for c in 0..channels {
                    out[c * plane + (i * n + j) as usize] = img[c * plane + (si * n + sj) as usize];
                }
            }
        }
        out
    }
}

/// Independently augment every image of a square `(B, C, S, S)` batch.
pub fn augment_batch(x: &Tensor, rng: &mut rng::Rng) -> Tensor {
    let shape = x.shape().to_vec();
    let (c, s) = (shape[1], shape[2]);
    let mut data = Vec::with_capacity(x.len());
    for b in 0..shape[0] {
        let p = AugmentParams::draw(s, rng);
        data.extend(p.apply(x.row(b), c, s));
    }
    Tensor::new(shape, data).expect("same shape")
}
