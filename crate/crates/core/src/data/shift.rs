//! Covariate shifts applied to build target domains.

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::{par, rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ShiftConfig {
    None,
    /// Poisson noise at signal-to-noise ratio `snr`.
    Poisson { snr: f64 },
    /// Gaussian blur of width `eps` pixels.
    Psf { eps: f64 },
}

impl ShiftConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ShiftConfig::Poisson { snr } if !(snr > 0.0) => {
                Err(Error::Config(format!("poisson snr must be > 0, got {snr}")))
            }
            ShiftConfig::Psf { eps } if !(eps > 0.0) => Err(Error::Config(format!("psf eps must be > 0, got {eps}"))),
            _ => Ok(()),
        }
    }

    /// Shift one `(C, H, W)` image.
    pub fn apply(&self, img: &[f32], shape: [usize; 3], rng: &mut rng::Rng) -> Result<Vec<f32>> {
        self.validate()?;
        match *self {
            ShiftConfig::None => Ok(img.to_vec()),
            ShiftConfig::Poisson { snr } => poisson_shift(img, snr, rng),
            ShiftConfig::Psf { eps } => psf_blur(img, shape, eps),
        }
    }

    /// Shift every image; sample `i` draws from its own derived stream.
    pub fn apply_dataset(&self, ds: &Dataset, seed: u64) -> Result<Dataset> {
        self.validate()?;
        let base = rng::derive(seed, rng::Stream::Shift as u64);
        let shape = ds.image_shape();
        let images = par::map_range(ds.len(), |i| {
            let mut r = rng::from_seed(rng::derive(base, i as u64));
            self.apply(ds.image(i), shape, &mut r)
        });
        let mut pixels = Vec::with_capacity(ds.pixels.len());
        for img in images {
            pixels.extend(img?);
        }
        Dataset::new(ds.channels, ds.height, ds.width, ds.num_classes, ds.labels.clone(), pixels)
    }
}

/// Poisson rate `<I>/S - <I>` with `<I>` the mean over all values.
pub fn poisson_rate(img: &[f32], snr: f64) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(Error::Config(format!("poisson snr must be > 0, got {snr}")));
    }
    let mean = img.iter().map(|&v| v as f64).sum::<f64>() / img.len().max(1) as f64;
    let rate = mean / snr - mean;
    if rate < 0.0 {
        return Err(Error::Config(format!(
            "poisson rate {rate} is negative (mean {mean}, snr {snr}); snr must be <= 1"
        )));
    }
    Ok(rate)
}

/// Adds independent Poisson counts at the global rate to every pixel, then
/// rescales to a maximum of 1.
pub fn poisson_shift(img: &[f32], snr: f64, rng: &mut rng::Rng) -> Result<Vec<f32>> {
    let rate = poisson_rate(img, snr)?;
    if rate == 0.0 {
        return Ok(img.to_vec());
    }
    let dist = Poisson::new(rate).map_err(|e| Error::Config(format!("poisson rate {rate}: {e}")))?;
    let mut out: Vec<f32> = img.iter().map(|&v| v + dist.sample(rng) as f32).collect();
    let max = out.iter().copied().fold(0.0f32, f32::max);
    if max > 0.0 {
        out.iter_mut().for_each(|v| *v /= max);
    }
    Ok(out)
}

/// Gaussian taps `exp(-t^2 / 2 eps^2)` for `t` in `-radius..=radius`,
/// `radius = ceil(3 eps)`, normalised to sum 1.
pub fn gaussian_kernel(eps: f64) -> Vec<f64> {
    let radius = (3.0 * eps).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|t| (-(t * t) as f64 / (2.0 * eps * eps)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Mirror index into `0..n` without repeating the edge sample.
pub fn reflect_index(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

/// Per-channel separable Gaussian blur with reflect padding.
pub fn psf_blur(img: &[f32], shape: [usize; 3], eps: f64) -> Result<Vec<f32>> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("psf eps must be > 0, got {eps}")));
    }
    let [c, h, w] = shape;
    if img.len() != c * h * w {
        return Err(Error::Shape(format!("image of {} values is not {c}x{h}x{w}", img.len())));
    }
    let k = gaussian_kernel(eps);
    let r = (k.len() / 2) as i64;
    let mut out = vec![0.0f32; img.len()];
    let mut tmp = vec![0.0f64; h * w];
    for ch in 0..c {
        let plane = &img[ch * h * w..(ch + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                tmp[i * w + j] = k
                    .iter()
                    .enumerate()
                    .map(|(t, kv)| kv * plane[i * w + reflect_index(j as i64 + t as i64 - r, w)] as f64)
                    .sum();
            }
        }
        for i in 0..h {
            for j in 0..w {
                let v: f64 = k
                    .iter()
                    .enumerate()
                    .map(|(t, kv)| kv * tmp[reflect_index(i as i64 + t as i64 - r, h) * w + j])
                    .sum();
                out[ch * h * w + i * w + j] = v as f32;
            }
        }
    }
    Ok(out)
}
