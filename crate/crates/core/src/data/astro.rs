//! Spiral galaxies, elliptical galaxies and star fields.
//!
//! Parameter ranges, in units of the image side `S`:
//! spirals have 2 to 4 arms, pitch 10 to 35 degrees, 0.5 to 1.5 turns,
//! outer radius 0.25S to 0.45S and arm width 0.8 to 1.8 px, plus a small
//! Gaussian bulge. Ellipticals follow a Sérsic law with amplitude 0.6 to 1,
//! effective radius 0.06S to 0.18S, index 0.5 to 4 and ellipticity 0 to 0.6
//! at any orientation. Star fields hold 0 to 10 Gaussian sources of width
//! 0.6 to 1.5 px and amplitude 0.3 to 1 placed anywhere in the frame.
//! Galaxy centroids are jittered by up to 0.1S. Every image is scaled to a
//! maximum of 1 (star fields are clamped instead).

use std::f64::consts::{PI, TAU};

use rand::Rng as _;

use super::dataset::Dataset;
use crate::{par, rng, Error, Result};

pub const ASTRO_CLASSES: [&str; 3] = ["spiral", "elliptical", "stars"];

/// `I(r) = A exp(-b (r / r_e)^(1 / n))` on elliptical radii
/// `r^2 = u^2 + (v / (1 - e))^2` in a frame rotated by `angle`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SersicProfile {
    pub amplitude: f64,
    pub r_e: f64,
    pub index: f64,
    pub ellipticity: f64,
    pub angle: f64,
    pub center: (f64, f64),
}

impl SersicProfile {
    /// Standard approximation of the constant that makes `r_e` the
    /// half-light radius.
    pub fn b(&self) -> f64 {
        2.0 * self.index - 1.0 / 3.0
    }

    /// Intensity at pixel coordinates (column, row).
    pub fn intensity(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (s, c) = self.angle.sin_cos();
        let u = dx * c + dy * s;
        let v = (-dx * s + dy * c) / (1.0 - self.ellipticity);
        let r = (u * u + v * v).sqrt();
        self.amplitude * (-self.b() * (r / self.r_e).powf(1.0 / self.index)).exp()
    }

    pub fn render(&self, size: usize) -> Vec<f32> {
        let mut img = vec![0.0f32; size * size];
        for i in 0..size {
            for j in 0..size {
                img[i * size + j] = self.intensity(j as f64, i as f64) as f32;
            }
        }
        img
    }
}

/// Logarithmic spiral arms `r = a exp(b theta)` with `b = tan(pitch)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpiralParams {
    pub arms: u32,
    pub pitch: f64,
    pub winding: f64,
    pub r_max: f64,
    pub width: f64,
    pub phase: f64,
    pub bulge: f64,
    pub center: (f64, f64),
    /// +1 or -1, sense of rotation.
    pub chirality: f64,
}

impl SpiralParams {
    pub fn intensity(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let r = (dx * dx + dy * dy).sqrt();
        let b = self.pitch.tan();
        let r_min = self.r_max * (-b * TAU * self.winding).exp();
        let bulge = (-r * r / (2.0 * self.bulge * self.bulge)).exp();
        if r < r_min * 0.5 || r > self.r_max + 2.0 * self.width {
            return bulge;
        }
        let theta = self.chirality * dy.atan2(dx);
        let arm_theta = (r.max(r_min) / r_min).ln() / b + self.phase;
        let sector = TAU / self.arms as f64;
        let mut d = (theta - arm_theta).rem_euclid(sector);
        if d > sector / 2.0 {
            d -= sector;
        }
        // Perpendicular distance to the arm along the circle of radius r.
        let dist = r * d.abs() * self.pitch.sin();
        let fade = (-(r / self.r_max).powi(2)).exp();
        let taper = ((self.r_max + 2.0 * self.width - r) / (2.0 * self.width)).clamp(0.0, 1.0);
        bulge + fade * taper * (-dist * dist / (2.0 * self.width * self.width)).exp()
    }

    pub fn render(&self, size: usize) -> Vec<f32> {
        let mut img = vec![0.0f32; size * size];
        for i in 0..size {
            for j in 0..size {
                img[i * size + j] = self.intensity(j as f64, i as f64) as f32;
            }
        }
        img
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Star {
    pub position: (f64, f64),
    pub width: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarField {
    pub stars: Vec<Star>,
}

impl StarField {
    pub fn render(&self, size: usize) -> Vec<f32> {
        let mut img = vec![0.0f32; size * size];
        for i in 0..size {
            for j in 0..size {
                let v: f64 = self
                    .stars
                    .iter()
                    .map(|s| {
                        let d2 = (j as f64 - s.position.0).powi(2) + (i as f64 - s.position.1).powi(2);
                        s.amplitude * (-d2 / (2.0 * s.width * s.width)).exp()
                    })
                    .sum();
                img[i * size + j] = v.min(1.0) as f32;
            }
        }
        img
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AstroObject {
    Spiral(SpiralParams),
    Elliptical(SersicProfile),
    Stars(StarField),
}

fn jittered_center(size: usize, rng: &mut rng::Rng) -> (f64, f64) {
    let mid = (size as f64 - 1.0) / 2.0;
    let j = 0.1 * size as f64;
    (mid + rng.random_range(-j..j), mid + rng.random_range(-j..j))
}

impl AstroObject {
    pub fn class(&self) -> u16 {
        match self {
            AstroObject::Spiral(_) => 0,
            AstroObject::Elliptical(_) => 1,
            AstroObject::Stars(_) => 2,
        }
    }

    pub fn draw(class: u16, size: usize, rng: &mut rng::Rng) -> Self {
        let s = size as f64;
        match class {
            0 => AstroObject::Spiral(SpiralParams {
                arms: rng.random_range(2..=4),
                pitch: rng.random_range(10.0f64..35.0).to_radians(),
                winding: rng.random_range(0.5..1.5),
                r_max: rng.random_range(0.25 * s..0.45 * s),
                width: rng.random_range(0.8..1.8),
                phase: rng.random_range(0.0..TAU),
                bulge: rng.random_range(0.03 * s..0.06 * s),
                center: jittered_center(size, rng),
                chirality: if rng.random_bool(0.5) { 1.0 } else { -1.0 },
            }),
            1 => AstroObject::Elliptical(SersicProfile {
                amplitude: rng.random_range(0.6..1.0),
                r_e: rng.random_range(0.06 * s..0.18 * s),
                index: rng.random_range(0.5..4.0),
                ellipticity: rng.random_range(0.0..0.6),
                angle: rng.random_range(0.0..PI),
                center: jittered_center(size, rng),
            }),
            _ => {
                let count = rng.random_range(0..=10);
                let stars = (0..count)
                    .map(|_| Star {
                        position: (rng.random_range(0.0..s - 1.0), rng.random_range(0.0..s - 1.0)),
                        width: rng.random_range(0.6..1.5),
                        amplitude: rng.random_range(0.3..1.0),
                    })
                    .collect();
                AstroObject::Stars(StarField { stars })
            }
        }
    }

    pub fn render(&self, size: usize) -> Vec<f32> {
        match self {
            AstroObject::Spiral(p) => normalize_max(p.render(size)),
            AstroObject::Elliptical(p) => normalize_max(p.render(size)),
            AstroObject::Stars(p) => p.render(size),
        }
    }
}

fn normalize_max(mut img: Vec<f32>) -> Vec<f32> {
    let max = img.iter().copied().fold(0.0f32, f32::max);
    if max > 0.0 {
        img.iter_mut().for_each(|v| *v /= max);
    }
    img
}

/// `n` single-channel `size x size` images, label `i % 3`.
pub fn gen_astro(n: usize, size: usize, seed: u64) -> Result<Dataset> {
    if size < 32 {
        return Err(Error::Config(format!("astronomical images need size >= 32, got {size}")));
    }
    let gen_seed = rng::derive(seed, rng::Stream::Generate as u64 + 0x100);
    let images = par::map_range(n, |i| {
        let mut r = rng::from_seed(rng::derive(gen_seed, i as u64));
        AstroObject::draw((i % 3) as u16, size, &mut r).render(size)
    });
    let labels = (0..n).map(|i| (i % 3) as u16).collect();
    Dataset::new(1, size, size, 3, labels, images.concat())
}
