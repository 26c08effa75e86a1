//! Line, rectangle and circle outlines.
//!
//! Parameter ranges, in units of the image side `S`:
//! stroke thickness 1.5 to 3 px; line length 0.5S to 0.9S at any angle;
//! rectangle sides 0.4S to 0.75S rotated by up to 90 degrees; circle radius
//! 0.2S to 0.4S; brightness 0.7 to 1. Centres are jittered by up to 0.1S
//! and then pulled back so the whole stroke stays inside the frame.

use rand::Rng as _;

use super::dataset::Dataset;
use crate::{par, rng, Error, Result};

pub const SHAPE_CLASSES: [&str; 3] = ["line", "rectangle", "circle"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Line { length: f64, angle: f64 },
    Rectangle { width: f64, height: f64, angle: f64 },
    Circle { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeParams {
    pub shape: Shape,
    /// Centre in pixel coordinates (column, row).
    pub center: (f64, f64),
    pub thickness: f64,
    pub brightness: f64,
}

impl Shape {
    pub fn class(&self) -> u16 {
        match self {
            Shape::Line { .. } => 0,
            Shape::Rectangle { .. } => 1,
            Shape::Circle { .. } => 2,
        }
    }

    /// Distance from a point in the shape frame to the outline.
    fn distance(&self, dx: f64, dy: f64) -> f64 {
        match *self {
            Shape::Line { length, angle } => {
                let (s, c) = angle.sin_cos();
                let along = (dx * c + dy * s).clamp(-length / 2.0, length / 2.0);
                ((dx - along * c).powi(2) + (dy - along * s).powi(2)).sqrt()
            }
            Shape::Rectangle { width, height, angle } => {
                let (s, c) = angle.sin_cos();
                let u = (dx * c + dy * s).abs() - width / 2.0;
                let v = (-dx * s + dy * c).abs() - height / 2.0;
                let outside = (u.max(0.0).powi(2) + v.max(0.0).powi(2)).sqrt();
                (outside + u.max(v).min(0.0)).abs()
            }
            Shape::Circle { radius } => ((dx * dx + dy * dy).sqrt() - radius).abs(),
        }
    }

    /// Half extents of the bounding box.
    fn extent(&self) -> (f64, f64) {
        match *self {
            Shape::Line { length, angle } => {
                let (s, c) = angle.sin_cos();
                (length / 2.0 * c.abs(), length / 2.0 * s.abs())
            }
            Shape::Rectangle { width, height, angle } => {
                let (s, c) = angle.sin_cos();
                (
                    (width * c.abs() + height * s.abs()) / 2.0,
                    (width * s.abs() + height * c.abs()) / 2.0,
                )
            }
            Shape::Circle { radius } => (radius, radius),
        }
    }
}

impl ShapeParams {
    pub fn draw(class: u16, size: usize, rng: &mut rng::Rng) -> Self {
        let s = size as f64;
        let shape = match class {
            0 => Shape::Line {
                length: rng.random_range(0.5 * s..0.9 * s),
                angle: rng.random_range(0.0..std::f64::consts::PI),
            },
            1 => Shape::Rectangle {
                width: rng.random_range(0.4 * s..0.75 * s),
                height: rng.random_range(0.4 * s..0.75 * s),
                angle: rng.random_range(0.0..std::f64::consts::FRAC_PI_2),
            },
            _ => Shape::Circle {
                radius: rng.random_range(0.2 * s..0.4 * s),
            },
        };
        let thickness = rng.random_range(1.5..3.0);
        let brightness = rng.random_range(0.7..1.0);
        let mid = (s - 1.0) / 2.0;
        let (ex, ey) = shape.extent();
        let margin = thickness / 2.0 + 1.0;
        let fit = |e: f64, j: f64| {
            let room = (mid - e - margin).max(0.0);
            mid + j.clamp(-room, room)
        };
        let jx = rng.random_range(-0.1 * s..0.1 * s);
        let jy = rng.random_range(-0.1 * s..0.1 * s);
        Self {
            shape,
            center: (fit(ex, jx), fit(ey, jy)),
            thickness,
            brightness,
        }
    }

    /// Antialiased stroke: full intensity within half the thickness, linear
    /// falloff over one pixel.
    pub fn render(&self, size: usize) -> Vec<f32> {
        let mut img = vec![0.0f32; size * size];
        for i in 0..size {
            for j in 0..size {
                let d = self.shape.distance(j as f64 - self.center.0, i as f64 - self.center.1);
                let cover = (self.thickness / 2.0 + 0.5 - d).clamp(0.0, 1.0);
                img[i * size + j] = (self.brightness * cover) as f32;
            }
        }
        img
    }
}

/// `n` single-channel `size x size` images, label `i % 3`.
pub fn gen_shapes(n: usize, size: usize, seed: u64) -> Result<Dataset> {
    if size < 16 {
        return Err(Error::Config(format!("shape images need size >= 16, got {size}")));
    }
    let gen_seed = rng::derive(seed, rng::Stream::Generate as u64);
    let images = par::map_range(n, |i| {
        let mut r = rng::from_seed(rng::derive(gen_seed, i as u64));
        ShapeParams::draw((i % 3) as u16, size, &mut r).render(size)
    });
    let labels = (0..n).map(|i| (i % 3) as u16).collect();
    Dataset::new(1, size, size, 3, labels, images.concat())
}
