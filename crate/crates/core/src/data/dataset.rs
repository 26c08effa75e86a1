//! In-memory labelled image dataset.

use rand::seq::SliceRandom;

use crate::rng::Rng;
use crate::{Error, Result, Tensor};

/// Images stored sample-major as `(count, C, H, W)` f32 plus one label each.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub labels: Vec<u16>,
    pub pixels: Vec<f32>,
}

impl Dataset {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        num_classes: usize,
        labels: Vec<u16>,
        pixels: Vec<f32>,
    ) -> Result<Self> {
        let ds = Self {
            channels,
            height,
            width,
            num_classes,
            labels,
            pixels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn empty(channels: usize, height: usize, width: usize, num_classes: usize) -> Self {
        Self {
            channels,
            height,
            width,
            num_classes,
            labels: Vec::new(),
            pixels: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pixels.len() != self.labels.len() * self.sample_len() {
            return Err(Error::Shape(format!(
                "{} labels need {} pixels, found {}",
                self.labels.len(),
                self.labels.len() * self.sample_len(),
                self.pixels.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l as usize >= self.num_classes) {
            return Err(Error::Config(format!("label {bad} out of range for {} classes", self.num_classes)));
        }
        if self.pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("dataset contains non-finite pixels".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Values per sample, `C * H * W`.
    pub fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// `(C, H, W)`.
    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn push(&mut self, image: &[f32], label: u16) -> Result<()> {
        if image.len() != self.sample_len() || label as usize >= self.num_classes {
            return Err(Error::Shape(format!(
                "sample of {} values / label {label} does not fit dataset",
                image.len()
            )));
        }
        self.pixels.extend_from_slice(image);
        self.labels.push(label);
        Ok(())
    }

    /// Images at `indices` as a `(len, C, H, W)` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Tensor::new(vec![indices.len(), self.channels, self.height, self.width], data).expect("shape matches")
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<u16> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// All images as one tensor.
    pub fn tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.len(), self.channels, self.height, self.width],
            self.pixels.clone(),
        )
        .expect("validated dataset")
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            labels: self.batch_labels(indices),
            pixels: self.batch(indices).into_data(),
            ..Dataset::empty(self.channels, self.height, self.width, self.num_classes)
        }
    }

    /// Random split into `(train, held_out)` with `round(len * fraction)`
    /// held-out samples.
    pub fn split(&self, fraction: f64, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Config(format!("split fraction must be in [0, 1), got {fraction}")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        let held = (self.len() as f64 * fraction).round() as usize;
        let (h, t) = idx.split_at(held);
        let (mut h, mut t) = (h.to_vec(), t.to_vec());
        h.sort_unstable();
        t.sort_unstable();
        Ok((self.subset(&t), self.subset(&h)))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    pub fn same_geometry(&self, other: &Dataset) -> bool {
        self.image_shape() == other.image_shape() && self.num_classes == other.num_classes
    }
}
