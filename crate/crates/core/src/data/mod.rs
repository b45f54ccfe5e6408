//! Image datasets, loaders, splitting, and augmentation.

mod augment;
mod cifar;
mod idx;
mod split;
mod synthetic;

use serde::{Deserialize, Serialize};

pub(crate) use augment::reflect;
pub use augment::{Augment, CUTOUT_SIDE, PAD};
pub use cifar::load_cifar;
pub use idx::{load_idx, read_idx};
pub use split::balanced_split;
pub use synthetic::SyntheticSpec;

use crate::error::{Error, Result};
use crate::net::InputShape;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Images stored channel-major (`[c][h][w]`) and flattened, one row each.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub shape: InputShape,
    pub classes: usize,
    pub pixels: Vec<f64>,
    pub labels: Vec<usize>,
    /// Fine class to coarse class.
    pub coarse_map: Option<Vec<usize>>,
    /// Per-instance distance from its class prototype (synthetic data only).
    pub atypicality: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(
        shape: InputShape,
        classes: usize,
        pixels: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if pixels.len() != labels.len() * shape.len() {
            return Err(Error::shape(
                "dataset",
                &[labels.len(), shape.len()],
                &[pixels.len()],
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Dataset {
            shape,
            classes,
            pixels,
            labels,
            coarse_map: None,
            atypicality: None,
        })
    }

    pub fn with_coarse_map(mut self, map: Vec<usize>) -> Result<Self> {
        if map.len() != self.classes {
            return Err(Error::contract(format!(
                "coarse map covers {} classes, dataset has {}",
                map.len(),
                self.classes
            )));
        }
        self.coarse_map = Some(map);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let d = self.shape.len();
        &self.pixels[i * d..(i + 1) * d]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut pixels = Vec::with_capacity(indices.len() * self.shape.len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        Dataset {
            shape: self.shape,
            classes: self.classes,
            pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            coarse_map: self.coarse_map.clone(),
            atypicality: self
                .atypicality
                .as_ref()
                .map(|a| indices.iter().map(|&i| a[i]).collect()),
        }
    }

    /// Stacks the chosen images into an `[n, len]` tensor, standardized when
    /// a standardizer is given.
    pub fn batch<S: Scalar>(
        &self,
        indices: &[usize],
        standardizer: Option<&Standardizer>,
    ) -> Tensor<S> {
        let d = self.shape.len();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            match standardizer {
                Some(s) => data.extend(
                    s.apply(self.image(i), self.shape)
                        .into_iter()
                        .map(S::from_f64_lossy),
                ),
                None => data.extend(self.image(i).iter().map(|&v| S::from_f64_lossy(v))),
            }
        }
        Tensor::new(vec![indices.len(), d], data).expect("rows of image length")
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Per-channel mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Self {
        let c = data.shape.channels;
        let plane = data.shape.height * data.shape.width;
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for i in 0..data.len() {
            for (k, &v) in data.image(i).iter().enumerate() {
                sum[k / plane] += v;
                sq[k / plane] += v * v;
            }
        }
        let n = (data.len() * plane).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, image: &[f64], shape: InputShape) -> Vec<f64> {
        let plane = shape.height * shape.width;
        image
            .iter()
            .enumerate()
            .map(|(k, &v)| (v - self.mean[k / plane]) / self.std[k / plane])
            .collect()
    }

    pub fn apply_in_place(&self, image: &mut [f64], shape: InputShape) {
        let plane = shape.height * shape.width;
        for (k, v) in image.iter_mut().enumerate() {
            *v = (*v - self.mean[k / plane]) / self.std[k / plane];
        }
    }
}
