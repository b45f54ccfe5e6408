//! Procedural image classes built from Gaussian blobs.
//!
//! Each coarse group owns a few blobs shared by all of its classes; each
//! class adds blobs of its own. An instance draws an atypicality `a` in
//! `[0, 1)` that scales how far it strays from its prototype: blob
//! positions jitter, amplitudes wobble, and the image is partly blended
//! with a sibling class from the same group.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::net::InputShape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// Coarse groups; must divide `classes`.
    pub superclasses: usize,
    pub side: usize,
    pub channels: usize,
    /// Instances per class in the training pool (before the validation split).
    pub per_class: usize,
    pub test_per_class: usize,
    pub shared_blobs: usize,
    pub class_blobs: usize,
    /// Standard deviation of each blob, in pixels.
    pub blob_width: f64,
    /// Position jitter, in pixels, at atypicality 1.
    pub jitter: f64,
    /// Largest weight given to the sibling class at atypicality 1.
    pub blend: f64,
    /// Per-pixel Gaussian noise.
    pub noise: f64,
    pub prototype_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 10,
            superclasses: 5,
            side: 16,
            channels: 1,
            per_class: 120,
            test_per_class: 40,
            shared_blobs: 2,
            class_blobs: 2,
            blob_width: 1.5,
            jitter: 2.0,
            blend: 0.5,
            noise: 0.3,
            prototype_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Blob {
    y: f64,
    x: f64,
    amp: f64,
    channel: usize,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("classes", "need at least two classes"));
        }
        if self.superclasses == 0 || self.classes % self.superclasses != 0 {
            return Err(Error::config("superclasses", "must divide the class count"));
        }
        if self.side < 4 || self.channels == 0 || self.per_class == 0 {
            return Err(Error::config(
                "side",
                "image side must be at least 4 with non-empty classes",
            ));
        }
        if self.class_blobs == 0 {
            return Err(Error::config(
                "class_blobs",
                "each class needs at least one blob",
            ));
        }
        for (k, v) in [
            ("blob_width", self.blob_width),
            ("jitter", self.jitter),
            ("noise", self.noise),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(k, "must be finite and non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&self.blend) {
            return Err(Error::config("blend", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn shape(&self) -> InputShape {
        InputShape {
            channels: self.channels,
            height: self.side,
            width: self.side,
        }
    }

    pub fn coarse_map(&self) -> Vec<usize> {
        let per = self.classes / self.superclasses;
        (0..self.classes).map(|c| c / per).collect()
    }

    /// A related family drawn from different prototypes with wider blobs,
    /// used as out-of-distribution data.
    pub fn ood_family(&self) -> SyntheticSpec {
        SyntheticSpec {
            prototype_seed: self.prototype_seed.wrapping_add(0x9e37_79b9),
            blob_width: self.blob_width * 1.6,
            ..self.clone()
        }
    }

    fn prototypes(&self) -> Vec<Vec<Blob>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.prototype_seed);
        let margin = 2.0f64.min(self.side as f64 / 4.0);
        let hi = self.side as f64 - 1.0 - margin;
        let blob = |rng: &mut ChaCha8Rng| Blob {
            y: rng.random_range(margin..=hi),
            x: rng.random_range(margin..=hi),
            amp: rng.random_range(0.6..=1.0) * if rng.random_bool(0.25) { -1.0 } else { 1.0 },
            channel: rng.random_range(0..self.channels),
        };
        let shared: Vec<Vec<Blob>> = (0..self.superclasses)
            .map(|_| (0..self.shared_blobs).map(|_| blob(&mut rng)).collect())
            .collect();
        let map = self.coarse_map();
        (0..self.classes)
            .map(|c| {
                let mut b = shared[map[c]].clone();
                b.extend((0..self.class_blobs).map(|_| blob(&mut rng)));
                b
            })
            .collect()
    }

    fn render(&self, blobs: &[Blob], weight: f64, out: &mut [f64]) {
        let s = self.side;
        let inv = if self.blob_width > 0.0 {
            1.0 / (2.0 * self.blob_width * self.blob_width)
        } else {
            f64::INFINITY
        };
        for b in blobs {
            for y in 0..s {
                for x in 0..s {
                    let d2 = (y as f64 - b.y).powi(2) + (x as f64 - b.x).powi(2);
                    let v = if inv.is_finite() {
                        (-d2 * inv).exp()
                    } else {
                        (d2 < 0.25) as u8 as f64
                    };
                    out[(b.channel * s + y) * s + x] += weight * b.amp * v;
                }
            }
        }
    }

    fn instance(
        &self,
        protos: &[Vec<Blob>],
        class: usize,
        rng: &mut ChaCha8Rng,
        out: &mut [f64],
    ) -> f64 {
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let a: f64 = rng.random_range(0.0..1.0);
        let per = self.classes / self.superclasses;
        let group = class / per;
        let sibling = if per > 1 {
            let k = rng.random_range(0..per - 1);
            let s = group * per + k;
            if s >= class {
                s + 1
            } else {
                s
            }
        } else {
            (class + 1 + rng.random_range(0..self.classes - 1)) % self.classes
        };
        let perturb = |blobs: &[Blob], rng: &mut ChaCha8Rng| -> Vec<Blob> {
            blobs
                .iter()
                .map(|b| Blob {
                    y: b.y + self.jitter * a * unit.sample(rng),
                    x: b.x + self.jitter * a * unit.sample(rng),
                    amp: b.amp * (1.0 + 0.3 * a * unit.sample(rng)),
                    channel: b.channel,
                })
                .collect()
        };
        let mix = self.blend * a;
        let own = perturb(&protos[class], rng);
        let other = perturb(&protos[sibling], rng);
        out.iter_mut().for_each(|v| *v = 0.0);
        self.render(&own, 1.0 - mix, out);
        self.render(&other, mix, out);
        for v in out.iter_mut() {
            *v += self.noise * unit.sample(rng);
        }
        a
    }

    fn draw(
        &self,
        per_class: usize,
        protos: &[Vec<Blob>],
        rng: &mut ChaCha8Rng,
    ) -> Result<Dataset> {
        let d = self.shape().len();
        let n = per_class * self.classes;
        let mut pixels = vec![0.0; n * d];
        let mut labels = Vec::with_capacity(n);
        let mut atyp = Vec::with_capacity(n);
        for i in 0..n {
            // Interleave classes so any prefix is roughly balanced.
            let c = i % self.classes;
            atyp.push(self.instance(protos, c, rng, &mut pixels[i * d..(i + 1) * d]));
            labels.push(c);
        }
        let mut ds = Dataset::new(self.shape(), self.classes, pixels, labels)?
            .with_coarse_map(self.coarse_map())?;
        ds.atypicality = Some(atyp);
        Ok(ds)
    }

    /// Training pool and test set. Prototypes depend only on
    /// `prototype_seed`; instances on `seed`.
    pub fn generate(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        let protos = self.prototypes();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = self.draw(self.per_class, &protos, &mut rng)?;
        let test = self.draw(self.test_per_class, &protos, &mut rng)?;
        Ok((train, test))
    }
}
