//! Image corruptions applied to standardized, channel-major images.
//!
//! Every transform keeps the image shape. All but occlusion also keep the
//! values within the input's range: blurs, pooling, and interpolation are
//! convex combinations, and the Perlin perturbation is clipped.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::data::reflect;
use crate::error::{Error, Result};
use crate::net::InputShape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Focus,
    Perlin,
    Occlusion,
    Resolution,
    Translation,
    Rotation,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 6] = [
        NoiseKind::Focus,
        NoiseKind::Perlin,
        NoiseKind::Occlusion,
        NoiseKind::Resolution,
        NoiseKind::Translation,
        NoiseKind::Rotation,
    ];
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "focus" => Ok(NoiseKind::Focus),
            "perlin" => Ok(NoiseKind::Perlin),
            "occlusion" => Ok(NoiseKind::Occlusion),
            "resolution" => Ok(NoiseKind::Resolution),
            "translation" => Ok(NoiseKind::Translation),
            "rotation" => Ok(NoiseKind::Rotation),
            other => Err(Error::config(
                "noise",
                format!("unknown noise `{other}` (expected focus | perlin | occlusion | resolution | translation | rotation)"),
            )),
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Focus => "focus",
            NoiseKind::Perlin => "perlin",
            NoiseKind::Occlusion => "occlusion",
            NoiseKind::Resolution => "resolution",
            NoiseKind::Translation => "translation",
            NoiseKind::Rotation => "rotation",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Side of the sharp patch (focus) or the occluder (occlusion).
    pub patch: usize,
    /// Gaussian blur outside the focus patch.
    pub sigma: f64,
    /// Fraction of pixel positions perturbed by Perlin noise.
    pub coverage: f64,
    /// Perlin lattice spacing in pixels.
    pub cell: f64,
    /// Perlin amplitude in units of the image's pixel standard deviation.
    pub amplitude: f64,
    pub occlusion_value: f64,
    /// Downsampling factors, one drawn per application.
    pub factors: Vec<usize>,
    /// Largest translation in pixels along each axis.
    pub max_shift: usize,
    /// Largest rotation in degrees.
    pub max_angle: f64,
}

impl NoiseSpec {
    /// Keys read by [`NoiseSpec::from_kv`].
    pub const KEYS: [&'static str; 9] = [
        "noise_patch",
        "noise_sigma",
        "perlin_coverage",
        "perlin_cell",
        "perlin_amplitude",
        "occlusion_value",
        "resolution_factors",
        "max_shift",
        "max_angle",
    ];

    /// Defaults scaled to the image side: half-side patches, quarter-side
    /// shifts and Perlin cells.
    pub fn new(kind: NoiseKind, shape: InputShape) -> Self {
        let side = shape.height.min(shape.width);
        NoiseSpec {
            kind,
            patch: (side / 2).max(1),
            sigma: 1.0,
            coverage: 0.4,
            cell: (side as f64 / 4.0).max(1.0),
            amplitude: 1.0,
            occlusion_value: 0.0,
            factors: vec![2, 4],
            max_shift: side / 4,
            max_angle: 60.0,
        }
    }

    /// Reads `noise_patch`, `noise_sigma`, `perlin_coverage`, `perlin_cell`,
    /// `perlin_amplitude`, `occlusion_value`, `resolution_factors`,
    /// `max_shift`, and `max_angle` over the defaults.
    pub fn from_kv(kind: NoiseKind, shape: InputShape, kv: &KvConfig) -> Result<Self> {
        let d = NoiseSpec::new(kind, shape);
        let spec = NoiseSpec {
            kind,
            patch: kv.get_or("noise_patch", d.patch)?,
            sigma: kv.get_or("noise_sigma", d.sigma)?,
            coverage: kv.get_or("perlin_coverage", d.coverage)?,
            cell: kv.get_or("perlin_cell", d.cell)?,
            amplitude: kv.get_or("perlin_amplitude", d.amplitude)?,
            occlusion_value: kv.get_or("occlusion_value", d.occlusion_value)?,
            factors: kv.get_list("resolution_factors")?.unwrap_or(d.factors),
            max_shift: kv.get_or("max_shift", d.max_shift)?,
            max_angle: kv.get_or("max_angle", d.max_angle)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.coverage) {
            return Err(Error::config("perlin_coverage", "must lie in [0, 1]"));
        }
        if self.cell <= 0.0 {
            return Err(Error::config("perlin_cell", "must be positive"));
        }
        if self.factors.is_empty() || self.factors.contains(&0) {
            return Err(Error::config("resolution_factors", "need positive factors"));
        }
        if self.sigma < 0.0 || self.max_angle < 0.0 {
            return Err(Error::config("noise_sigma", "must be non-negative"));
        }
        Ok(())
    }
}

/// One corrupted copy of `image`.
pub fn apply_noise(
    image: &[f64],
    shape: InputShape,
    spec: &NoiseSpec,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if image.len() != shape.len() {
        return Err(Error::shape("apply_noise", &[shape.len()], &[image.len()]));
    }
    let (h, w) = (shape.height, shape.width);
    Ok(match spec.kind {
        NoiseKind::Occlusion => {
            let p = spec.patch.min(h).min(w);
            let (y0, x0) = (rng.random_range(0..=h - p), rng.random_range(0..=w - p));
            let mut out = image.to_vec();
            for c in 0..shape.channels {
                for y in y0..y0 + p {
                    let row = (c * h + y) * w;
                    out[row + x0..row + x0 + p].fill(spec.occlusion_value);
                }
            }
            out
        }
        NoiseKind::Focus => {
            let p = spec.patch.min(h).min(w);
            let (y0, x0) = (rng.random_range(0..=h - p), rng.random_range(0..=w - p));
            let mut out = gaussian_blur(image, shape, spec.sigma);
            for c in 0..shape.channels {
                for y in y0..y0 + p {
                    let row = (c * h + y) * w;
                    out[row + x0..row + x0 + p].copy_from_slice(&image[row + x0..row + x0 + p]);
                }
            }
            out
        }
        NoiseKind::Resolution => {
            let f = spec.factors[rng.random_range(0..spec.factors.len())];
            pool_upsample(image, shape, f)
        }
        NoiseKind::Translation => {
            let m = spec.max_shift as i64;
            let dy = rng.random_range(-m..=m) as isize;
            let dx = rng.random_range(-m..=m) as isize;
            let mut out = vec![0.0; image.len()];
            for c in 0..shape.channels {
                for y in 0..h {
                    for x in 0..w {
                        let sy = reflect(y as isize - dy, h);
                        let sx = reflect(x as isize - dx, w);
                        out[(c * h + y) * w + x] = image[(c * h + sy) * w + sx];
                    }
                }
            }
            out
        }
        NoiseKind::Rotation => {
            let deg = if spec.max_angle > 0.0 {
                rng.random_range(-spec.max_angle..=spec.max_angle)
            } else {
                0.0
            };
            rotate(image, shape, deg * PI / 180.0)
        }
        NoiseKind::Perlin => {
            let lattice = PerlinLattice::random(h, w, spec.cell, rng);
            let field = lattice.field(h, w);
            let plane = h * w;
            let k = (spec.coverage * plane as f64).round() as usize;
            let mask = sample(rng, plane, k.min(plane));
            let (lo, hi) = image
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                });
            let n = image.len() as f64;
            let mean = image.iter().sum::<f64>() / n;
            let std = (image.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
            let scale = spec.amplitude * if std > 0.0 { std } else { 1.0 };
            let mut out = image.to_vec();
            for pos in mask.iter() {
                for c in 0..shape.channels {
                    let v = &mut out[c * plane + pos];
                    *v = (*v + scale * field[pos]).clamp(lo, hi);
                }
            }
            out
        }
    })
}

/// Smoothstep fade used between lattice points.
pub fn fade(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Gradient lattice for 2-D Perlin noise. Lattice point `(j, i)` sits at
/// pixel coordinates `(j * cell, i * cell)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerlinLattice {
    pub rows: usize,
    pub cols: usize,
    pub cell: f64,
    /// Unit gradients, row-major over lattice points.
    pub gradients: Vec<(f64, f64)>,
}

impl PerlinLattice {
    /// Enough points to cover every pixel centre of an `h x w` image; one
    /// uniform angle drawn per point in row-major order.
    pub fn random(h: usize, w: usize, cell: f64, rng: &mut impl Rng) -> Self {
        let rows = (h as f64 / cell).floor() as usize + 2;
        let cols = (w as f64 / cell).floor() as usize + 2;
        let gradients = (0..rows * cols)
            .map(|_| {
                let a = rng.random_range(0.0..2.0 * PI);
                (a.cos(), a.sin())
            })
            .collect();
        PerlinLattice {
            rows,
            cols,
            cell,
            gradients,
        }
    }

    /// Noise at pixel coordinates; gradients are `(gx, gy)`.
    pub fn value(&self, y: f64, x: f64) -> f64 {
        let (u, v) = (x / self.cell, y / self.cell);
        let (i, j) = (u.floor() as usize, v.floor() as usize);
        let (fu, fv) = (u - i as f64, v - j as f64);
        let dot = |jj: usize, ii: usize, dy: f64, dx: f64| {
            let (gx, gy) = self.gradients[jj * self.cols + ii];
            gx * dx + gy * dy
        };
        let n00 = dot(j, i, fv, fu);
        let n01 = dot(j, i + 1, fv, fu - 1.0);
        let n10 = dot(j + 1, i, fv - 1.0, fu);
        let n11 = dot(j + 1, i + 1, fv - 1.0, fu - 1.0);
        let (a, b) = (fade(fu), fade(fv));
        let top = n00 + a * (n01 - n00);
        let bottom = n10 + a * (n11 - n10);
        top + b * (bottom - top)
    }

    /// Noise sampled at every pixel centre, row-major.
    pub fn field(&self, h: usize, w: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                out.push(self.value(y as f64 + 0.5, x as f64 + 0.5));
            }
        }
        out
    }
}

/// Separable Gaussian blur with reflected borders. `sigma = 0` copies.
pub fn gaussian_blur(image: &[f64], shape: InputShape, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return image.to_vec();
    }
    let (h, w) = (shape.height, shape.width);
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    let mut tmp = vec![0.0; image.len()];
    let mut out = vec![0.0; image.len()];
    for c in 0..shape.channels {
        let base = c * h * w;
        for y in 0..h {
            for x in 0..w {
                tmp[base + y * w + x] = (-r..=r)
                    .zip(&k)
                    .map(|(d, kv)| kv * image[base + y * w + reflect(x as isize + d, w)])
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                out[base + y * w + x] = (-r..=r)
                    .zip(&k)
                    .map(|(d, kv)| kv * tmp[base + reflect(y as isize + d, h) * w + x])
                    .sum();
            }
        }
    }
    out
}

/// Average pooling over `f x f` blocks (partial at the far edges), then
/// nearest-neighbour upsampling back to full size.
pub fn pool_upsample(image: &[f64], shape: InputShape, f: usize) -> Vec<f64> {
    let (h, w) = (shape.height, shape.width);
    let mut out = vec![0.0; image.len()];
    for c in 0..shape.channels {
        let base = c * h * w;
        for by in (0..h).step_by(f) {
            for bx in (0..w).step_by(f) {
                let (y1, x1) = ((by + f).min(h), (bx + f).min(w));
                let mut sum = 0.0;
                for y in by..y1 {
                    sum += image[base + y * w + bx..base + y * w + x1]
                        .iter()
                        .sum::<f64>();
                }
                let mean = sum / ((y1 - by) * (x1 - bx)) as f64;
                for y in by..y1 {
                    out[base + y * w + bx..base + y * w + x1].fill(mean);
                }
            }
        }
    }
    out
}

/// Continuous coordinate mirrored into `[0, n - 1]`.
fn reflect_coord(v: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let last = (n - 1) as f64;
    let period = 2.0 * last;
    let v = v.rem_euclid(period);
    if v > last {
        period - v
    } else {
        v
    }
}

/// Rotation about the image centre with bilinear sampling of the
/// reflection-padded image.
pub fn rotate(image: &[f64], shape: InputShape, radians: f64) -> Vec<f64> {
    let (h, w) = (shape.height, shape.width);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s, co) = radians.sin_cos();
    let mut out = vec![0.0; image.len()];
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            // Inverse map: where this output pixel came from.
            let sy = reflect_coord(cy + co * dy - s * dx, h);
            let sx = reflect_coord(cx + s * dy + co * dx, w);
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            for c in 0..shape.channels {
                let p = |yy: usize, xx: usize| image[(c * h + yy) * w + xx];
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out[(c * h + y) * w + x] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}
