//! Temporal kernels and per-block delay lines.
//!
//! A block's transform history `[z'_t, z'_{t-1}, ..., z'_1]` is convolved with
//! a kernel before it reaches the next block. Identity transmits instantly,
//! one-step delay (OSD) shifts by one update, and exponentially weighted
//! smoothing (EWS) blends the history with weights `(1-a) a^i`.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Backend, Eager};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemporalKernel {
    Identity,
    OneStepDelay,
    ExpSmoothing { alpha: f64 },
    Explicit { weights: Vec<f64> },
}

impl TemporalKernel {
    pub fn ews(alpha: f64) -> Result<Self> {
        let k = TemporalKernel::ExpSmoothing { alpha };
        k.validate()?;
        Ok(k)
    }

    pub fn explicit(weights: Vec<f64>) -> Result<Self> {
        let k = TemporalKernel::Explicit { weights };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TemporalKernel::ExpSmoothing { alpha } if !(0.0..1.0).contains(alpha) => {
                Err(Error::config("alpha", format!("{alpha} is outside [0, 1)")))
            }
            TemporalKernel::Explicit { weights }
                if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) =>
            {
                Err(Error::config(
                    "kernel",
                    "explicit weights must be finite and non-negative",
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, TemporalKernel::Identity)
    }

    /// The first `length` kernel weights. EWS is truncated, not
    /// renormalized, so the missing tail mass is `alpha^length`.
    pub fn weights(&self, length: usize) -> Vec<f64> {
        let mut w = vec![0.0; length];
        match self {
            TemporalKernel::Identity => {
                if let Some(first) = w.first_mut() {
                    *first = 1.0;
                }
            }
            TemporalKernel::OneStepDelay => {
                if length > 1 {
                    w[1] = 1.0;
                }
            }
            TemporalKernel::ExpSmoothing { alpha } => {
                for (i, wi) in w.iter_mut().enumerate() {
                    *wi = (1.0 - alpha) * alpha.powi(i as i32);
                }
            }
            TemporalKernel::Explicit { weights } => {
                for (wi, &k) in w.iter_mut().zip(weights) {
                    *wi = k;
                }
            }
        }
        w
    }
}

impl fmt::Display for TemporalKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemporalKernel::Identity => write!(f, "identity"),
            TemporalKernel::OneStepDelay => write!(f, "osd"),
            TemporalKernel::ExpSmoothing { .. } => write!(f, "ews"),
            TemporalKernel::Explicit { .. } => write!(f, "explicit"),
        }
    }
}

/// Parses `identity | osd | ews`; EWS takes `alpha` separately, see
/// [`TemporalKernel::from_config`].
impl FromStr for TemporalKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_config(s, 0.9)
    }
}

impl TemporalKernel {
    pub fn from_config(kind: &str, alpha: f64) -> Result<Self> {
        match kind.trim() {
            "identity" => Ok(TemporalKernel::Identity),
            "osd" => Ok(TemporalKernel::OneStepDelay),
            "ews" => TemporalKernel::ews(alpha),
            other => Err(Error::config(
                "kernel",
                format!("unknown kernel `{other}` (expected identity | osd | ews)"),
            )),
        }
    }
}

/// Stored transform history for one block.
///
/// OSD keeps a one-element queue and EWS a single smoothed value; explicit
/// kernels keep as many past entries as they have weights.
#[derive(Clone)]
pub struct DelayLine<V> {
    kernel: TemporalKernel,
    history: VecDeque<V>,
    smoothed: Option<V>,
    shape: Option<Vec<usize>>,
    t: usize,
}

impl<V: Clone> DelayLine<V> {
    pub fn new(kernel: TemporalKernel) -> Self {
        DelayLine {
            kernel,
            history: VecDeque::new(),
            smoothed: None,
            shape: None,
            t: 0,
        }
    }

    pub fn kernel(&self) -> &TemporalKernel {
        &self.kernel
    }

    /// Number of pushes so far.
    pub fn step(&self) -> usize {
        self.t
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Appends `z` and returns the kernel-weighted combination of the history
    /// including the new entry.
    pub fn push_with<S: Scalar, B: Backend<S, Value = V>>(
        &mut self,
        backend: &B,
        z: V,
    ) -> Result<V> {
        let shape = backend.shape_of(&z);
        match &self.shape {
            Some(prev) if *prev != shape => return Err(Error::shape("delay_push", prev, &shape)),
            None => self.shape = Some(shape),
            _ => {}
        }
        self.t += 1;
        match &self.kernel {
            TemporalKernel::Identity => Ok(z),
            TemporalKernel::OneStepDelay => {
                let out = match self.history.pop_front() {
                    Some(prev) => prev,
                    None => backend.zeros_like(&z),
                };
                self.history.push_back(z);
                Ok(out)
            }
            TemporalKernel::ExpSmoothing { alpha } => {
                let alpha = S::from_f64_lossy(*alpha);
                let fresh = backend.scale(&z, S::one() - alpha);
                let next = match &self.smoothed {
                    Some(prev) => backend.add(&backend.scale(prev, alpha), &fresh)?,
                    None => fresh,
                };
                self.smoothed = Some(next.clone());
                Ok(next)
            }
            TemporalKernel::Explicit { weights } => {
                self.history.push_front(z);
                self.history.truncate(weights.len());
                let mut acc: Option<V> = None;
                for (w, h) in weights.iter().zip(&self.history) {
                    let term = backend.scale(h, S::from_f64_lossy(*w));
                    acc = Some(match acc {
                        Some(a) => backend.add(&a, &term)?,
                        None => term,
                    });
                }
                Ok(acc.expect("history holds the new entry"))
            }
        }
    }
}

impl<S: Scalar> DelayLine<std::sync::Arc<Tensor<S>>> {
    /// Value-only push for plain tensors.
    pub fn push(&mut self, z: Tensor<S>) -> Result<Tensor<S>> {
        let out = self.push_with(&Eager, std::sync::Arc::new(z))?;
        Ok(std::sync::Arc::try_unwrap(out).unwrap_or_else(|a| (*a).clone()))
    }
}

/// Value-only delay line over plain tensors.
pub type TensorDelayLine<S> = DelayLine<std::sync::Arc<Tensor<S>>>;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vecs(xs: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(xs.to_vec())
    }

    #[test]
    fn identity_and_osd_weights() {
        assert_eq!(TemporalKernel::Identity.weights(3), vec![1.0, 0.0, 0.0]);
        assert_eq!(TemporalKernel::OneStepDelay.weights(3), vec![0.0, 1.0, 0.0]);
        assert_eq!(TemporalKernel::OneStepDelay.weights(1), vec![0.0]);
    }

    #[test]
    fn ews_weights() {
        assert_eq!(
            TemporalKernel::ews(0.0).unwrap().weights(3),
            vec![1.0, 0.0, 0.0]
        );
        let w = TemporalKernel::ews(0.9).unwrap().weights(3);
        let expect = [0.1, 0.09, 0.081];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn ews_truncated_mass_is_alpha_pow_len() {
        let w = TemporalKernel::ews(0.7).unwrap().weights(10);
        let total: f64 = w.iter().sum();
        assert!((1.0 - total - 0.7f64.powi(10)).abs() < 1e-12);
    }

    #[test]
    fn invalid_kernels_rejected() {
        assert!(TemporalKernel::ews(1.0).is_err());
        assert!(TemporalKernel::ews(-0.1).is_err());
        assert!(TemporalKernel::explicit(vec![0.5, -0.1]).is_err());
        assert!(TemporalKernel::explicit(vec![f64::NAN]).is_err());
        assert!("box".parse::<TemporalKernel>().is_err());
        assert_eq!(
            "osd".parse::<TemporalKernel>().unwrap(),
            TemporalKernel::OneStepDelay
        );
    }

    #[test]
    fn osd_shifts_by_one() {
        let mut line = TensorDelayLine::new(TemporalKernel::OneStepDelay);
        let out1 = line.push(vecs(&[1.0, 2.0])).unwrap();
        assert_eq!(out1.data(), &[0.0, 0.0]);
        let out2 = line.push(vecs(&[3.0, 4.0])).unwrap();
        assert_eq!(out2.data(), &[1.0, 2.0]);
        assert_eq!(line.step(), 2);
        assert!(line.history_len() <= line.step());
    }

    #[test]
    fn identity_passes_through() {
        let mut line = TensorDelayLine::new(TemporalKernel::Identity);
        for k in 0..4 {
            let z = vecs(&[k as f64, -1.5]);
            assert_eq!(line.push(z.clone()).unwrap(), z);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut line = TensorDelayLine::new(TemporalKernel::OneStepDelay);
        line.push(vecs(&[1.0, 2.0])).unwrap();
        assert!(line.push(vecs(&[1.0])).is_err());
    }

    /// Explicit convolution of the whole history, independent of the
    /// incremental recurrence.
    fn convolve(history: &[Tensor<f64>], weights: &[f64]) -> Vec<f64> {
        let t = history.len();
        let mut out = vec![0.0; history[0].len()];
        for (lag, w) in weights.iter().enumerate().take(t) {
            for (o, v) in out.iter_mut().zip(history[t - 1 - lag].data()) {
                *o += w * v;
            }
        }
        out
    }

    #[test]
    fn ews_incremental_matches_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let kernel = TemporalKernel::ews(0.9).unwrap();
        let mut line = TensorDelayLine::new(kernel.clone());
        let mut history = Vec::new();
        for _ in 0..20 {
            let z = Tensor::from_vec((0..5).map(|_| rng.random_range(-2.0..2.0)).collect());
            history.push(z.clone());
            let inc = line.push(z).unwrap();
            let direct = convolve(&history, &kernel.weights(history.len()));
            for (a, b) in inc.data().iter().zip(&direct) {
                assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-8), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn explicit_kernel_matches_convolution() {
        let kernel = TemporalKernel::explicit(vec![0.5, 0.25, 0.25]).unwrap();
        let mut line = TensorDelayLine::new(kernel.clone());
        let mut history = Vec::new();
        for k in 0..6 {
            let z = vecs(&[k as f64, (k * k) as f64]);
            history.push(z.clone());
            let out = line.push(z).unwrap();
            assert_eq!(
                out.data(),
                convolve(&history, &kernel.weights(history.len())).as_slice()
            );
        }
        assert!(line.history_len() <= 3);
    }

    #[test]
    fn constant_input_convergence() {
        let z = vecs(&[2.0]);
        let mut ews = TensorDelayLine::new(TemporalKernel::ews(0.5).unwrap());
        let mut prev_gap = f64::INFINITY;
        for t in 1..=30 {
            let out = ews.push(z.clone()).unwrap().data()[0];
            let expect = 2.0 * (1.0 - 0.5f64.powi(t));
            assert!((out - expect).abs() < 1e-12);
            let gap = (2.0 - out).abs();
            assert!(gap < prev_gap);
            prev_gap = gap;
        }
        let mut osd = TensorDelayLine::new(TemporalKernel::OneStepDelay);
        assert_eq!(osd.push(z.clone()).unwrap().data()[0], 0.0);
        assert_eq!(osd.push(z.clone()).unwrap().data()[0], 2.0);
    }
}
