//! Batch normalization with statistics tracked separately per step.
//!
//! Learned scale and offset are ordinary parameters shared across steps;
//! only the running mean and variance are indexed by step. Queries past the
//! tracked horizon reuse the final slot.

use serde::{Deserialize, Serialize};

use crate::autodiff::Backend;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ChannelStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct NormStats<S> {
    pub horizon: usize,
    pub momentum: f64,
    pub eps: f64,
    /// `layers[layer][t - 1]`
    pub layers: Vec<Vec<ChannelStats<S>>>,
}

impl<S: Scalar> NormStats<S> {
    /// Mean 0, variance 1 everywhere.
    pub fn new(layers: usize, channels: usize, horizon: usize) -> Self {
        let slot = ChannelStats {
            mean: vec![S::zero(); channels],
            var: vec![S::one(); channels],
        };
        NormStats {
            horizon,
            momentum: 0.1,
            eps: 1e-5,
            layers: vec![vec![slot; horizon]; layers],
        }
    }

    /// Slot index for 1-based step `t`.
    pub fn slot(&self, t: usize) -> usize {
        t.clamp(1, self.horizon) - 1
    }

    pub fn get(&self, layer: usize, t: usize) -> &ChannelStats<S> {
        &self.layers[layer][self.slot(t)]
    }

    /// Exponential running update from a batch of `count` values per channel.
    /// The stored variance is the unbiased estimate.
    pub fn update(
        &mut self,
        layer: usize,
        t: usize,
        batch_mean: &[S],
        batch_var: &[S],
        count: usize,
    ) {
        let slot = self.slot(t);
        let m = S::from_f64_lossy(self.momentum);
        let keep = S::one() - m;
        let correction = if count > 1 {
            S::of_usize(count) / S::of_usize(count - 1)
        } else {
            S::one()
        };
        let stats = &mut self.layers[layer][slot];
        for (r, &b) in stats.mean.iter_mut().zip(batch_mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in stats.var.iter_mut().zip(batch_var) {
            *r = keep * *r + m * b * correction;
        }
    }
}

/// Whether a forward pass normalizes with batch statistics (and records
/// them) or with the stored running statistics.
pub enum NormCtx<'a, S> {
    Train(&'a mut NormStats<S>),
    Eval(&'a NormStats<S>),
}

impl<S: Scalar> NormCtx<'_, S> {
    pub fn is_training(&self) -> bool {
        matches!(self, NormCtx::Train(_))
    }

    pub fn stats(&self) -> &NormStats<S> {
        match self {
            NormCtx::Train(s) => s,
            NormCtx::Eval(s) => s,
        }
    }
}

/// Normalizes `x` for layer `layer` at step `t`.
pub fn normalize<S: Scalar, B: Backend<S>>(
    backend: &B,
    ctx: &mut NormCtx<'_, S>,
    layer: usize,
    t: usize,
    x: &B::Value,
    gamma: &B::Value,
    beta: &B::Value,
) -> Result<B::Value> {
    if t == 0 {
        return Err(Error::contract("normalization step index is 1-based"));
    }
    match ctx {
        NormCtx::Train(stats) => {
            let eps = S::from_f64_lossy(stats.eps);
            let (y, mean, var) = backend.batch_norm(x, gamma, beta, eps)?;
            let shape = backend.shape_of(x);
            let rows = shape.first().copied().unwrap_or(1);
            let cols: usize = shape[1..].iter().product();
            let count = rows * cols / mean.len();
            stats.update(layer, t, &mean, &var, count);
            Ok(y)
        }
        NormCtx::Eval(stats) => {
            let s = stats.get(layer, t);
            backend.norm_eval(
                x,
                gamma,
                beta,
                &s.mean,
                &s.var,
                S::from_f64_lossy(stats.eps),
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Eager;
    use crate::tensor::Tensor;
    use std::sync::Arc;

    fn t(rows: usize, cols: usize, data: Vec<f64>) -> Arc<Tensor<f64>> {
        Arc::new(Tensor::new(vec![rows, cols], data).unwrap())
    }

    fn affine(c: usize, g: f64, b: f64) -> (Arc<Tensor<f64>>, Arc<Tensor<f64>>) {
        (
            Arc::new(Tensor::full(&[c], g)),
            Arc::new(Tensor::full(&[c], b)),
        )
    }

    #[test]
    fn eval_past_horizon_uses_final_slot() {
        let mut stats = NormStats::<f64>::new(1, 2, 4);
        stats.layers[0][3].mean = vec![1.0, -1.0];
        stats.layers[0][3].var = vec![4.0, 0.25];
        stats.layers[0][2].mean = vec![9.0, 9.0];
        let x = t(2, 2, vec![0.5, 1.5, -2.0, 3.0]);
        let (g, b) = affine(2, 1.3, 0.2);
        let at = |step| {
            let mut ctx = NormCtx::Eval(&stats);
            normalize(&Eager, &mut ctx, 0, step, &x, &g, &b).unwrap()
        };
        assert_eq!(at(4), at(9));
        assert_ne!(at(3), at(4));
    }

    #[test]
    fn fresh_stats_are_identity_in_eval() {
        let stats = NormStats::<f64>::new(1, 3, 2);
        let x = t(1, 3, vec![0.5, -1.0, 2.0]);
        let (g, b) = affine(3, 1.0, 0.0);
        let mut ctx = NormCtx::Eval(&stats);
        let y = normalize(&Eager, &mut ctx, 0, 1, &x, &g, &b).unwrap();
        for (a, e) in y.data().iter().zip(x.data()) {
            assert!((a - e / (1.0 + 1e-5f64).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_variance_feature_gives_offset() {
        let mut stats = NormStats::<f64>::new(1, 2, 1);
        let x = t(3, 2, vec![5.0, 1.0, 5.0, 2.0, 5.0, 3.0]);
        let (g, b) = affine(2, 2.0, 0.75);
        let mut ctx = NormCtx::Train(&mut stats);
        let y = normalize(&Eager, &mut ctx, 0, 1, &x, &g, &b).unwrap();
        for r in 0..3 {
            assert!(y.data()[r * 2].is_finite());
            assert_eq!(y.data()[r * 2], 0.75);
        }
    }

    #[test]
    fn running_update_matches_recomputation() {
        let mut stats = NormStats::<f64>::new(1, 1, 3);
        let batches = [
            vec![1.0, 2.0, 3.0, 4.0],
            vec![-1.0, 0.5, 0.0, 2.5],
            vec![10.0, 11.0, 9.0, 10.0],
        ];
        let (g, b) = affine(1, 1.0, 0.0);
        for batch in &batches {
            let x = t(4, 1, batch.clone());
            let mut ctx = NormCtx::Train(&mut stats);
            normalize(&Eager, &mut ctx, 0, 2, &x, &g, &b).unwrap();
        }
        // Direct recomputation of the exponential average over seen batches.
        let m = 0.1;
        let (mut mean, mut var) = (0.0, 1.0);
        for batch in &batches {
            let n = batch.len() as f64;
            let mu = batch.iter().sum::<f64>() / n;
            let unbiased = batch.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1.0);
            mean = (1.0 - m) * mean + m * mu;
            var = (1.0 - m) * var + m * unbiased;
        }
        let s = stats.get(0, 2);
        assert!((s.mean[0] - mean).abs() < 1e-5);
        assert!((s.var[0] - var).abs() < 1e-5);
        // Other slots untouched.
        assert_eq!(stats.get(0, 1).mean[0], 0.0);
        assert_eq!(stats.get(0, 3).var[0], 1.0);
    }

    #[test]
    fn step_zero_rejected() {
        let stats = NormStats::<f64>::new(1, 1, 1);
        let x = t(1, 1, vec![1.0]);
        let (g, b) = affine(1, 1.0, 0.0);
        let mut ctx = NormCtx::Eval(&stats);
        assert!(normalize(&Eager, &mut ctx, 0, 0, &x, &g, &b).is_err());
    }
}
