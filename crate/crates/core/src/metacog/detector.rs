//! One-hidden-layer binary classifier over trace features.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeatureMatrix, Representation, Scope};
use super::roc::{auroc, fpr_at_tpr};
use crate::autodiff::{Tape, Var};
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::net::InstanceTrace;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{rng_stream, Adam};

const STREAM_METACOG: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaCogConfig {
    pub hidden: usize,
    /// Dropout keep probability on the hidden layer during training.
    pub keep_prob: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MetaCogConfig {
    fn default() -> Self {
        MetaCogConfig {
            hidden: 256,
            keep_prob: 0.5,
            lr: 1e-3,
            weight_decay: 5e-4,
            epochs: 300,
            batch_size: 256,
            seed: 0,
        }
    }
}

impl MetaCogConfig {
    /// Reads `metacog_hidden`, `metacog_keep_prob`, `metacog_lr`,
    /// `metacog_weight_decay`, `metacog_epochs`, `metacog_batch_size`, `seed`.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = MetaCogConfig::default();
        let cfg = MetaCogConfig {
            hidden: kv.get_or("metacog_hidden", d.hidden)?,
            keep_prob: kv.get_or("metacog_keep_prob", d.keep_prob)?,
            lr: kv.get_or("metacog_lr", d.lr)?,
            weight_decay: kv.get_or("metacog_weight_decay", d.weight_decay)?,
            epochs: kv.get_or("metacog_epochs", d.epochs)?,
            batch_size: kv.get_or("metacog_batch_size", d.batch_size)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::config(
                "metacog_hidden",
                "hidden width and batch size must be positive",
            ));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::config("metacog_keep_prob", "must lie in (0, 1]"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("metacog_lr", "must be positive"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config(
                "metacog_weight_decay",
                "must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Parameters `[w1 (d, h), b1 (h), w2 (h, 1), b2 (1)]` over standardized
/// features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct MetaCogModel<S> {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub params: Vec<Tensor<S>>,
}

fn forward<'t, S: Scalar>(
    tape: &'t Tape<S>,
    x: Var<'t, S>,
    params: &[Var<'t, S>],
    mask: Option<Tensor<S>>,
) -> Result<Var<'t, S>> {
    let mut h = tape.relu(tape.add_bias(tape.matmul(x, params[0])?, params[1])?);
    if let Some(m) = mask {
        h = tape.mul(h, tape.constant(m))?;
    }
    tape.add_bias(tape.matmul(h, params[2])?, params[3])
}

impl<S: Scalar> MetaCogModel<S> {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn input(&self, rows: &[Vec<f64>]) -> Result<Tensor<S>> {
        let d = self.dim();
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::shape("metacog input", &[d], &[r.len()]));
            }
            data.extend(
                r.iter()
                    .zip(&self.mean)
                    .zip(&self.scale)
                    .map(|((v, m), s)| S::from_f64_lossy((v - m) / s)),
            );
        }
        Tensor::new(vec![rows.len(), d], data)
    }

    /// In-distribution probability for each row, strictly inside (0, 1)
    /// for finite logits.
    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let tape = Tape::new();
        let vars: Vec<_> = self
            .params
            .iter()
            .map(|p| tape.constant(p.clone()))
            .collect();
        let z = forward(&tape, tape.constant(self.input(rows)?), &vars, None)?;
        let out = z
            .value()
            .data()
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v.as_f64()).exp()))
            .collect();
        Ok(out)
    }
}

fn uniform<S: Scalar>(shape: Vec<usize>, bound: f64, rng: &mut impl Rng) -> Result<Tensor<S>> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| S::from_f64_lossy(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape, data)
}

/// Binary cross-entropy training with label 1 for in-distribution rows and
/// 0 for out-of-distribution rows.
pub fn train_metacog<S: Scalar>(
    in_dist: &[Vec<f64>],
    ood: &[Vec<f64>],
    cfg: &MetaCogConfig,
) -> Result<MetaCogModel<S>> {
    cfg.validate()?;
    if in_dist.is_empty() || ood.is_empty() {
        return Err(Error::contract(
            "metacog training needs both in- and out-of-distribution rows",
        ));
    }
    let d = in_dist[0].len();
    if d == 0 || in_dist.iter().chain(ood).any(|r| r.len() != d) {
        return Err(Error::contract("feature rows differ in length"));
    }
    let rows: Vec<&Vec<f64>> = in_dist.iter().chain(ood).collect();
    let targets: Vec<S> = (0..rows.len())
        .map(|i| {
            if i < in_dist.len() {
                S::one()
            } else {
                S::zero()
            }
        })
        .collect();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();

    let mut rng = rng_stream(cfg.seed, STREAM_METACOG);
    let h = cfg.hidden;
    let (b1, b2) = (1.0 / (d as f64).sqrt(), 1.0 / (h as f64).sqrt());
    let mut model = MetaCogModel {
        mean,
        scale,
        params: vec![
            uniform(vec![d, h], b1, &mut rng)?,
            uniform(vec![h], b1, &mut rng)?,
            uniform(vec![h, 1], b2, &mut rng)?,
            uniform(vec![1], b2, &mut rng)?,
        ],
    };
    let x_all: Vec<Vec<f64>> = rows.iter().map(|r| (*r).clone()).collect();
    let x_all = model.input(&x_all)?;
    let mut opt = Adam::new(cfg.weight_decay, vec![true; 4]);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let inv_keep = S::from_f64_lossy(1.0 / cfg.keep_prob);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let mut xb = Vec::with_capacity(idx.len() * d);
            for &i in idx {
                xb.extend_from_slice(&x_all.data()[i * d..(i + 1) * d]);
            }
            let mask = (cfg.keep_prob < 1.0).then(|| {
                let data = (0..idx.len() * h)
                    .map(|_| {
                        if rng.random_bool(cfg.keep_prob) {
                            inv_keep
                        } else {
                            S::zero()
                        }
                    })
                    .collect();
                Tensor::new(vec![idx.len(), h], data)
            });
            let mask = mask.transpose()?;
            let yb: Vec<S> = idx.iter().map(|&i| targets[i]).collect();
            let tape = Tape::new();
            let vars: Vec<_> = model.params.iter().map(|p| tape.param(p.clone())).collect();
            let z = forward(
                &tape,
                tape.constant(Tensor::new(vec![idx.len(), d], xb)?),
                &vars,
                mask,
            )?;
            let loss = tape.sigmoid_bce(z, &yb)?;
            let grads = tape.grad(loss, &vars)?;
            opt.step(&mut model.params, &grads, cfg.lr)?;
        }
    }
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaCogMetrics {
    pub representation: Representation,
    pub scope: Scope,
    pub auroc: f64,
    pub fpr_at_95tpr: f64,
}

/// Traces for training the detector and for scoring it.
#[derive(Clone, Copy, Debug)]
pub struct OodSplit<'a> {
    pub in_train: &'a [InstanceTrace],
    pub ood_train: &'a [InstanceTrace],
    pub in_test: &'a [InstanceTrace],
    pub ood_test: &'a [InstanceTrace],
}

/// Train on the training pair, score the held-out pair.
pub fn evaluate_representation<S: Scalar>(
    split: OodSplit<'_>,
    kind: Representation,
    scope: Scope,
    cfg: &MetaCogConfig,
) -> Result<MetaCogMetrics> {
    let feats = |t: &[InstanceTrace]| FeatureMatrix::from_traces(t, kind, scope).map(|m| m.rows);
    let model = train_metacog::<S>(&feats(split.in_train)?, &feats(split.ood_train)?, cfg)?;
    let (in_test, ood_test) = (feats(split.in_test)?, feats(split.ood_test)?);
    let mut scores = model.predict(&in_test)?;
    scores.extend(model.predict(&ood_test)?);
    let labels: Vec<bool> = (0..scores.len()).map(|i| i < in_test.len()).collect();
    Ok(MetaCogMetrics {
        representation: kind,
        scope,
        auroc: auroc(&scores, &labels)?,
        fpr_at_95tpr: fpr_at_tpr(&scores, &labels, 0.95)?,
    })
}

/// Every requested (representation, scope) pair, in the order given.
pub fn metacog_report<S: Scalar>(
    split: OodSplit<'_>,
    kinds: &[Representation],
    scopes: &[Scope],
    cfg: &MetaCogConfig,
) -> Result<Vec<MetaCogMetrics>> {
    let mut out = Vec::with_capacity(kinds.len() * scopes.len());
    for &kind in kinds {
        for &scope in scopes {
            out.push(evaluate_representation::<S>(split, kind, scope, cfg)?);
        }
    }
    Ok(out)
}

pub fn metrics_json(metrics: &[MetaCogMetrics]) -> Result<String> {
    Ok(serde_json::to_string_pretty(metrics)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_one_dimensional() {
        let cfg = MetaCogConfig {
            hidden: 16,
            epochs: 60,
            batch_size: 16,
            ..MetaCogConfig::default()
        };
        let pos: Vec<Vec<f64>> = (0..40).map(|i| vec![1.0 + i as f64 * 0.05]).collect();
        let neg: Vec<Vec<f64>> = (0..40).map(|i| vec![-1.0 - i as f64 * 0.05]).collect();
        let m = train_metacog::<f64>(&pos, &neg, &cfg).unwrap();
        let p = m.predict(&pos).unwrap();
        let q = m.predict(&neg).unwrap();
        assert!(p.iter().all(|&v| v > 0.5 && v < 1.0));
        assert!(q.iter().all(|&v| v < 0.5 && v > 0.0));
    }
}
