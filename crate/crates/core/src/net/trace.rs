use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{softmax_rows, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    Cascaded,
    Serial,
    /// A complete serial pass for every input frame.
    SerialPerFrame,
}

impl std::fmt::Display for RolloutMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RolloutMode::Cascaded => "cascaded",
            RolloutMode::Serial => "serial",
            RolloutMode::SerialPerFrame => "serial_per_frame",
        })
    }
}

/// Outputs of a batched rollout. Every per-step tensor has one row per
/// instance.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutTrace<S> {
    pub mode: RolloutMode,
    /// Block-update cycles consumed.
    pub cycles: usize,
    /// `[N, C]` per step.
    pub logits: Vec<Tensor<S>>,
    /// `[N, C]` per step.
    pub probs: Vec<Tensor<S>>,
    /// Head inputs, `[N, width]` per step.
    pub embeddings: Vec<Tensor<S>>,
}

impl<S: Scalar> RolloutTrace<S> {
    pub(crate) fn new(
        mode: RolloutMode,
        cycles: usize,
        logits: Vec<Tensor<S>>,
        embeddings: Vec<Tensor<S>>,
    ) -> Self {
        let probs = logits.iter().map(softmax_rows).collect();
        RolloutTrace {
            mode,
            cycles,
            logits,
            probs,
            embeddings,
        }
    }

    pub fn steps(&self) -> usize {
        self.logits.len()
    }

    pub fn batch(&self) -> usize {
        self.logits.first().map_or(0, Tensor::rows)
    }

    pub fn classes(&self) -> usize {
        self.logits.first().map_or(0, Tensor::cols)
    }

    /// Output distribution of instance `n` at 1-based step `t`.
    pub fn prob(&self, n: usize, t: usize) -> &[S] {
        self.probs[t - 1].row(n)
    }

    pub fn instance(&self, n: usize) -> InstanceTrace {
        let to64 = |r: &[S]| r.iter().map(|v| v.as_f64()).collect::<Vec<_>>();
        InstanceTrace {
            probs: self.probs.iter().map(|p| to64(p.row(n))).collect(),
            logits: self.logits.iter().map(|l| to64(l.row(n))).collect(),
            embedding: self
                .embeddings
                .last()
                .map(|e| to64(e.row(n)))
                .unwrap_or_default(),
        }
    }

    pub fn instances(&self) -> Vec<InstanceTrace> {
        (0..self.batch()).map(|n| self.instance(n)).collect()
    }
}

/// One instance's trace in `f64`, the form consumed by the analyses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceTrace {
    /// `probs[t - 1][c]`
    pub probs: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    /// Head input at the final step.
    pub embedding: Vec<f64>,
}

impl InstanceTrace {
    /// Trace from logits alone; probabilities are their softmax.
    pub fn from_logits(logits: Vec<Vec<f64>>) -> Result<Self> {
        let c = logits.first().map_or(0, Vec::len);
        if logits.is_empty() || c == 0 || logits.iter().any(|l| l.len() != c) {
            return Err(Error::contract(
                "trace needs at least one step of equal-width logits",
            ));
        }
        Ok(InstanceTrace {
            probs: logits.iter().map(|l| crate::tensor::softmax(l)).collect(),
            logits,
            embedding: Vec::new(),
        })
    }

    /// Trace from probabilities alone; logits are their logarithms.
    pub fn from_probs(probs: Vec<Vec<f64>>) -> Result<Self> {
        let c = probs.first().map_or(0, Vec::len);
        if probs.is_empty() || c == 0 || probs.iter().any(|p| p.len() != c) {
            return Err(Error::contract(
                "trace needs at least one step of equal-width outputs",
            ));
        }
        Ok(InstanceTrace {
            logits: probs
                .iter()
                .map(|p| p.iter().map(|v| v.ln()).collect())
                .collect(),
            probs,
            embedding: Vec::new(),
        })
    }

    pub fn steps(&self) -> usize {
        self.probs.len()
    }

    pub fn classes(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    /// Predicted class at 1-based step `t`.
    pub fn predicted(&self, t: usize) -> usize {
        crate::tensor::argmax(&self.probs[t - 1])
    }
}
