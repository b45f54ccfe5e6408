//! TD(lambda) targets, the summed cross-entropy loss over steps, and the
//! incremental eligibility-trace form of its gradient.
//!
//! Targets blend later outputs with the label:
//! `y_t = (1-l) sum_{i=1}^{T-t} l^{i-1} p_{t+i} + l^{T-t} y`, which obeys
//! `y_T = y` and `y_t = (1-l) p_{t+1} + l y_{t+1}`. They are constants
//! under differentiation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Backend, Eager, Reduction, Tape, Var};
use crate::error::{Error, Result};
use crate::net::{Forward, Network, NormCtx, StepOutput};
use crate::scalar::Scalar;
use crate::temporal::TemporalKernel;
use crate::tensor::{softmax_rows, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdConfig {
    pub lambda: f64,
    pub horizon: usize,
}

impl TdConfig {
    pub fn new(lambda: f64, horizon: usize) -> Result<Self> {
        let cfg = TdConfig { lambda, horizon };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(
                "lambda",
                format!("{} is outside [0, 1]", self.lambda),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::config("T", "horizon must be at least 1"));
        }
        Ok(())
    }
}

/// Which loss drives training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Cross-entropy against TD(lambda) targets at every step.
    Td,
    /// Cross-entropy against the label at the final step only.
    Ce,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "td" => Ok(LossKind::Td),
            "ce" => Ok(LossKind::Ce),
            other => Err(Error::config(
                "loss",
                format!("unknown loss `{other}` (expected td or ce)"),
            )),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Td => "td",
            LossKind::Ce => "ce",
        })
    }
}

/// Weights of `p_{t+1}, ..., p_T` and of the label in the target for 1-based
/// step `t`.
pub fn target_weights(lambda: f64, t: usize, horizon: usize) -> (Vec<f64>, f64) {
    let ahead = horizon - t;
    let outputs = (1..=ahead)
        .map(|i| (1.0 - lambda) * lambda.powi(i as i32 - 1))
        .collect();
    (outputs, lambda.powi(ahead as i32))
}

/// Targets for one instance from its per-step output distributions and a
/// one-hot label.
pub fn td_targets(probs: &[Vec<f64>], y_true: &[f64], cfg: &TdConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if probs.len() != cfg.horizon {
        return Err(Error::contract(format!(
            "trace has {} steps, horizon is {}",
            probs.len(),
            cfg.horizon
        )));
    }
    let c = y_true.len();
    let hot = y_true.iter().filter(|&&v| v == 1.0).count();
    if hot != 1 || y_true.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::contract("label is not one-hot"));
    }
    if probs.iter().any(|p| p.len() != c) {
        return Err(Error::contract(
            "trace and label have different class counts",
        ));
    }
    let mut out = Vec::with_capacity(cfg.horizon);
    for t in 1..=cfg.horizon {
        let (w, wy) = target_weights(cfg.lambda, t, cfg.horizon);
        let mut y: Vec<f64> = y_true.iter().map(|v| wy * v).collect();
        for (i, wi) in w.iter().enumerate() {
            for (yc, pc) in y.iter_mut().zip(&probs[t + i]) {
                *yc += wi * pc;
            }
        }
        out.push(y);
    }
    Ok(out)
}

/// `sum_t H(y_t, p_t)` for one instance.
pub fn td_loss(probs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if probs.len() != targets.len() || probs.iter().zip(targets).any(|(p, y)| p.len() != y.len()) {
        return Err(Error::contract("trace and targets differ in shape"));
    }
    Ok(probs
        .iter()
        .zip(targets)
        .map(|(p, y)| {
            p.iter()
                .zip(y)
                .map(|(&pc, &yc)| if yc == 0.0 { 0.0 } else { -yc * pc.ln() })
                .sum::<f64>()
        })
        .sum())
}

/// One-hot rows for a batch of labels.
pub fn one_hot<S: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<S>> {
    let mut data = vec![S::zero(); labels.len() * classes];
    for (r, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::contract(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        data[r * classes + l] = S::one();
    }
    Tensor::new(vec![labels.len(), classes], data)
}

/// Batched targets via the backward recursion. The same operation sequence
/// runs on any backend, so recorded and eager targets agree bit for bit.
pub fn build_targets<S: Scalar, B: Backend<S>>(
    backend: &B,
    probs: &[B::Value],
    labels: &B::Value,
    lambda: f64,
) -> Result<Vec<B::Value>> {
    let keep = S::from_f64_lossy(1.0 - lambda);
    let carry = S::from_f64_lossy(lambda);
    let mut out = vec![labels.clone(); probs.len()];
    for t in (0..probs.len().saturating_sub(1)).rev() {
        out[t] = backend.add(
            &backend.scale(&probs[t + 1], keep),
            &backend.scale(&out[t + 1], carry),
        )?;
    }
    Ok(out)
}

/// How the training tape treats TD targets. Both give identical gradients;
/// `Constant` rebuilds them outside the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetMode {
    StopGradient,
    Constant,
}

/// Loss over a recorded rollout: summed over steps, averaged over the batch.
pub fn sequence_loss<'t, S: Scalar>(
    tape: &'t Tape<S>,
    logits: &[Var<'t, S>],
    labels: &[usize],
    kind: LossKind,
    lambda: f64,
    mode: TargetMode,
) -> Result<Var<'t, S>> {
    let last = logits
        .last()
        .ok_or_else(|| Error::contract("empty rollout"))?;
    let classes = last.shape().get(1).copied().unwrap_or(0);
    let hot = one_hot::<S>(labels, classes)?;
    match kind {
        LossKind::Ce => {
            let y = tape.constant(hot);
            tape.softmax_cross_entropy(*last, y, Reduction::Mean)
        }
        LossKind::Td => {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(Error::config(
                    "lambda",
                    format!("{lambda} is outside [0, 1]"),
                ));
            }
            let targets: Vec<Var<'t, S>> = match mode {
                TargetMode::StopGradient => {
                    let probs: Vec<_> = logits
                        .iter()
                        .map(|z| tape.stop_gradient(tape.softmax(*z)))
                        .collect();
                    build_targets(&tape, &probs, &tape.constant(hot), lambda)?
                }
                TargetMode::Constant => {
                    let probs: Vec<_> = logits
                        .iter()
                        .map(|z| Arc::new(softmax_rows(&z.value())))
                        .collect();
                    build_targets(&Eager, &probs, &Arc::new(hot), lambda)?
                        .into_iter()
                        .map(|y| tape.constant(Arc::try_unwrap(y).unwrap_or_else(|a| (*a).clone())))
                        .collect()
                }
            };
            let mut total: Option<Var<'t, S>> = None;
            for (z, y) in logits.iter().zip(targets) {
                let h = tape.softmax_cross_entropy(*z, y, Reduction::Mean)?;
                total = Some(match total {
                    Some(acc) => tape.add(acc, h)?,
                    None => h,
                });
            }
            Ok(total.expect("non-empty"))
        }
    }
}

fn logits_of<V>(steps: Vec<StepOutput<V>>) -> Vec<V> {
    steps.into_iter().map(|s| s.logits).collect()
}

fn single(x: &Tensor<f64>, len: usize) -> Result<Tensor<f64>> {
    if x.len() != len {
        return Err(Error::shape("instance", &[len], x.shape()));
    }
    x.clone().reshape(vec![1, len])
}

/// Gradient of the TD loss for one static input, by reverse-mode through
/// the whole rollout. Normalization uses running statistics.
pub fn td_grad_full(
    net: &Network<f64>,
    x: &Tensor<f64>,
    label: usize,
    cfg: &TdConfig,
    kernel: &TemporalKernel,
) -> Result<Vec<Tensor<f64>>> {
    cfg.validate()?;
    let x = single(x, net.spec.input.len())?;
    let tape = Tape::new();
    let backend = &tape;
    let params: Vec<_> = net.params.iter().map(|p| tape.param(p.clone())).collect();
    let fwd = Forward::new(&backend, &net.spec, &params)?;
    let inputs = vec![tape.constant(x); cfg.horizon];
    let logits = logits_of(fwd.cascaded(&mut NormCtx::Eval(&net.norm), &inputs, kernel)?);
    let loss = sequence_loss(
        &tape,
        &logits,
        &[label],
        LossKind::Td,
        cfg.lambda,
        TargetMode::StopGradient,
    )?;
    tape.grad(loss, &params)
}

/// Default cap on eligibility-trace storage.
pub const DEFAULT_TRACE_BUDGET: usize = 256 << 20;

/// The same gradient assembled online from eligibility traces
/// `e_t = lambda e_{t-1} + grad z_t` (one per parameter and class):
/// `-sum_t sum_c (p_{t+1,c} - p_{t,c}) e_{t,c}` with `p_{T+1} = y`.
///
/// Refuses when the traces would exceed `budget_bytes`.
pub fn td_grad_incremental(
    net: &Network<f64>,
    x: &Tensor<f64>,
    label: usize,
    cfg: &TdConfig,
    kernel: &TemporalKernel,
    budget_bytes: usize,
) -> Result<Vec<Tensor<f64>>> {
    cfg.validate()?;
    let classes = net.spec.classes;
    let needed = net.num_scalars() * classes * std::mem::size_of::<f64>();
    if needed > budget_bytes {
        return Err(Error::Budget {
            what: "eligibility traces",
            needed,
            budget: budget_bytes,
        });
    }
    if label >= classes {
        return Err(Error::contract(format!("label {label} out of range")));
    }
    let x = single(x, net.spec.input.len())?;
    let tape = Tape::new();
    let backend = &tape;
    let params: Vec<_> = net.params.iter().map(|p| tape.param(p.clone())).collect();
    let fwd = Forward::new(&backend, &net.spec, &params)?;
    let inputs = vec![tape.constant(x); cfg.horizon];
    let logits = logits_of(fwd.cascaded(&mut NormCtx::Eval(&net.norm), &inputs, kernel)?);

    let probs: Vec<Vec<f64>> = logits
        .iter()
        .map(|z| crate::tensor::softmax(z.value().data()))
        .collect();
    let mut traces: Vec<Vec<Tensor<f64>>> = vec![
        net.params
            .iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        classes
    ];
    let mut grad: Vec<Tensor<f64>> = net
        .params
        .iter()
        .map(|p| Tensor::zeros(p.shape()))
        .collect();
    for (t, z) in logits.iter().enumerate() {
        for (c, trace) in traces.iter_mut().enumerate() {
            let mut seed = Tensor::zeros(&[1, classes]);
            seed.data_mut()[c] = 1.0;
            let dz = tape.vjp(*z, seed, &params)?;
            for (e, d) in trace.iter_mut().zip(&dz) {
                for (ev, dv) in e.data_mut().iter_mut().zip(d.data()) {
                    *ev = cfg.lambda * *ev + dv;
                }
            }
            let next = if t + 1 < probs.len() {
                probs[t + 1][c]
            } else {
                (c == label) as u8 as f64
            };
            let delta = next - probs[t][c];
            for (g, e) in grad.iter_mut().zip(trace.iter()) {
                for (gv, ev) in g.data_mut().iter_mut().zip(e.data()) {
                    *gv -= delta * ev;
                }
            }
        }
    }
    Ok(grad)
}
