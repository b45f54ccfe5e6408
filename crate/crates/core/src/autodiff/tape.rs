//! Define-by-run reverse-mode tape.
//!
//! Every primitive appends one node holding its forward value and the
//! parent ids it read from, so ids are a topological order by construction.
//! `grad` walks the ids backwards once, accumulating vector-Jacobian products.

use std::cell::{Ref, RefCell};

use super::kernels::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Reduction applied over the rows of a row-wise loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    StopGradient,
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    AddBias {
        x: usize,
        bias: usize,
    },
    Scale {
        x: usize,
        factor: S,
    },
    Relu {
        x: usize,
    },
    Conv2d {
        x: usize,
        weight: usize,
        geom: ConvGeom,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<S>,
        inv_std: Vec<S>,
    },
    NormEval {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<S>,
        inv_std: Vec<S>,
    },
    ChannelMean {
        x: usize,
        channels: usize,
    },
    Softmax {
        x: usize,
    },
    Sum {
        x: usize,
    },
    Mean {
        x: usize,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        target: usize,
        log_probs: Vec<S>,
        scale: S,
    },
    SigmoidBce {
        logits: usize,
        targets: Vec<S>,
        scale: S,
    },
}

impl<S> Op<S> {
    fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf | StopGradient => vec![],
            MatMul { a, b, .. } | Add { a, b } | Mul { a, b } => vec![*a, *b],
            AddBias { x, bias } => vec![*x, *bias],
            Conv2d { x, weight, .. } => vec![*x, *weight],
            BatchNorm { x, gamma, beta, .. } | NormEval { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
            SoftmaxCrossEntropy { logits, target, .. } => vec![*logits, *target],
            Scale { x, .. }
            | Relu { x }
            | ChannelMean { x, .. }
            | Softmax { x }
            | Sum { x }
            | Mean { x }
            | SigmoidBce { logits: x, .. } => vec![*x],
        }
    }
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
///
/// A tape and its variables are confined to one thread; build one tape per
/// forward pass.
pub struct Tape<S> {
    nodes: RefCell<Vec<Node<S>>>,
}

/// Handle to a tape node.
#[derive(Clone, Copy)]
pub struct Var<'t, S> {
    tape: &'t Tape<S>,
    id: usize,
}

impl<S> std::fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'t, Tensor<S>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<S>, op: Op<S>) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = match op {
            Op::Leaf | Op::StopGradient => false,
            ref other => other.parents().iter().any(|&p| nodes[p].requires_grad),
        };
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn check_own(&self, v: &Var<'_, S>) {
        assert!(
            std::ptr::eq(self, v.tape),
            "variable belongs to a different tape"
        );
    }

    /// A differentiable leaf.
    pub fn param(&self, value: Tensor<S>) -> Var<'_, S> {
        let v = self.push(value, Op::Leaf);
        self.nodes.borrow_mut()[v.id].requires_grad = true;
        v
    }

    /// A leaf that never receives gradient.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Op::Leaf)
    }

    /// Same value as `x`; backward propagates nothing through this node.
    pub fn stop_gradient(&self, x: Var<'_, S>) -> Var<'_, S> {
        self.check_own(&x);
        let value = x.value().clone();
        self.push(value, Op::StopGradient)
    }

    pub fn matmul(&self, a: Var<'_, S>, b: Var<'_, S>) -> Result<Var<'_, S>> {
        let (av, bv) = (a.value(), b.value());
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::shape("matmul", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let out = kernels::matmul(av.data(), bv.data(), m, k, n);
        drop((av, bv));
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul {
                a: a.id,
                b: b.id,
                m,
                k,
                n,
            },
        ))
    }

    pub fn add(&self, a: Var<'_, S>, b: Var<'_, S>) -> Result<Var<'_, S>> {
        let (av, bv) = (a.value(), b.value());
        if av.shape() != bv.shape() {
            return Err(Error::shape("add", av.shape(), bv.shape()));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        drop((av, bv));
        Ok(self.push(out, Op::Add { a: a.id, b: b.id }))
    }

    pub fn mul(&self, a: Var<'_, S>, b: Var<'_, S>) -> Result<Var<'_, S>> {
        let (av, bv) = (a.value(), b.value());
        if av.shape() != bv.shape() {
            return Err(Error::shape("mul", av.shape(), bv.shape()));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        drop((av, bv));
        Ok(self.push(out, Op::Mul { a: a.id, b: b.id }))
    }

    /// Adds a per-channel bias to every row; a row of `cols` values holds
    /// `bias.len()` equal-size channel planes.
    pub fn add_bias(&self, x: Var<'_, S>, bias: Var<'_, S>) -> Result<Var<'_, S>> {
        let (xv, bv) = (x.value(), bias.value());
        let cols = xv.cols();
        if bv.shape().len() != 1 || bv.len() == 0 || cols % bv.len() != 0 {
            return Err(Error::shape("add_bias", &[cols], bv.shape()));
        }
        let out = Tensor::new(
            xv.shape().to_vec(),
            kernels::add_bias(xv.data(), bv.data(), cols),
        )?;
        drop((xv, bv));
        Ok(self.push(
            out,
            Op::AddBias {
                x: x.id,
                bias: bias.id,
            },
        ))
    }

    pub fn scale(&self, x: Var<'_, S>, factor: S) -> Var<'_, S> {
        let out = x.value().map(|v| v * factor);
        self.push(out, Op::Scale { x: x.id, factor })
    }

    /// Rectifier; the subgradient at zero is zero.
    pub fn relu(&self, x: Var<'_, S>) -> Var<'_, S> {
        let out = x.value().map(|v| if v > S::zero() { v } else { S::zero() });
        self.push(out, Op::Relu { x: x.id })
    }

    /// Stride-1 same-padded convolution of `[rows, in_channels*h*w]` inputs
    /// with a `[out, in, k, k]` weight.
    pub fn conv2d(&self, x: Var<'_, S>, weight: Var<'_, S>, geom: ConvGeom) -> Result<Var<'_, S>> {
        let (xv, wv) = (x.value(), weight.value());
        if xv.cols() != geom.in_cols() || xv.shape().len() != 2 {
            return Err(Error::shape(
                "conv2d",
                &[xv.rows(), geom.in_cols()],
                xv.shape(),
            ));
        }
        if wv.len() != geom.weight_len() || geom.kernel % 2 == 0 {
            return Err(Error::shape(
                "conv2d weight",
                &[
                    geom.out_channels,
                    geom.in_channels,
                    geom.kernel,
                    geom.kernel,
                ],
                wv.shape(),
            ));
        }
        let rows = xv.rows();
        let out = kernels::conv2d(xv.data(), wv.data(), rows, &geom);
        drop((xv, wv));
        Ok(self.push(
            Tensor::new(vec![rows, geom.out_cols()], out)?,
            Op::Conv2d {
                x: x.id,
                weight: weight.id,
                geom,
            },
        ))
    }

    fn check_norm_params(
        &self,
        xv: &Tensor<S>,
        gamma: &Tensor<S>,
        beta: &Tensor<S>,
    ) -> Result<usize> {
        let c = gamma.len();
        if c == 0 || beta.len() != c || xv.cols() % c != 0 || xv.shape().len() != 2 {
            return Err(Error::shape("batch_norm", &[xv.rows(), c], xv.shape()));
        }
        Ok(c)
    }

    /// Training-mode normalization with batch statistics. Also returns the
    /// per-channel batch mean and biased variance.
    #[allow(clippy::type_complexity)]
    pub fn batch_norm(
        &self,
        x: Var<'_, S>,
        gamma: Var<'_, S>,
        beta: Var<'_, S>,
        eps: S,
    ) -> Result<(Var<'_, S>, Vec<S>, Vec<S>)> {
        let (xv, gv, bv) = (x.value(), gamma.value(), beta.value());
        let c = self.check_norm_params(&xv, &gv, &bv)?;
        let rows = xv.rows();
        let (mean, var) = kernels::channel_moments(xv.data(), rows, c);
        let (xhat, inv_std) = kernels::standardize(xv.data(), rows, &mean, &var, eps);
        let out = kernels::scale_shift(&xhat, gv.data(), bv.data(), xv.cols());
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        drop((xv, gv, bv));
        let v = self.push(
            out,
            Op::BatchNorm {
                x: x.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
            },
        );
        Ok((v, mean, var))
    }

    /// Inference-mode normalization with fixed statistics.
    pub fn norm_eval(
        &self,
        x: Var<'_, S>,
        gamma: Var<'_, S>,
        beta: Var<'_, S>,
        mean: &[S],
        var: &[S],
        eps: S,
    ) -> Result<Var<'_, S>> {
        let (xv, gv, bv) = (x.value(), gamma.value(), beta.value());
        let c = self.check_norm_params(&xv, &gv, &bv)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::shape("norm_eval stats", &[c], &[mean.len()]));
        }
        let (xhat, inv_std) = kernels::standardize(xv.data(), xv.rows(), mean, var, eps);
        let out = kernels::scale_shift(&xhat, gv.data(), bv.data(), xv.cols());
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        drop((xv, gv, bv));
        Ok(self.push(
            out,
            Op::NormEval {
                x: x.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
            },
        ))
    }

    /// Mean over each channel plane: `[rows, c*plane] -> [rows, c]`.
    pub fn channel_mean(&self, x: Var<'_, S>, channels: usize) -> Result<Var<'_, S>> {
        let xv = x.value();
        if channels == 0 || xv.cols() % channels != 0 {
            return Err(Error::shape("channel_mean", &[channels], xv.shape()));
        }
        let rows = xv.rows();
        let out = kernels::channel_mean(xv.data(), rows, channels);
        drop(xv);
        Ok(self.push(
            Tensor::new(vec![rows, channels], out)?,
            Op::ChannelMean { x: x.id, channels },
        ))
    }

    /// Row-wise softmax.
    pub fn softmax(&self, x: Var<'_, S>) -> Var<'_, S> {
        let out = crate::tensor::softmax_rows(&x.value());
        self.push(out, Op::Softmax { x: x.id })
    }

    pub fn sum(&self, x: Var<'_, S>) -> Var<'_, S> {
        let s = x.value().data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { x: x.id })
    }

    pub fn mean(&self, x: Var<'_, S>) -> Var<'_, S> {
        let xv = x.value();
        let s = xv.data().iter().copied().sum::<S>() / S::of_usize(xv.len().max(1));
        drop(xv);
        self.push(Tensor::scalar(s), Op::Mean { x: x.id })
    }

    /// Fused `H(target, softmax(logits))` per row, reduced over rows.
    ///
    /// Every target row must be a distribution: entries non-negative and
    /// summing to one.
    pub fn softmax_cross_entropy(
        &self,
        logits: Var<'_, S>,
        target: Var<'_, S>,
        reduction: Reduction,
    ) -> Result<Var<'_, S>> {
        let (zv, tv) = (logits.value(), target.value());
        if zv.shape() != tv.shape() || zv.is_empty() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                zv.shape(),
                tv.shape(),
            ));
        }
        let cols = zv.cols();
        let tol = S::from_f64_lossy(1e-6).max(S::epsilon() * S::of_usize(8 * cols));
        for row in tv.data().chunks(cols) {
            let total: S = row.iter().copied().sum();
            if row.iter().any(|&p| p < -tol || !p.is_finite()) || (total - S::one()).abs() > tol {
                return Err(Error::contract(format!(
                    "target row is not a distribution (sum {total})"
                )));
            }
        }
        let log_probs = kernels::log_softmax_rows(zv.data(), cols);
        let total: S = log_probs
            .iter()
            .zip(tv.data())
            .map(|(&lp, &t)| if t == S::zero() { S::zero() } else { -t * lp })
            .sum();
        let scale = match reduction {
            Reduction::Sum => S::one(),
            Reduction::Mean => S::one() / S::of_usize(zv.rows()),
        };
        drop((zv, tv));
        Ok(self.push(
            Tensor::scalar(total * scale),
            Op::SoftmaxCrossEntropy {
                logits: logits.id,
                target: target.id,
                log_probs,
                scale,
            },
        ))
    }

    /// Mean binary cross-entropy of sigmoid outputs against fixed 0/1 labels.
    pub fn sigmoid_bce(&self, logits: Var<'_, S>, targets: &[S]) -> Result<Var<'_, S>> {
        let zv = logits.value();
        if zv.len() != targets.len() || targets.is_empty() {
            return Err(Error::shape("sigmoid_bce", &[targets.len()], zv.shape()));
        }
        let scale = S::one() / S::of_usize(targets.len());
        let total: S = zv
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(S::zero()) - z * y + (S::one() + (-z.abs()).exp()).ln())
            .sum();
        drop(zv);
        Ok(self.push(
            Tensor::scalar(total * scale),
            Op::SigmoidBce {
                logits: logits.id,
                targets: targets.to_vec(),
                scale,
            },
        ))
    }

    /// Gradients of a scalar output with respect to each of `params`.
    pub fn grad(&self, output: Var<'_, S>, params: &[Var<'_, S>]) -> Result<Vec<Tensor<S>>> {
        let shape = output.shape();
        if !shape.is_empty() {
            return Err(Error::contract(format!(
                "grad requires a scalar output, got shape {shape:?}"
            )));
        }
        self.vjp(output, Tensor::scalar(S::one()), params)
    }

    /// Vector-Jacobian product: back-propagates `seed` from `output`.
    pub fn vjp(
        &self,
        output: Var<'_, S>,
        seed: Tensor<S>,
        params: &[Var<'_, S>],
    ) -> Result<Vec<Tensor<S>>> {
        self.check_own(&output);
        let nodes = self.nodes.borrow();
        let out_node = &nodes[output.id];
        if seed.shape() != out_node.value.shape() {
            return Err(Error::shape(
                "vjp seed",
                out_node.value.shape(),
                seed.shape(),
            ));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; output.id + 1];
        grads[output.id] = Some(seed.into_data());

        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            backward_node(&nodes, node, &g, &mut grads);
        }

        params
            .iter()
            .map(|p| {
                self.check_own(p);
                let shape = nodes[p.id].value.shape().to_vec();
                let data = match grads.get_mut(p.id).and_then(Option::take) {
                    Some(g) => g,
                    None => vec![S::zero(); shape.iter().product()],
                };
                Tensor::new(shape, data)
            })
            .collect()
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Vec<S>>, contribution: Vec<S>) {
    match slot {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contribution) {
                *a += c;
            }
        }
        None => *slot = Some(contribution),
    }
}

fn backward_node<S: Scalar>(
    nodes: &[Node<S>],
    node: &Node<S>,
    g: &[S],
    grads: &mut [Option<Vec<S>>],
) {
    let needs = |id: usize| nodes[id].requires_grad;
    let val = |id: usize| &nodes[id].value;
    match &node.op {
        Op::Leaf | Op::StopGradient => {}
        &Op::MatMul { a, b, m, k, n } => {
            if needs(a) {
                accumulate(
                    &mut grads[a],
                    kernels::matmul_grad_a(g, val(b).data(), m, k, n),
                );
            }
            if needs(b) {
                accumulate(
                    &mut grads[b],
                    kernels::matmul_grad_b(g, val(a).data(), m, k, n),
                );
            }
        }
        &Op::Add { a, b } => {
            if needs(a) {
                accumulate(&mut grads[a], g.to_vec());
            }
            if needs(b) {
                accumulate(&mut grads[b], g.to_vec());
            }
        }
        &Op::Mul { a, b } => {
            if needs(a) {
                let d = g.iter().zip(val(b).data()).map(|(&x, &y)| x * y).collect();
                accumulate(&mut grads[a], d);
            }
            if needs(b) {
                let d = g.iter().zip(val(a).data()).map(|(&x, &y)| x * y).collect();
                accumulate(&mut grads[b], d);
            }
        }
        &Op::AddBias { x, bias } => {
            if needs(x) {
                accumulate(&mut grads[x], g.to_vec());
            }
            if needs(bias) {
                let cols = val(x).cols();
                accumulate(
                    &mut grads[bias],
                    kernels::bias_grad(g, val(bias).len(), cols),
                );
            }
        }
        &Op::Scale { x, factor } => {
            if needs(x) {
                accumulate(&mut grads[x], g.iter().map(|&v| v * factor).collect());
            }
        }
        &Op::Relu { x } => {
            if needs(x) {
                let d = g
                    .iter()
                    .zip(val(x).data())
                    .map(|(&gv, &xv)| if xv > S::zero() { gv } else { S::zero() })
                    .collect();
                accumulate(&mut grads[x], d);
            }
        }
        &Op::Conv2d { x, weight, geom } => {
            let rows = val(x).rows();
            if needs(x) {
                let d = kernels::conv2d_grad_input(g, val(weight).data(), rows, &geom);
                accumulate(&mut grads[x], d);
            }
            if needs(weight) {
                let d = kernels::conv2d_grad_weight(g, val(x).data(), rows, &geom);
                accumulate(&mut grads[weight], d);
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let (x, gamma, beta) = (*x, *gamma, *beta);
            let cols = val(x).cols();
            let c = val(gamma).len();
            if needs(gamma) || needs(beta) {
                let (dg, db) = kernels::scale_shift_grads(g, xhat, c, cols);
                if needs(gamma) {
                    accumulate(&mut grads[gamma], dg);
                }
                if needs(beta) {
                    accumulate(&mut grads[beta], db);
                }
            }
            if needs(x) {
                let d = kernels::batch_norm_grad_input(
                    g,
                    xhat,
                    val(gamma).data(),
                    inv_std,
                    val(x).rows(),
                );
                accumulate(&mut grads[x], d);
            }
        }
        Op::NormEval {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let (x, gamma, beta) = (*x, *gamma, *beta);
            let cols = val(x).cols();
            let c = val(gamma).len();
            if needs(gamma) || needs(beta) {
                let (dg, db) = kernels::scale_shift_grads(g, xhat, c, cols);
                if needs(gamma) {
                    accumulate(&mut grads[gamma], dg);
                }
                if needs(beta) {
                    accumulate(&mut grads[beta], db);
                }
            }
            if needs(x) {
                let plane = cols / c;
                let gm = val(gamma).data();
                let d = g
                    .iter()
                    .enumerate()
                    .map(|(idx, &gv)| {
                        let ch = (idx % cols) / plane;
                        gv * gm[ch] * inv_std[ch]
                    })
                    .collect();
                accumulate(&mut grads[x], d);
            }
        }
        &Op::ChannelMean { x, channels } => {
            if needs(x) {
                let xv = val(x);
                let d = kernels::channel_mean_grad(g, xv.rows(), channels, xv.cols());
                accumulate(&mut grads[x], d);
            }
        }
        &Op::Softmax { x } => {
            if needs(x) {
                let y = node.value.data();
                let cols = node.value.cols();
                let mut d = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(cols).zip(g.chunks(cols)) {
                    let dot: S = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    d.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                }
                accumulate(&mut grads[x], d);
            }
        }
        &Op::Sum { x } => {
            if needs(x) {
                accumulate(&mut grads[x], vec![g[0]; val(x).len()]);
            }
        }
        &Op::Mean { x } => {
            if needs(x) {
                let n = val(x).len();
                accumulate(&mut grads[x], vec![g[0] / S::of_usize(n.max(1)); n]);
            }
        }
        Op::SoftmaxCrossEntropy {
            logits,
            target,
            log_probs,
            scale,
        } => {
            let (logits, target) = (*logits, *target);
            let coef = g[0] * *scale;
            if needs(logits) {
                let d = log_probs
                    .iter()
                    .zip(val(target).data())
                    .map(|(&lp, &t)| (lp.exp() - t) * coef)
                    .collect();
                accumulate(&mut grads[logits], d);
            }
            if needs(target) {
                accumulate(
                    &mut grads[target],
                    log_probs.iter().map(|&lp| -lp * coef).collect(),
                );
            }
        }
        Op::SigmoidBce {
            logits,
            targets,
            scale,
        } => {
            let logits = *logits;
            if needs(logits) {
                let coef = g[0] * *scale;
                let d = val(logits)
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&z, &y)| (sigmoid(z) - y) * coef)
                    .collect();
                accumulate(&mut grads[logits], d);
            }
        }
    }
}

pub fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}
