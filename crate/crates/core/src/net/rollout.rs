//! Forward passes written once over [`Backend`], used both for plain
//! evaluation and for building differentiable tapes.
//!
//! Step indices are 1-based. In cascaded mode every component fires once
//! per step on the values its predecessor emitted, seen through a delay
//! line. The stem fires once before the first step as the input arrives,
//! so under the one-step delay the first step already sees the stem output
//! and the readout settles at step `blocks + 1`.

use std::marker::PhantomData;
use std::sync::Arc;

use super::model::{Layout, Network};
use super::norm::{normalize, NormCtx};
use super::spec::{Arch, NetworkSpec};
use super::trace::{RolloutMode, RolloutTrace};
use crate::autodiff::{Backend, Eager};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::temporal::{DelayLine, TemporalKernel};
use crate::tensor::Tensor;

/// Readout and its input at one step.
pub struct StepOutput<V> {
    pub logits: V,
    pub embedding: V,
}

/// Layer-level forward pieces bound to one parameter list.
pub struct Forward<'a, S: Scalar, B: Backend<S>> {
    backend: &'a B,
    spec: &'a NetworkSpec,
    layout: Layout,
    params: &'a [B::Value],
    _scalar: PhantomData<S>,
}

impl<'a, S: Scalar, B: Backend<S>> Forward<'a, S, B> {
    pub fn new(backend: &'a B, spec: &'a NetworkSpec, params: &'a [B::Value]) -> Result<Self> {
        let layout = Layout::new(spec);
        if params.len() != layout.len() {
            return Err(Error::contract(format!(
                "network expects {} parameter tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        Ok(Forward {
            backend,
            spec,
            layout,
            params,
            _scalar: PhantomData,
        })
    }

    fn linear(&self, x: &B::Value, w: usize, first: bool) -> Result<B::Value> {
        let w = &self.params[w];
        match self.spec.arch {
            Arch::Mlp => self.backend.matmul(x, w),
            Arch::Conv { kernel } => {
                let geom = if first {
                    self.spec.stem_geom(kernel)
                } else {
                    self.spec.block_geom(kernel)
                };
                self.backend.conv2d(x, w, geom)
            }
        }
    }

    fn check_input(&self, x: &B::Value) -> Result<()> {
        let shape = self.backend.shape_of(x);
        let want = self.spec.input.len();
        if shape.len() != 2 || shape[1] != want {
            return Err(Error::shape(
                "network input",
                &[shape.first().copied().unwrap_or(0), want],
                &shape,
            ));
        }
        Ok(())
    }

    /// `ReLU(norm(W x))`
    pub fn stem(&self, ctx: &mut NormCtx<'_, S>, x: &B::Value, t: usize) -> Result<B::Value> {
        self.check_input(x)?;
        let (w, g, b) = self.layout.stem();
        let h = self.linear(x, w, true)?;
        let h = normalize(
            self.backend,
            ctx,
            0,
            t,
            &h,
            &self.params[g],
            &self.params[b],
        )?;
        Ok(self.backend.relu(&h))
    }

    /// Residual transform of block `i` (0-based): `norm(W2 ReLU(norm(W1 z)))`.
    pub fn residual(
        &self,
        ctx: &mut NormCtx<'_, S>,
        i: usize,
        z: &B::Value,
        t: usize,
    ) -> Result<B::Value> {
        let p = self.layout.block(i);
        let h = self.linear(z, p.w1, false)?;
        let h = normalize(
            self.backend,
            ctx,
            1 + 2 * i,
            t,
            &h,
            &self.params[p.gamma1],
            &self.params[p.beta1],
        )?;
        let h = self.backend.relu(&h);
        let h = self.linear(&h, p.w2, false)?;
        normalize(
            self.backend,
            ctx,
            2 + 2 * i,
            t,
            &h,
            &self.params[p.gamma2],
            &self.params[p.beta2],
        )
    }

    /// Skip connection plus transmitted residual, rectified.
    pub fn merge(&self, z: &B::Value, delayed: &B::Value) -> Result<B::Value> {
        Ok(self.backend.relu(&self.backend.add(z, delayed)?))
    }

    /// Readout used at step `t`.
    pub fn head(&self, z: &B::Value, t: usize) -> Result<StepOutput<B::Value>> {
        let embedding = match self.spec.arch {
            Arch::Mlp => z.clone(),
            Arch::Conv { .. } => self.backend.channel_mean(z, self.spec.width)?,
        };
        let (w, b) = self.layout.head(self.spec.head_for_step(t));
        let logits = self.backend.add_bias(
            &self.backend.matmul(&embedding, &self.params[w])?,
            &self.params[b],
        )?;
        Ok(StepOutput { logits, embedding })
    }

    /// Single instantaneous pass through every block, using the final
    /// normalization slot and the final head.
    pub fn standard(&self, ctx: &mut NormCtx<'_, S>, x: &B::Value) -> Result<StepOutput<B::Value>> {
        let last = self.spec.horizon;
        let mut z = self.stem(ctx, x, last)?;
        for i in 0..self.spec.blocks {
            let f = self.residual(ctx, i, &z, last)?;
            z = self.merge(&z, &f)?;
        }
        self.head(&z, last)
    }

    /// Cascaded rollout over one input frame per step.
    ///
    /// Every block reads its predecessor's value from the same step; what
    /// travels between steps is each transform's output, through its delay
    /// line. The identity kernel transmits instantly and therefore always
    /// normalizes with the final slot, matching [`Forward::standard`].
    pub fn cascaded(
        &self,
        ctx: &mut NormCtx<'_, S>,
        inputs: &[B::Value],
        kernel: &TemporalKernel,
    ) -> Result<Vec<StepOutput<B::Value>>> {
        kernel.validate()?;
        if inputs.is_empty() {
            return Err(Error::contract("cascaded rollout needs at least one step"));
        }
        let mut stem_line = DelayLine::new(kernel.clone());
        let mut lines: Vec<DelayLine<B::Value>> = (0..self.spec.blocks)
            .map(|_| DelayLine::new(kernel.clone()))
            .collect();
        let mut out = Vec::with_capacity(inputs.len());
        for (k, x) in inputs.iter().enumerate() {
            let t = k + 1;
            let slot = if kernel.is_identity() {
                self.spec.horizon
            } else {
                t
            };
            let s = self.stem(ctx, x, slot)?;
            if t == 1 {
                stem_line.push_with(self.backend, s.clone())?;
            }
            let mut z = stem_line.push_with(self.backend, s)?;
            for (i, line) in lines.iter_mut().enumerate() {
                let f = self.residual(ctx, i, &z, slot)?;
                let delayed = line.push_with(self.backend, f)?;
                z = self.merge(&z, &delayed)?;
            }
            out.push(self.head(&z, t)?);
        }
        Ok(out)
    }

    /// Serial anytime rollout: the stem fires at step 1 and one more block
    /// at each later step; every step reads out the stream so far.
    pub fn serial(
        &self,
        ctx: &mut NormCtx<'_, S>,
        x: &B::Value,
        steps: usize,
    ) -> Result<Vec<StepOutput<B::Value>>> {
        if steps < self.spec.delays() {
            return Err(Error::contract(format!(
                "serial rollout needs at least {} steps to reach every block, got {steps}",
                self.spec.delays()
            )));
        }
        let last = self.spec.horizon;
        let mut z = self.stem(ctx, x, last)?;
        let mut out = Vec::with_capacity(steps);
        for t in 1..=steps {
            if t >= 2 && t - 1 <= self.spec.blocks {
                let f = self.residual(ctx, t - 2, &z, last)?;
                z = self.merge(&z, &f)?;
            }
            out.push(self.head(&z, t)?);
        }
        Ok(out)
    }
}

fn as_batch<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    match x.shape().len() {
        1 => x.clone().reshape(vec![1, x.len()]),
        2 => Ok(x.clone()),
        _ => Err(Error::shape("network input", &[1, x.len()], x.shape())),
    }
}

fn unpack<S: Scalar>(
    mode: RolloutMode,
    cycles: usize,
    steps: Vec<StepOutput<Arc<Tensor<S>>>>,
) -> RolloutTrace<S> {
    let take = |a: Arc<Tensor<S>>| Arc::try_unwrap(a).unwrap_or_else(|a| (*a).clone());
    let (logits, embeddings) = steps
        .into_iter()
        .map(|s| (take(s.logits), take(s.embedding)))
        .unzip();
    RolloutTrace::new(mode, cycles, logits, embeddings)
}

impl<S: Scalar> Network<S> {
    fn eager_params(&self) -> Vec<Arc<Tensor<S>>> {
        self.params.iter().cloned().map(Arc::new).collect()
    }

    /// Instantaneous feedforward logits, `[N, C]`. A 1-D input is treated as
    /// a single instance.
    pub fn forward_standard(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let params = self.eager_params();
        let fwd = Forward::new(&Eager, &self.spec, &params)?;
        let out = fwd.standard(&mut NormCtx::Eval(&self.norm), &Arc::new(as_batch(x)?))?;
        Ok(Arc::try_unwrap(out.logits).unwrap_or_else(|a| (*a).clone()))
    }

    /// Cascaded rollout for `steps` steps over one frame per step.
    pub fn rollout_cascaded(
        &self,
        inputs: &[Tensor<S>],
        steps: usize,
        kernel: &TemporalKernel,
    ) -> Result<RolloutTrace<S>> {
        if inputs.len() != steps {
            return Err(Error::contract(format!(
                "input sequence has {} frames for {steps} steps",
                inputs.len()
            )));
        }
        let params = self.eager_params();
        let fwd = Forward::new(&Eager, &self.spec, &params)?;
        let frames = inputs
            .iter()
            .map(|x| as_batch(x).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        let out = fwd.cascaded(&mut NormCtx::Eval(&self.norm), &frames, kernel)?;
        Ok(unpack(RolloutMode::Cascaded, steps, out))
    }

    /// Cascaded rollout holding one input fixed for every step.
    pub fn rollout_static(
        &self,
        x: &Tensor<S>,
        steps: usize,
        kernel: &TemporalKernel,
    ) -> Result<RolloutTrace<S>> {
        let x = as_batch(x)?;
        let frames = vec![x; steps];
        self.rollout_cascaded(&frames, steps, kernel)
    }

    /// Serial anytime rollout; `steps` must reach every block.
    pub fn rollout_serial(&self, x: &Tensor<S>, steps: usize) -> Result<RolloutTrace<S>> {
        let params = self.eager_params();
        let fwd = Forward::new(&Eager, &self.spec, &params)?;
        let out = fwd.serial(
            &mut NormCtx::Eval(&self.norm),
            &Arc::new(as_batch(x)?),
            steps,
        )?;
        Ok(unpack(RolloutMode::Serial, steps, out))
    }

    /// A complete serial pass on every frame, one reported step per frame.
    /// Each pass costs `blocks + 1` cycles.
    pub fn rollout_serial_per_frame(&self, inputs: &[Tensor<S>]) -> Result<RolloutTrace<S>> {
        if inputs.is_empty() {
            return Err(Error::contract("need at least one frame"));
        }
        let params = self.eager_params();
        let fwd = Forward::new(&Eager, &self.spec, &params)?;
        let mut out = Vec::with_capacity(inputs.len());
        for x in inputs {
            out.push(fwd.standard(&mut NormCtx::Eval(&self.norm), &Arc::new(as_batch(x)?))?);
        }
        Ok(unpack(
            RolloutMode::SerialPerFrame,
            inputs.len() * self.spec.delays(),
            out,
        ))
    }
}
