//! Execution backends for network code.
//!
//! Network forward passes are written once against [`Backend`]; the tape
//! backend records for differentiation, the eager backend only computes
//! values and keeps no history.

use std::sync::Arc;

use super::kernels::{self, ConvGeom};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub trait Backend<S: Scalar> {
    type Value: Clone;

    fn constant(&self, t: Tensor<S>) -> Self::Value;
    fn to_tensor(&self, v: &Self::Value) -> Tensor<S>;
    fn zeros_like(&self, v: &Self::Value) -> Self::Value;
    fn shape_of(&self, v: &Self::Value) -> Vec<usize>;

    fn matmul(&self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn add(&self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn add_bias(&self, x: &Self::Value, bias: &Self::Value) -> Result<Self::Value>;
    fn scale(&self, x: &Self::Value, factor: S) -> Self::Value;
    fn relu(&self, x: &Self::Value) -> Self::Value;
    fn conv2d(&self, x: &Self::Value, weight: &Self::Value, geom: ConvGeom) -> Result<Self::Value>;
    /// Returns the normalized value plus batch mean and biased variance.
    #[allow(clippy::type_complexity)]
    fn batch_norm(
        &self,
        x: &Self::Value,
        gamma: &Self::Value,
        beta: &Self::Value,
        eps: S,
    ) -> Result<(Self::Value, Vec<S>, Vec<S>)>;
    #[allow(clippy::too_many_arguments)]
    fn norm_eval(
        &self,
        x: &Self::Value,
        gamma: &Self::Value,
        beta: &Self::Value,
        mean: &[S],
        var: &[S],
        eps: S,
    ) -> Result<Self::Value>;
    fn channel_mean(&self, x: &Self::Value, channels: usize) -> Result<Self::Value>;
}

impl<'t, S: Scalar> Backend<S> for &'t Tape<S> {
    type Value = Var<'t, S>;

    fn constant(&self, t: Tensor<S>) -> Var<'t, S> {
        Tape::constant(self, t)
    }

    fn to_tensor(&self, v: &Var<'t, S>) -> Tensor<S> {
        v.value().clone()
    }

    fn zeros_like(&self, v: &Var<'t, S>) -> Var<'t, S> {
        let shape = v.shape();
        Tape::constant(self, Tensor::zeros(&shape))
    }

    fn shape_of(&self, v: &Var<'t, S>) -> Vec<usize> {
        v.shape()
    }

    fn matmul(&self, a: &Var<'t, S>, b: &Var<'t, S>) -> Result<Var<'t, S>> {
        Tape::matmul(self, *a, *b)
    }

    fn add(&self, a: &Var<'t, S>, b: &Var<'t, S>) -> Result<Var<'t, S>> {
        Tape::add(self, *a, *b)
    }

    fn add_bias(&self, x: &Var<'t, S>, bias: &Var<'t, S>) -> Result<Var<'t, S>> {
        Tape::add_bias(self, *x, *bias)
    }

    fn scale(&self, x: &Var<'t, S>, factor: S) -> Var<'t, S> {
        Tape::scale(self, *x, factor)
    }

    fn relu(&self, x: &Var<'t, S>) -> Var<'t, S> {
        Tape::relu(self, *x)
    }

    fn conv2d(&self, x: &Var<'t, S>, weight: &Var<'t, S>, geom: ConvGeom) -> Result<Var<'t, S>> {
        Tape::conv2d(self, *x, *weight, geom)
    }

    fn batch_norm(
        &self,
        x: &Var<'t, S>,
        gamma: &Var<'t, S>,
        beta: &Var<'t, S>,
        eps: S,
    ) -> Result<(Var<'t, S>, Vec<S>, Vec<S>)> {
        Tape::batch_norm(self, *x, *gamma, *beta, eps)
    }

    fn norm_eval(
        &self,
        x: &Var<'t, S>,
        gamma: &Var<'t, S>,
        beta: &Var<'t, S>,
        mean: &[S],
        var: &[S],
        eps: S,
    ) -> Result<Var<'t, S>> {
        Tape::norm_eval(self, *x, *gamma, *beta, mean, var, eps)
    }

    fn channel_mean(&self, x: &Var<'t, S>, channels: usize) -> Result<Var<'t, S>> {
        Tape::channel_mean(self, *x, channels)
    }
}

/// Value-only backend; shares buffers through `Arc` so delay lines and
/// parameter lists clone cheaply across threads.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

type Shared<S> = Arc<Tensor<S>>;

impl<S: Scalar> Backend<S> for Eager {
    type Value = Shared<S>;

    fn constant(&self, t: Tensor<S>) -> Shared<S> {
        Arc::new(t)
    }

    fn to_tensor(&self, v: &Shared<S>) -> Tensor<S> {
        (**v).clone()
    }

    fn zeros_like(&self, v: &Shared<S>) -> Shared<S> {
        Arc::new(Tensor::zeros(v.shape()))
    }

    fn shape_of(&self, v: &Shared<S>) -> Vec<usize> {
        v.shape().to_vec()
    }

    fn matmul(&self, a: &Shared<S>, b: &Shared<S>) -> Result<Shared<S>> {
        if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::shape("matmul", a.shape(), b.shape()));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        Ok(Arc::new(Tensor::new(
            vec![m, n],
            kernels::matmul(a.data(), b.data(), m, k, n),
        )?))
    }

    fn add(&self, a: &Shared<S>, b: &Shared<S>) -> Result<Shared<S>> {
        if a.shape() != b.shape() {
            return Err(Error::shape("add", a.shape(), b.shape()));
        }
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(Arc::new(Tensor::new(a.shape().to_vec(), data)?))
    }

    fn add_bias(&self, x: &Shared<S>, bias: &Shared<S>) -> Result<Shared<S>> {
        let cols = x.cols();
        if bias.is_empty() || cols % bias.len() != 0 {
            return Err(Error::shape("add_bias", &[cols], bias.shape()));
        }
        Ok(Arc::new(Tensor::new(
            x.shape().to_vec(),
            kernels::add_bias(x.data(), bias.data(), cols),
        )?))
    }

    fn scale(&self, x: &Shared<S>, factor: S) -> Shared<S> {
        Arc::new(x.map(|v| v * factor))
    }

    fn relu(&self, x: &Shared<S>) -> Shared<S> {
        Arc::new(x.map(|v| if v > S::zero() { v } else { S::zero() }))
    }

    fn conv2d(&self, x: &Shared<S>, weight: &Shared<S>, geom: ConvGeom) -> Result<Shared<S>> {
        if x.cols() != geom.in_cols() || weight.len() != geom.weight_len() || geom.kernel % 2 == 0 {
            return Err(Error::shape(
                "conv2d",
                &[x.rows(), geom.in_cols()],
                x.shape(),
            ));
        }
        let rows = x.rows();
        Ok(Arc::new(Tensor::new(
            vec![rows, geom.out_cols()],
            kernels::conv2d(x.data(), weight.data(), rows, &geom),
        )?))
    }

    fn batch_norm(
        &self,
        x: &Shared<S>,
        gamma: &Shared<S>,
        beta: &Shared<S>,
        eps: S,
    ) -> Result<(Shared<S>, Vec<S>, Vec<S>)> {
        let c = gamma.len();
        if c == 0 || beta.len() != c || x.cols() % c != 0 {
            return Err(Error::shape("batch_norm", &[x.rows(), c], x.shape()));
        }
        let (mean, var) = kernels::channel_moments(x.data(), x.rows(), c);
        let (xhat, _) = kernels::standardize(x.data(), x.rows(), &mean, &var, eps);
        let out = kernels::scale_shift(&xhat, gamma.data(), beta.data(), x.cols());
        Ok((Arc::new(Tensor::new(x.shape().to_vec(), out)?), mean, var))
    }

    fn norm_eval(
        &self,
        x: &Shared<S>,
        gamma: &Shared<S>,
        beta: &Shared<S>,
        mean: &[S],
        var: &[S],
        eps: S,
    ) -> Result<Shared<S>> {
        let c = gamma.len();
        if c == 0 || beta.len() != c || x.cols() % c != 0 || mean.len() != c || var.len() != c {
            return Err(Error::shape("norm_eval", &[x.rows(), c], x.shape()));
        }
        let (xhat, _) = kernels::standardize(x.data(), x.rows(), mean, var, eps);
        let out = kernels::scale_shift(&xhat, gamma.data(), beta.data(), x.cols());
        Ok(Arc::new(Tensor::new(x.shape().to_vec(), out)?))
    }

    fn channel_mean(&self, x: &Shared<S>, channels: usize) -> Result<Shared<S>> {
        if channels == 0 || x.cols() % channels != 0 {
            return Err(Error::shape("channel_mean", &[channels], x.shape()));
        }
        let rows = x.rows();
        Ok(Arc::new(Tensor::new(
            vec![rows, channels],
            kernels::channel_mean(x.data(), rows, channels),
        )?))
    }
}
