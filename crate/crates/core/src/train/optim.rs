//! First-order optimizers over flat parameter lists.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check<S: Scalar>(params: &[Tensor<S>], grads: &[Tensor<S>], decay: &[bool]) -> Result<()> {
    if params.len() != grads.len() || params.len() != decay.len() {
        return Err(Error::contract(format!(
            "optimizer got {} parameters, {} gradients, {} decay flags",
            params.len(),
            grads.len(),
            decay.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape("optimizer step", p.shape(), g.shape()));
        }
    }
    Ok(())
}

/// SGD with (optionally Nesterov) momentum. L2 weight decay is added to
/// the gradient of every parameter whose decay flag is set:
///
/// ```text
/// d = g + wd * p
/// v = mu * v + d
/// p -= lr * (d + mu * v)     (nesterov)
/// p -= lr * v                (classical)
/// ```
#[derive(Clone, Debug)]
pub struct Sgd<S> {
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    decay: Vec<bool>,
    velocity: Vec<Vec<S>>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(momentum: f64, weight_decay: f64, nesterov: bool, decay: Vec<bool>) -> Self {
        Sgd {
            momentum,
            weight_decay,
            nesterov,
            decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor<S>], grads: &[Tensor<S>], lr: f64) -> Result<()> {
        check(params, grads, &self.decay)?;
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![S::zero(); p.len()]).collect();
        }
        let lr = S::from_f64_lossy(lr);
        let mu = S::from_f64_lossy(self.momentum);
        let wd = S::from_f64_lossy(self.weight_decay);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let decay = self.decay[k];
            let v = &mut self.velocity[k];
            for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                let d = if decay { gi + wd * *w } else { gi };
                *vi = mu * *vi + d;
                let update = if self.nesterov { d + mu * *vi } else { *vi };
                *w -= lr * update;
            }
        }
        Ok(())
    }
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    decay: Vec<bool>,
    t: i32,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(weight_decay: f64, decay: Vec<bool>) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor<S>], grads: &[Tensor<S>], lr: f64) -> Result<()> {
        check(params, grads, &self.decay)?;
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![S::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let b1 = S::from_f64_lossy(self.beta1);
        let b2 = S::from_f64_lossy(self.beta2);
        let c1 = S::from_f64_lossy(1.0 - self.beta1.powi(self.t));
        let c2 = S::from_f64_lossy(1.0 - self.beta2.powi(self.t));
        let eps = S::from_f64_lossy(self.eps);
        let wd = S::from_f64_lossy(self.weight_decay);
        let lr = S::from_f64_lossy(lr);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let decay = self.decay[k];
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let d = if decay { gi + wd * *w } else { gi };
                m[i] = b1 * m[i] + (S::one() - b1) * d;
                v[i] = b2 * v[i] + (S::one() - b2) * d * d;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Step decay: `lr0 * factor^(epoch / every)` with 0-based epochs.
pub fn lr_schedule(epoch: usize, lr0: f64, factor: f64, every: usize) -> f64 {
    if every == 0 {
        return lr0;
    }
    lr0 * factor.powi((epoch / every) as i32)
}
