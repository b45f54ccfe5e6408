use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::norm::NormStats;
use super::spec::{Arch, NetworkSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Role of a parameter; weight decay applies to `Weight` only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
}

/// Positions of each parameter in the flat list.
///
/// Order: stem `(w, gamma, beta)`, then per block
/// `(w1, gamma1, beta1, w2, gamma2, beta2)`, then per head `(w, b)`.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    blocks: usize,
    heads: usize,
}

pub struct BlockParams {
    pub w1: usize,
    pub gamma1: usize,
    pub beta1: usize,
    pub w2: usize,
    pub gamma2: usize,
    pub beta2: usize,
}

impl Layout {
    pub fn new(spec: &NetworkSpec) -> Self {
        Layout {
            blocks: spec.blocks,
            heads: spec.heads(),
        }
    }

    pub fn len(&self) -> usize {
        3 + 6 * self.blocks + 2 * self.heads
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn stem(&self) -> (usize, usize, usize) {
        (0, 1, 2)
    }

    pub fn block(&self, i: usize) -> BlockParams {
        let b = 3 + 6 * i;
        BlockParams {
            w1: b,
            gamma1: b + 1,
            beta1: b + 2,
            w2: b + 3,
            gamma2: b + 4,
            beta2: b + 5,
        }
    }

    pub fn head(&self, j: usize) -> (usize, usize) {
        let b = 3 + 6 * self.blocks + 2 * j;
        (b, b + 1)
    }

    pub fn kinds(&self) -> Vec<ParamKind> {
        use ParamKind::*;
        let mut k = vec![Weight, NormScale, NormShift];
        for _ in 0..self.blocks {
            k.extend([Weight, NormScale, NormShift, Weight, NormScale, NormShift]);
        }
        for _ in 0..self.heads {
            k.extend([Weight, Bias]);
        }
        k
    }

    /// Expected shape of every parameter, in layout order.
    pub fn shapes(spec: &NetworkSpec) -> Vec<Vec<usize>> {
        let w = spec.width;
        let (stem, block) = match spec.arch {
            Arch::Mlp => (vec![spec.input.len(), w], vec![w, w]),
            Arch::Conv { kernel } => (
                vec![w, spec.input.channels, kernel, kernel],
                vec![w, w, kernel, kernel],
            ),
        };
        let mut s = vec![stem, vec![w], vec![w]];
        for _ in 0..2 * spec.blocks {
            s.extend([block.clone(), vec![w], vec![w]]);
        }
        for _ in 0..spec.heads() {
            s.extend([vec![w, spec.classes], vec![spec.classes]]);
        }
        s
    }

    pub fn names(&self) -> Vec<String> {
        let mut n = vec!["stem.w".into(), "stem.gamma".into(), "stem.beta".into()];
        for i in 0..self.blocks {
            for p in ["w1", "gamma1", "beta1", "w2", "gamma2", "beta2"] {
                n.push(format!("block{i}.{p}"));
            }
        }
        for j in 0..self.heads {
            n.push(format!("head{j}.w"));
            n.push(format!("head{j}.b"));
        }
        n
    }
}

/// Network architecture, flat parameter list, and per-step normalization
/// statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Network<S> {
    pub spec: NetworkSpec,
    pub params: Vec<Tensor<S>>,
    pub norm: NormStats<S>,
}

impl<S: Scalar> Network<S> {
    /// He-normal weights, unit scales, zero shifts and biases.
    pub fn init(spec: NetworkSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let w = spec.width;
        let (fan_stem, fan_block) = match spec.arch {
            Arch::Mlp => (spec.input.len(), w),
            Arch::Conv { kernel } => (spec.input.channels * kernel * kernel, w * kernel * kernel),
        };
        let kinds = Layout::new(&spec).kinds();
        let mut params = Vec::with_capacity(kinds.len());
        for (i, (shape, kind)) in Layout::shapes(&spec).into_iter().zip(kinds).enumerate() {
            let p = match kind {
                ParamKind::Weight => {
                    let std = if i == 0 {
                        (2.0 / fan_stem as f64).sqrt()
                    } else if i < 3 + 6 * spec.blocks {
                        (2.0 / fan_block as f64).sqrt()
                    } else {
                        (1.0 / w as f64).sqrt()
                    };
                    let normal = Normal::new(0.0, std).expect("positive std");
                    let n: usize = shape.iter().product();
                    let data = (0..n)
                        .map(|_| S::from_f64_lossy(normal.sample(rng)))
                        .collect();
                    Tensor::new(shape, data)?
                }
                ParamKind::NormScale => Tensor::full(&shape, S::one()),
                ParamKind::Bias | ParamKind::NormShift => Tensor::zeros(&shape),
            };
            params.push(p);
        }
        let norm = NormStats::new(spec.norm_layers(), w, spec.horizon);
        Ok(Network { spec, params, norm })
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.spec)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Checks that the parameter list and statistics agree with the spec.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let shapes = Layout::shapes(&self.spec);
        if shapes.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                shapes.len(),
                self.params.len()
            )));
        }
        for (name, (a, b)) in self
            .layout()
            .names()
            .iter()
            .zip(shapes.iter().zip(&self.params))
        {
            if a.as_slice() != b.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    b.shape(),
                    a
                )));
            }
        }
        let n = &self.norm;
        let ok = n.horizon == self.spec.horizon
            && n.layers.len() == self.spec.norm_layers()
            && n.layers.iter().all(|l| {
                l.len() == n.horizon
                    && l.iter()
                        .all(|s| s.mean.len() == self.spec.width && s.var.len() == self.spec.width)
            });
        if !ok {
            return Err(Error::Checkpoint(
                "normalization statistics do not match the spec".into(),
            ));
        }
        Ok(())
    }

    /// Same network in another scalar type.
    pub fn cast<T: Scalar>(&self) -> Network<T> {
        Network {
            spec: self.spec.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            norm: NormStats {
                horizon: self.norm.horizon,
                momentum: self.norm.momentum,
                eps: self.norm.eps,
                layers: self
                    .norm
                    .layers
                    .iter()
                    .map(|l| {
                        l.iter()
                            .map(|s| super::norm::ChannelStats {
                                mean: crate::scalar::cast_slice(&s.mean),
                                var: crate::scalar::cast_slice(&s.var),
                            })
                            .collect()
                    })
                    .collect(),
            },
        }
    }
}
