//! Rollouts over whole datasets, split into fixed chunks that run in
//! parallel. Chunk boundaries do not depend on the thread count, so results
//! are identical for any pool size.

use rayon::prelude::*;

use super::model::Network;
use super::trace::{InstanceTrace, RolloutMode, RolloutTrace};
use crate::data::{Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::temporal::TemporalKernel;
use crate::tensor::{softmax_rows, Tensor};

/// Instances per parallel work item.
pub const CHUNK: usize = 64;

/// How to roll a network out on a static input.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutPlan {
    pub mode: RolloutMode,
    pub steps: usize,
    pub kernel: TemporalKernel,
}

impl RolloutPlan {
    pub fn cascaded(steps: usize, kernel: TemporalKernel) -> Self {
        RolloutPlan {
            mode: RolloutMode::Cascaded,
            steps,
            kernel,
        }
    }

    pub fn serial(steps: usize) -> Self {
        RolloutPlan {
            mode: RolloutMode::Serial,
            steps,
            kernel: TemporalKernel::OneStepDelay,
        }
    }

    /// Block-update cycles spent to reach 1-based step `t`.
    pub fn cycles_at<S: Scalar>(&self, net: &Network<S>, t: usize) -> usize {
        match self.mode {
            RolloutMode::Cascaded | RolloutMode::Serial => t,
            RolloutMode::SerialPerFrame => t * net.spec.delays(),
        }
    }

    pub fn run<S: Scalar>(&self, net: &Network<S>, x: &Tensor<S>) -> Result<RolloutTrace<S>> {
        if self.steps == 0 {
            return Err(Error::contract("rollout needs at least one step"));
        }
        match self.mode {
            RolloutMode::Cascaded => net.rollout_static(x, self.steps, &self.kernel),
            RolloutMode::Serial => net.rollout_serial(x, self.steps),
            RolloutMode::SerialPerFrame => {
                net.rollout_serial_per_frame(&vec![x.clone(); self.steps])
            }
        }
    }
}

/// Rolls the network out on every instance of `data` and returns the
/// per-instance traces in dataset order.
pub fn trace_dataset<S: Scalar>(
    net: &Network<S>,
    data: &Dataset,
    standardizer: Option<&Standardizer>,
    plan: &RolloutPlan,
) -> Result<Vec<InstanceTrace>> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let chunks: Vec<Vec<InstanceTrace>> = indices
        .par_chunks(CHUNK)
        .map(|idx| {
            let x = data.batch::<S>(idx, standardizer);
            plan.run(net, &x).map(|trace| trace.instances())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Like [`trace_dataset`] with a caller-built input sequence per chunk,
/// for protocols whose frames change over time. `frames` receives the
/// dataset indices of one chunk and returns one `[n, len]` tensor per step.
pub fn trace_sequences<S: Scalar, F>(
    net: &Network<S>,
    len: usize,
    mode: RolloutMode,
    kernel: &TemporalKernel,
    frames: F,
) -> Result<Vec<InstanceTrace>>
where
    F: Fn(&[usize]) -> Result<Vec<Tensor<S>>> + Sync,
{
    let indices: Vec<usize> = (0..len).collect();
    let chunks: Vec<Vec<InstanceTrace>> = indices
        .par_chunks(CHUNK)
        .map(|idx| {
            let seq = frames(idx)?;
            let trace = match mode {
                RolloutMode::Cascaded => net.rollout_cascaded(&seq, seq.len(), kernel)?,
                RolloutMode::SerialPerFrame => net.rollout_serial_per_frame(&seq)?,
                RolloutMode::Serial => {
                    return Err(Error::contract(
                        "serial rollouts read a single static input",
                    ));
                }
            };
            Ok(trace.instances())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// First 1-based step from which every instance's output probabilities
/// stay within `tol` (max norm) of the standard forward pass, looking at
/// most `max_steps` steps ahead. `None` if they never settle.
pub fn settling_step<S: Scalar>(
    net: &Network<S>,
    data: &Dataset,
    standardizer: Option<&Standardizer>,
    kernel: &TemporalKernel,
    tol: f64,
    max_steps: usize,
) -> Result<Option<usize>> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let gaps: Vec<Vec<f64>> = indices
        .par_chunks(CHUNK)
        .map(|idx| {
            let x = data.batch::<S>(idx, standardizer);
            let standard = softmax_rows(&net.forward_standard(&x)?);
            let trace = net.rollout_static(&x, max_steps, kernel)?;
            Ok(trace
                .probs
                .iter()
                .map(|p| p.max_abs_diff(&standard).as_f64())
                .collect())
        })
        .collect::<Result<_>>()?;
    let worst: Vec<f64> = (0..max_steps)
        .map(|t| gaps.iter().map(|g| g[t]).fold(0.0, f64::max))
        .collect();
    let unsettled = worst.iter().rposition(|&g| !(g < tol));
    Ok(match unsettled {
        None => Some(1),
        Some(t) if t + 1 < max_steps => Some(t + 2),
        Some(_) => None,
    })
}
