//! Noise protocols: fresh corruption at every step (persistent) and a
//! clean / noisy / clean episode (transient).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::noise::{apply_noise, NoiseKind, NoiseSpec};
use crate::data::{Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::net::{trace_sequences, InstanceTrace, Network, RolloutMode};
use crate::scalar::Scalar;
use crate::temporal::TemporalKernel;
use crate::tensor::Tensor;

/// Clean frames shown before and after the noisy interval.
pub const CLEAN_STEPS: usize = 10;

/// Drop in integrated performance: final confidence minus the mean
/// confidence from the first noisy step (0-based index `onset`) to the end.
pub fn dip(confidence: &[f64], onset: usize) -> Result<f64> {
    if onset >= confidence.len() {
        return Err(Error::contract(format!(
            "noise onset {onset} is past a {}-step trace",
            confidence.len()
        )));
    }
    let tail = &confidence[onset..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    Ok(confidence[confidence.len() - 1] - mean)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub clean_before: usize,
    pub noisy: usize,
    pub clean_after: usize,
}

impl Episode {
    pub fn new(noisy: usize) -> Self {
        Episode {
            clean_before: CLEAN_STEPS,
            noisy,
            clean_after: CLEAN_STEPS,
        }
    }

    pub fn steps(&self) -> usize {
        self.clean_before + self.noisy + self.clean_after
    }

    pub fn is_noisy(&self, k: usize) -> bool {
        k >= self.clean_before && k < self.clean_before + self.noisy
    }
}

/// Which frames of a sequence are corrupted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    Persistent { steps: usize },
    Transient(Episode),
}

impl Protocol {
    pub fn steps(&self) -> usize {
        match self {
            Protocol::Persistent { steps } => *steps,
            Protocol::Transient(e) => e.steps(),
        }
    }

    fn noisy(&self, k: usize) -> bool {
        match self {
            Protocol::Persistent { .. } => true,
            Protocol::Transient(e) => e.is_noisy(k),
        }
    }
}

/// Frame sequence for one standardized image, with a fresh noise sample
/// on every noisy step.
pub fn noisy_frames(
    image: &[f64],
    spec: &NoiseSpec,
    shape: crate::net::InputShape,
    protocol: &Protocol,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    (0..protocol.steps())
        .map(|k| {
            if protocol.noisy(k) {
                apply_noise(image, shape, spec, rng)
            } else {
                Ok(image.to_vec())
            }
        })
        .collect()
}

/// How noisy inputs are fed to the network.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRun {
    /// `Cascaded` or `SerialPerFrame`.
    pub mode: RolloutMode,
    pub kernel: TemporalKernel,
    pub trials: usize,
    pub seed: u64,
}

fn kind_index(kind: NoiseKind) -> u64 {
    NoiseKind::ALL.iter().position(|&k| k == kind).unwrap_or(0) as u64
}

/// Per-instance noise stream, independent of chunking and thread count.
fn instance_rng(
    seed: u64,
    kind: NoiseKind,
    trial: usize,
    tag: usize,
    instance: usize,
) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream = (kind_index(kind) << 56)
        | ((trial as u64 & 0xff) << 48)
        | ((tag as u64 & 0xffff) << 32)
        | instance as u64;
    rng.set_stream(stream);
    rng
}

/// Traces for every instance of `data` under one protocol and trial.
pub fn noisy_traces<S: Scalar>(
    net: &Network<S>,
    data: &Dataset,
    standardizer: Option<&Standardizer>,
    spec: &NoiseSpec,
    protocol: &Protocol,
    run: &NoiseRun,
    trial: usize,
) -> Result<Vec<InstanceTrace>> {
    let shape = data.shape;
    let tag = match protocol {
        Protocol::Persistent { .. } => 0,
        Protocol::Transient(e) => e.noisy + 1,
    };
    trace_sequences(net, data.len(), run.mode, &run.kernel, |idx| {
        let mut seqs = Vec::with_capacity(idx.len());
        for &i in idx {
            let img = match standardizer {
                Some(s) => s.apply(data.image(i), shape),
                None => data.image(i).to_vec(),
            };
            let mut rng = instance_rng(run.seed, spec.kind, trial, tag, i);
            seqs.push(noisy_frames(&img, spec, shape, protocol, &mut rng)?);
        }
        (0..protocol.steps())
            .map(|k| {
                let data: Vec<S> = seqs
                    .iter()
                    .flat_map(|s| s[k].iter().map(|&v| S::from_f64_lossy(v)))
                    .collect();
                Tensor::new(vec![idx.len(), shape.len()], data)
            })
            .collect()
    })
}

/// Final-step accuracy under fresh noise at every step, averaged over
/// `run.trials` repetitions per image.
pub fn persistent_accuracy<S: Scalar>(
    net: &Network<S>,
    data: &Dataset,
    standardizer: Option<&Standardizer>,
    spec: &NoiseSpec,
    steps: usize,
    run: &NoiseRun,
) -> Result<f64> {
    if run.trials == 0 || data.is_empty() {
        return Err(Error::contract("need at least one trial and one image"));
    }
    let protocol = Protocol::Persistent { steps };
    let mut correct = 0usize;
    for trial in 0..run.trials {
        let traces = noisy_traces(net, data, standardizer, spec, &protocol, run, trial)?;
        correct += traces
            .iter()
            .zip(&data.labels)
            .filter(|(tr, &y)| tr.predicted(tr.steps()) == y)
            .count();
    }
    Ok(correct as f64 / (run.trials * data.len()) as f64)
}

/// Mean DIP over images, trials, and the given noisy-interval lengths.
pub fn transient_dip<S: Scalar>(
    net: &Network<S>,
    data: &Dataset,
    standardizer: Option<&Standardizer>,
    spec: &NoiseSpec,
    noisy_lengths: &[usize],
    run: &NoiseRun,
) -> Result<f64> {
    if run.trials == 0 || data.is_empty() || noisy_lengths.is_empty() {
        return Err(Error::contract(
            "need trials, images, and noisy-interval lengths",
        ));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for &n in noisy_lengths {
        let episode = Episode::new(n);
        for trial in 0..run.trials {
            let traces = noisy_traces(
                net,
                data,
                standardizer,
                spec,
                &Protocol::Transient(episode),
                run,
                trial,
            )?;
            for (tr, &y) in traces.iter().zip(&data.labels) {
                let conf: Vec<f64> = tr.probs.iter().map(|p| p[y]).collect();
                total += dip(&conf, episode.clean_before)?;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// One transient episode on a single standardized image: the trace and
/// its DIP on the true-class confidence.
pub fn transient_episode<S: Scalar>(
    net: &Network<S>,
    image: &[f64],
    label: usize,
    spec: &NoiseSpec,
    episode: Episode,
    run: &NoiseRun,
    rng: &mut ChaCha8Rng,
) -> Result<(InstanceTrace, f64)> {
    let shape = net.spec.input;
    let frames: Vec<Tensor<S>> =
        noisy_frames(image, spec, shape, &Protocol::Transient(episode), rng)?
            .into_iter()
            .map(|f| {
                Tensor::new(
                    vec![1, shape.len()],
                    f.into_iter().map(S::from_f64_lossy).collect(),
                )
            })
            .collect::<Result<_>>()?;
    let trace = match run.mode {
        RolloutMode::Cascaded => net.rollout_cascaded(&frames, frames.len(), &run.kernel)?,
        RolloutMode::SerialPerFrame => net.rollout_serial_per_frame(&frames)?,
        RolloutMode::Serial => {
            return Err(Error::contract(
                "serial rollouts read a single static input",
            ))
        }
    };
    let tr = trace.instance(0);
    if label >= tr.classes() {
        return Err(Error::contract("label out of range"));
    }
    let conf: Vec<f64> = tr.probs.iter().map(|p| p[label]).collect();
    let d = dip(&conf, episode.clean_before)?;
    Ok((tr, d))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub noise: NoiseKind,
    pub rollout: RolloutMode,
    pub persistent_accuracy: f64,
    pub transient_dip: f64,
}

pub const NOISE_HEADER: &str = "noise,rollout,persistent_accuracy,transient_dip";

pub fn noise_csv(rows: &[NoiseRow]) -> String {
    let mut s = format!("{NOISE_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.noise, r.rollout, r.persistent_accuracy, r.transient_dip
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dip_hand_trace() {
        let d = dip(&[0.9, 0.9, 0.5, 0.7, 0.9], 2).unwrap();
        assert!((d - 0.2).abs() < 1e-15);
        assert!(dip(&[0.4; 6], 3).unwrap().abs() < 1e-15);
        assert!(dip(&[0.4; 3], 3).is_err());
    }

    #[test]
    fn episode_layout() {
        let e = Episode::new(3);
        assert_eq!(e.steps(), 23);
        assert!(!e.is_noisy(9));
        assert!(e.is_noisy(10) && e.is_noisy(12));
        assert!(!e.is_noisy(13));
        assert!(!(0..Episode::new(0).steps()).any(|k| Episode::new(0).is_noisy(k)));
    }
}
