//! Stopping rules, speed-accuracy curves, and selection latency.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::InstanceTrace;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoppingPolicy {
    /// Stop at the first step whose top probability exceeds `theta`.
    Threshold { theta: f64 },
    /// Stop at a fixed 1-based step.
    Deadline { step: usize },
}

impl StoppingPolicy {
    pub fn threshold(theta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::config("theta", format!("{theta} is outside [0, 1]")));
        }
        Ok(StoppingPolicy::Threshold { theta })
    }

    pub fn deadline(step: usize) -> Result<Self> {
        if step == 0 {
            return Err(Error::config("deadline", "steps are 1-based"));
        }
        Ok(StoppingPolicy::Deadline { step })
    }
}

fn top(p: &[f64]) -> f64 {
    p.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// 1-based stopping step. A threshold never reached forces an answer at
/// the final step; a deadline past the trace is clamped to it.
pub fn stop_time(trace: &InstanceTrace, policy: &StoppingPolicy) -> usize {
    let last = trace.steps();
    match *policy {
        StoppingPolicy::Threshold { theta } => trace
            .probs
            .iter()
            .position(|p| top(p) > theta)
            .map_or(last, |i| i + 1),
        StoppingPolicy::Deadline { step } => step.min(last),
    }
}

/// `n` evenly spaced thresholds from 0 to 1 inclusive.
pub fn theta_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub theta: f64,
    pub mean_stop_cycles: f64,
    pub mean_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpeedAccuracyCurve {
    pub points: Vec<CurvePoint>,
}

pub const CURVE_HEADER: &str = "theta,mean_stop_cycles,mean_accuracy";

impl SpeedAccuracyCurve {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CURVE_HEADER}\n");
        for p in &self.points {
            s.push_str(&format!(
                "{},{},{}\n",
                p.theta, p.mean_stop_cycles, p.mean_accuracy
            ));
        }
        s
    }
}

fn check_labels(traces: &[InstanceTrace], labels: &[usize]) -> Result<()> {
    if traces.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} traces but {} labels",
            traces.len(),
            labels.len()
        )));
    }
    if traces.is_empty() {
        return Err(Error::contract("no traces"));
    }
    Ok(())
}

/// Mean stopping cost and accuracy for each threshold. Reaching step `t`
/// costs `t * cycles_per_step` cycles.
pub fn speed_accuracy_curve(
    traces: &[InstanceTrace],
    labels: &[usize],
    thetas: &[f64],
    cycles_per_step: usize,
) -> Result<SpeedAccuracyCurve> {
    check_labels(traces, labels)?;
    let policies = thetas
        .iter()
        .map(|&th| StoppingPolicy::threshold(th))
        .collect::<Result<Vec<_>>>()?;
    let n = traces.len() as f64;
    let points = policies
        .par_iter()
        .zip(thetas)
        .map(|(policy, &theta)| {
            let (mut cycles, mut correct) = (0usize, 0usize);
            for (tr, &y) in traces.iter().zip(labels) {
                let t = stop_time(tr, policy);
                cycles += t * cycles_per_step;
                correct += usize::from(tr.predicted(t) == y);
            }
            CurvePoint {
                theta,
                mean_stop_cycles: cycles as f64 / n,
                mean_accuracy: correct as f64 / n,
            }
        })
        .collect();
    Ok(SpeedAccuracyCurve { points })
}

/// Mean accuracy when every instance answers at the same step.
pub fn deadline_accuracy(traces: &[InstanceTrace], labels: &[usize], step: usize) -> Result<f64> {
    check_labels(traces, labels)?;
    let policy = StoppingPolicy::deadline(step)?;
    let correct = traces
        .iter()
        .zip(labels)
        .filter(|(tr, &y)| tr.predicted(stop_time(tr, &policy)) == y)
        .count();
    Ok(correct as f64 / traces.len() as f64)
}

/// Earliest step from which a single class stays above `theta` through the
/// end of the trace; `None` if no class ends above it.
pub fn selection_latency(trace: &InstanceTrace, theta: f64) -> Option<usize> {
    let steps = trace.steps();
    (0..trace.classes())
        .filter_map(|c| {
            let above = trace
                .probs
                .iter()
                .rev()
                .take_while(|p| p[c] > theta)
                .count();
            (above > 0).then(|| steps - above + 1)
        })
        .min()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub instance_id: usize,
    pub latency: Option<usize>,
    /// Final-step prediction matches the label.
    pub correct: bool,
}

pub const LATENCY_HEADER: &str = "instance_id,latency,correct";

pub fn latency_rows(
    traces: &[InstanceTrace],
    labels: &[usize],
    theta: f64,
) -> Result<Vec<LatencyRow>> {
    check_labels(traces, labels)?;
    Ok(traces
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (tr, &y))| LatencyRow {
            instance_id: i,
            latency: selection_latency(tr, theta),
            correct: tr.predicted(tr.steps()) == y,
        })
        .collect())
}

/// Unreached instances have an empty latency field.
pub fn latency_csv(rows: &[LatencyRow]) -> String {
    let mut s = format!("{LATENCY_HEADER}\n");
    for r in rows {
        let lat = r.latency.map(|l| l.to_string()).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{}\n",
            r.instance_id,
            lat,
            u8::from(r.correct)
        ));
    }
    s
}
