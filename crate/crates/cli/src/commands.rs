use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use cascade_core::config::KvConfig;
use cascade_core::data::{Dataset, Standardizer};
use cascade_core::eval::{
    centrality, compliance_csv, deadline_accuracy, latency_csv, latency_rows, noise_csv,
    persistent_accuracy, spearman_rho, speed_accuracy_curve, taxonomic_compliance, theta_grid,
    transient_dip, NoiseKind, NoiseRow, NoiseRun, NoiseSpec,
};
use cascade_core::metacog::{
    metacog_report, metrics_json, synthetic_ood_sets, FeatureMatrix, MetaCogConfig, OodSplit,
    Representation, Scope,
};
use cascade_core::net::{settling_step, trace_dataset, InstanceTrace, RolloutMode, RolloutPlan};
use cascade_core::train::{
    kernel_from, parse_rollout, step_metrics, train, DataBundle, DataSource, ScalarKind,
    TrainConfig,
};
use cascade_core::{Checkpoint, Error, Network, Scalar, TemporalKernel};

use crate::output::Outputs;

pub fn cmd_train(kv: &KvConfig, out: &mut Outputs) -> Result<KvConfig> {
    let cfg = TrainConfig::from_kv(kv)?;
    let (checkpoint, metrics) = match cfg.scalar {
        ScalarKind::F32 => {
            let o = train::<f32>(&cfg)?;
            (o.checkpoint.to_json()?, o.metrics_csv())
        }
        ScalarKind::F64 => {
            let o = train::<f64>(&cfg)?;
            (o.checkpoint.to_json()?, o.metrics_csv())
        }
    };
    out.write("checkpoint.json", checkpoint)?;
    out.write("metrics.csv", metrics)?;
    let resolved = cfg.to_kv();
    out.write("config.txt", resolved.to_text())?;
    Ok(resolved)
}

#[derive(Clone, Copy, Debug)]
pub enum Analysis {
    Eval,
    Noise,
    Metacog,
    Rollout,
}

#[derive(Deserialize)]
struct ScalarTag {
    scalar: String,
}

/// Runs an analysis on the checkpoint named by the `checkpoint` key.
pub fn cmd_analysis(which: Analysis, kv: &KvConfig, out: &mut Outputs) -> Result<KvConfig> {
    let path = PathBuf::from(kv.get_str("checkpoint").ok_or_else(|| {
        Error::config(
            "checkpoint",
            "path to a checkpoint written by `train` is required",
        )
    })?);
    let text = fs::read_to_string(&path)
        .with_context(|| format!("cannot read checkpoint {}", path.display()))?;
    let tag: ScalarTag = serde_json::from_str(&text)
        .with_context(|| format!("{} is not a checkpoint", path.display()))?;
    match tag.scalar.as_str() {
        "f32" => run(
            which,
            Session::open(Checkpoint::<f32>::from_json(&text)?, kv)?,
            out,
        ),
        "f64" => run(
            which,
            Session::open(Checkpoint::<f64>::from_json(&text)?, kv)?,
            out,
        ),
        other => bail!("checkpoint holds unsupported scalar `{other}`"),
    }
}

fn run<S: Scalar>(which: Analysis, s: Session<S>, out: &mut Outputs) -> Result<KvConfig> {
    match which {
        Analysis::Eval => eval(s, out),
        Analysis::Noise => noise(s, out),
        Analysis::Metacog => metacog(s, out),
        Analysis::Rollout => rollout(s, out),
    }
}

/// A trained network with its data, and the checkpoint's configuration
/// overlaid by the caller's keys. Keys read by the analysis are written
/// back with their resolved values.
struct Session<S> {
    net: Network<S>,
    standardizer: Option<Standardizer>,
    source: DataSource,
    data: DataBundle,
    kv: KvConfig,
}

impl<S: Scalar> Session<S> {
    fn open(ckpt: Checkpoint<S>, user: &KvConfig) -> Result<Self> {
        let mut kv = KvConfig::new();
        for (k, v) in ckpt.config.iter().chain(user.entries()) {
            kv.set(k, v);
        }
        let cfg = TrainConfig::from_kv(&kv)?;
        let data = cfg.data.load()?;
        let spec = &ckpt.network.spec;
        if data.train.shape != spec.input || data.train.classes != spec.classes {
            bail!("dataset does not match the checkpoint's input shape or class count");
        }
        Ok(Session {
            net: ckpt.network,
            standardizer: ckpt.standardizer,
            source: cfg.data.source,
            data,
            kv,
        })
    }

    fn split(&mut self, key: &str) -> Result<Dataset> {
        let default = if self.data.test.is_some() {
            "test"
        } else {
            "val"
        };
        let name = self.kv.get_str(key).unwrap_or(default).to_string();
        let set = match name.as_str() {
            "train" => self.data.train.clone(),
            "val" => self.data.val.clone(),
            "test" => self
                .data
                .test
                .clone()
                .ok_or_else(|| Error::config(key, "no test set is configured"))?,
            other => {
                return Err(Error::config(
                    key,
                    format!("unknown split `{other}` (expected train | val | test)"),
                )
                .into())
            }
        };
        self.kv.set(key, name);
        Ok(set)
    }

    /// Kernel from `eval_kernel` / `eval_alpha`, defaulting to the training kernel.
    fn eval_kernel(&mut self) -> Result<TemporalKernel> {
        for (eval_key, train_key) in [("eval_kernel", "kernel"), ("eval_alpha", "alpha")] {
            if !self.kv.contains(eval_key) {
                if let Some(v) = self.kv.get_str(train_key).map(str::to_string) {
                    self.kv.set(eval_key, v);
                }
            }
        }
        let kernel = kernel_from(&self.kv, "eval_kernel", "eval_alpha", "osd")?;
        self.kv.set("eval_kernel", kernel_label(&kernel));
        Ok(kernel)
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        let v = self.kv.get_or(key, default)?;
        self.kv.set(key, v);
        Ok(v)
    }

    /// Static-input rollout plan from `eval_rollout`, `eval_steps`, and the eval kernel.
    fn eval_plan(&mut self) -> Result<RolloutPlan> {
        let kernel = self.eval_kernel()?;
        let steps = self.usize_or("eval_steps", self.net.spec.horizon)?;
        let mode = parse_rollout(
            self.kv.get_str("eval_rollout").unwrap_or("cascaded"),
            "eval_rollout",
        )?;
        self.kv.set("eval_rollout", mode);
        match mode {
            RolloutMode::Cascaded => Ok(RolloutPlan::cascaded(steps, kernel)),
            RolloutMode::Serial => Ok(RolloutPlan::serial(steps)),
            RolloutMode::SerialPerFrame => {
                Err(Error::config("eval_rollout", "static inputs support cascaded | serial").into())
            }
        }
    }

    fn traces(&self, set: &Dataset, plan: &RolloutPlan) -> Result<Vec<InstanceTrace>> {
        Ok(trace_dataset(
            &self.net,
            set,
            self.standardizer.as_ref(),
            plan,
        )?)
    }
}

fn kernel_label(k: &TemporalKernel) -> &'static str {
    match k {
        TemporalKernel::Identity => "identity",
        TemporalKernel::OneStepDelay => "osd",
        TemporalKernel::ExpSmoothing { .. } => "ews",
        TemporalKernel::Explicit { .. } => "explicit",
    }
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct Knowledge {
    latency_theta: f64,
    instances: usize,
    unreached_fraction: f64,
    rho_latency_centrality: Option<f64>,
    rho_latency_atypicality: Option<f64>,
    rho_centrality_atypicality: Option<f64>,
}

fn eval<S: Scalar>(mut s: Session<S>, out: &mut Outputs) -> Result<KvConfig> {
    let set = s.split("eval_split")?;
    let plan = s.eval_plan()?;
    let thetas = match s.kv.get_list::<f64>("thetas")? {
        Some(t) => t,
        None => theta_grid(s.usize_or("theta_points", 50)?),
    };
    let latency_theta: f64 = s.kv.get_or("latency_theta", 0.83)?;
    s.kv.set("latency_theta", latency_theta);
    let traces = s.traces(&set, &plan)?;
    let labels = &set.labels;

    let curve = speed_accuracy_curve(&traces, labels, &thetas, plan.cycles_at(&s.net, 1))?;
    out.write("curve.csv", curve.to_csv())?;
    let rows = latency_rows(&traces, labels, latency_theta)?;
    out.write("latency.csv", latency_csv(&rows))?;

    let steps = plan.steps;
    let mut deadline = String::from("t,accuracy\n");
    for t in 1..=steps {
        deadline.push_str(&format!("{t},{}\n", deadline_accuracy(&traces, labels, t)?));
    }
    out.write("deadline.csv", deadline)?;

    match &set.coarse_map {
        Some(map) => {
            let values = (1..=steps)
                .map(|t| taxonomic_compliance(&traces, labels, map, t))
                .collect::<cascade_core::Result<Vec<_>>>()?;
            out.write("compliance.csv", compliance_csv(&values))?;
        }
        None => eprintln!("note: dataset has no coarse classes; compliance.csv not written"),
    }

    let spec = &s.net.spec;
    let (w, _) = s.net.layout().head(spec.head_for_step(steps));
    let weights = &s.net.params[w];
    let classes = spec.classes;
    let cent = traces
        .iter()
        .zip(labels)
        .map(|(tr, &y)| {
            let row: Vec<f64> = weights
                .data()
                .iter()
                .skip(y)
                .step_by(classes)
                .map(|v| v.as_f64())
                .collect();
            centrality(&tr.embedding, &row)
        })
        .collect::<cascade_core::Result<Vec<f64>>>()?;
    let atyp = set.atypicality.as_deref();
    let mut proto = String::from("instance_id,latency,centrality,atypicality\n");
    for (i, r) in rows.iter().enumerate() {
        proto.push_str(&format!(
            "{i},{},{},{}\n",
            opt_field(r.latency.map(|l| l as f64)),
            cent[i],
            opt_field(atyp.map(|a| a[i]))
        ));
    }
    out.write("prototypicality.csv", proto)?;

    let reached: Vec<usize> = (0..rows.len())
        .filter(|&i| rows[i].latency.is_some())
        .collect();
    let pick = |v: &[f64]| -> Vec<f64> { reached.iter().map(|&i| v[i]).collect() };
    let lat: Vec<f64> = reached
        .iter()
        .map(|&i| rows[i].latency.unwrap_or(0) as f64)
        .collect();
    let rho = |a: &[f64], b: &[f64]| -> Result<Option<f64>> {
        Ok(if a.len() < 2 {
            None
        } else {
            spearman_rho(a, b)?
        })
    };
    let knowledge = Knowledge {
        latency_theta,
        instances: rows.len(),
        unreached_fraction: 1.0 - reached.len() as f64 / rows.len() as f64,
        rho_latency_centrality: rho(&lat, &pick(&cent))?,
        rho_latency_atypicality: atyp.map(|a| rho(&lat, &pick(a))).transpose()?.flatten(),
        rho_centrality_atypicality: atyp.map(|a| rho(&cent, a)).transpose()?.flatten(),
    };
    out.write(
        "knowledge.json",
        serde_json::to_string_pretty(&knowledge)? + "\n",
    )?;
    Ok(s.kv)
}

#[derive(Serialize)]
struct TraceLine<'a> {
    instance_id: usize,
    label: usize,
    #[serde(flatten)]
    trace: &'a InstanceTrace,
}

fn rollout<S: Scalar>(mut s: Session<S>, out: &mut Outputs) -> Result<KvConfig> {
    let set = s.split("eval_split")?;
    let plan = s.eval_plan()?;
    let traces = s.traces(&set, &plan)?;
    let mut lines = String::new();
    for (i, (trace, &label)) in traces.iter().zip(&set.labels).enumerate() {
        lines.push_str(&serde_json::to_string(&TraceLine {
            instance_id: i,
            label,
            trace,
        })?);
        lines.push('\n');
    }
    out.write("traces.jsonl", lines)?;
    let mut steps = String::from("t,cycles,accuracy,loss\n");
    for (t, (acc, loss)) in step_metrics(&traces, &set.labels).into_iter().enumerate() {
        steps.push_str(&format!(
            "{},{},{acc},{loss}\n",
            t + 1,
            plan.cycles_at(&s.net, t + 1)
        ));
    }
    out.write("steps.csv", steps)?;
    Ok(s.kv)
}

fn noise<S: Scalar>(mut s: Session<S>, out: &mut Outputs) -> Result<KvConfig> {
    let kinds =
        s.kv.get_str("noise")
            .unwrap_or("")
            .split(',')
            .map(str::trim)
            .filter(|k| !k.is_empty())
            .map(str::parse::<NoiseKind>)
            .collect::<cascade_core::Result<Vec<_>>>()?;
    if kinds.is_empty() {
        return Err(Error::config(
            "noise",
            "name one or more of focus | perlin | occlusion | resolution | translation | rotation",
        )
        .into());
    }
    let set = s.split("noise_split")?;
    let kernel = s.eval_kernel()?;
    let trials = s.usize_or("noise_trials", 5)?;
    let steps = s.usize_or("noise_steps", s.net.spec.horizon)?;
    let lengths: Vec<usize> =
        s.kv.get_list("noise_lengths")?
            .unwrap_or_else(|| (1..=6).collect());
    let modes =
        s.kv.get_str("noise_rollouts")
            .unwrap_or("cascaded,serial_per_frame")
            .split(',')
            .map(|m| parse_rollout(m, "noise_rollouts"))
            .collect::<cascade_core::Result<Vec<_>>>()?;
    if modes.contains(&RolloutMode::Serial) {
        return Err(Error::config(
            "noise_rollouts",
            "noisy sequences support cascaded | serial_per_frame",
        )
        .into());
    }
    let seed: u64 = s.kv.get_or("seed", 0)?;
    let mut rows = Vec::new();
    for &kind in &kinds {
        let spec = NoiseSpec::from_kv(kind, set.shape, &s.kv)?;
        for &mode in &modes {
            let run = NoiseRun {
                mode,
                kernel: kernel.clone(),
                trials,
                seed,
            };
            let std = s.standardizer.as_ref();
            rows.push(NoiseRow {
                noise: kind,
                rollout: mode,
                persistent_accuracy: persistent_accuracy(&s.net, &set, std, &spec, steps, &run)?,
                transient_dip: transient_dip(&s.net, &set, std, &spec, &lengths, &run)?,
            });
        }
    }
    out.write("noise.csv", noise_csv(&rows))?;
    let join = |v: Vec<String>| v.join(",");
    s.kv.set(
        "noise",
        join(kinds.iter().map(ToString::to_string).collect()),
    );
    s.kv.set(
        "noise_lengths",
        join(lengths.iter().map(ToString::to_string).collect()),
    );
    s.kv.set(
        "noise_rollouts",
        join(modes.iter().map(ToString::to_string).collect()),
    );
    s.kv.set("seed", seed);
    Ok(s.kv)
}

fn metacog<S: Scalar>(mut s: Session<S>, out: &mut Outputs) -> Result<KvConfig> {
    let DataSource::Synthetic(spec) = s.source.clone() else {
        return Err(Error::config(
            "dataset",
            "metacog draws its out-of-distribution sets from the synthetic family",
        )
        .into());
    };
    let in_test = s
        .data
        .test
        .clone()
        .ok_or_else(|| Error::config("test_per_class", "metacog needs a test set"))?;
    let kernel = kernel_from(&s.kv, "metacog_kernel", "metacog_alpha", "ews")?;
    s.kv.set("metacog_kernel", kernel_label(&kernel));
    let std = s.standardizer.clone();
    let steps = match s.kv.get::<usize>("metacog_steps")? {
        Some(n) => n,
        None => {
            let tol: f64 = s.kv.get_or("metacog_settle_tol", 1e-3)?;
            let max = s.usize_or("metacog_max_steps", 400)?;
            s.kv.set("metacog_settle_tol", tol);
            settling_step(&s.net, &s.data.val, std.as_ref(), &kernel, tol, max)?.ok_or_else(
                || {
                    Error::config(
                        "metacog_steps",
                        "the rollout did not settle; set metacog_steps",
                    )
                },
            )?
        }
    };
    s.kv.set("metacog_steps", steps);
    let data_seed: u64 = s.kv.get_or("data_seed", 0)?;
    let ood_seed = s.kv.get_or("ood_seed", data_seed.wrapping_add(1))?;
    s.kv.set("ood_seed", ood_seed);
    let per_class = (s.data.val.len() / spec.classes).max(1);
    let (ood_train, ood_test) =
        synthetic_ood_sets(&spec, per_class, spec.test_per_class, ood_seed)?;

    let kinds: Vec<Representation> =
        s.kv.get_list("metacog_kinds")?
            .unwrap_or_else(|| Representation::ALL.to_vec());
    let scopes: Vec<Scope> =
        s.kv.get_list("metacog_scopes")?
            .unwrap_or_else(|| Scope::ALL.to_vec());
    let cfg = MetaCogConfig::from_kv(&s.kv)?;

    let plan = RolloutPlan::cascaded(steps, kernel);
    let val = s.data.val.clone();
    let sets = [
        ("in_train", &val),
        ("ood_train", &ood_train),
        ("in_test", &in_test),
        ("ood_test", &ood_test),
    ];
    let traces = sets
        .iter()
        .map(|(_, d)| s.traces(d, &plan))
        .collect::<Result<Vec<_>>>()?;
    for &kind in &kinds {
        for &scope in &scopes {
            for ((name, _), tr) in sets.iter().zip(&traces) {
                let m = FeatureMatrix::from_traces(tr, kind, scope)?;
                out.write(&format!("features/{name}_{kind}_{scope}.csv"), m.to_csv())?;
            }
        }
    }
    let split = OodSplit {
        in_train: &traces[0],
        ood_train: &traces[1],
        in_test: &traces[2],
        ood_test: &traces[3],
    };
    let report = metacog_report::<S>(split, &kinds, &scopes, &cfg)?;
    out.write("metrics.json", metrics_json(&report)? + "\n")?;
    let join = |v: Vec<String>| v.join(",");
    s.kv.set(
        "metacog_kinds",
        join(kinds.iter().map(ToString::to_string).collect()),
    );
    s.kv.set(
        "metacog_scopes",
        join(scopes.iter().map(ToString::to_string).collect()),
    );
    Ok(s.kv)
}
