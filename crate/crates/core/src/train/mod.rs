//! Training loop, run configuration, and data ingestion.
//!
//! Configuration keys (flat `key = value`, see [`crate::config`]):
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `dataset` | `synthetic` | `synthetic`, `idx`, or `cifar` |
//! | `data_path` | | IDX image file, or comma-separated CIFAR batch files |
//! | `label_path` | | IDX label file |
//! | `test_data_path`, `test_label_path` | | optional held-out test files |
//! | `classes` | 10 | class count |
//! | `coarse_map` | | comma-separated coarse class per fine class |
//! | `val_fraction` | 0.1 | class-balanced validation share |
//! | `data_seed` | `seed` | synthetic generation and split seed |
//! | `superclasses`, `side`, `channels`, `per_class`, `test_per_class`, `shared_blobs`, `class_blobs`, `blob_width`, `jitter`, `blend`, `pixel_noise`, `prototype_seed` | see [`SyntheticSpec`] | synthetic generator |
//! | `arch` | `mlp` | `mlp` or `conv` |
//! | `conv_kernel` | 3 | convolution size |
//! | `width` | 32 | residual stream width |
//! | `blocks` | 3 | residual blocks |
//! | `head` | `single` | `single` or `multi` |
//! | `T` | `blocks + 1` | rollout steps during training |
//! | `rollout` | `cascaded` | `cascaded` or `serial` |
//! | `kernel`, `alpha` | `osd`, 0.9 | delay kernel |
//! | `loss` | `td` | `td` or `ce` |
//! | `lambda` | 0 | TD(lambda) mixing |
//! | `epochs` | 10 | |
//! | `batch_size` | 64 | |
//! | `lr` | 0.1 | initial learning rate |
//! | `momentum` | 0.9 | Nesterov momentum |
//! | `weight_decay` | 0.005 | L2 on weights only |
//! | `lr_decay`, `lr_decay_every` | 0.2, 30 | step schedule |
//! | `crop`, `flip`, `cutout` | false | augmentation |
//! | `train_noise` | `none` | corruption applied to training images |
//! | `train_noise_prob` | 0.5 | chance each training image is corrupted |
//! | `noise_patch`, `noise_sigma`, ... | | corruption parameters, see [`NoiseSpec::from_kv`] |
//! | `scalar` | `f32` | `f32` or `f64` |
//! | `seed` | 0 | |

pub mod optim;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use optim::{lr_schedule, Adam, Sgd};

use crate::autodiff::Tape;
use crate::config::KvConfig;
use crate::data::{
    balanced_split, load_cifar, load_idx, Augment, Dataset, Standardizer, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{apply_noise, NoiseKind, NoiseSpec};
use crate::net::{
    trace_dataset, Arch, Checkpoint, Forward, HeadMode, InstanceTrace, Network, NetworkSpec,
    NormCtx, ParamKind, RolloutMode, RolloutPlan,
};
use crate::scalar::Scalar;
use crate::td::{sequence_loss, LossKind, TargetMode};
use crate::temporal::TemporalKernel;
use crate::tensor::Tensor;

/// Independent random stream `k` of a run seed.
pub fn rng_stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

const STREAM_SPLIT: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Idx {
        images: PathBuf,
        labels: PathBuf,
        test: Option<(PathBuf, PathBuf)>,
    },
    Cifar {
        train: Vec<PathBuf>,
        test: Vec<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub source: DataSource,
    pub classes: usize,
    pub coarse_map: Option<Vec<usize>>,
    pub val_fraction: f64,
    pub seed: u64,
}

/// Training, validation, and (optional) test sets with the standardizer
/// fitted on the training split.
#[derive(Clone, Debug)]
pub struct DataBundle {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Option<Dataset>,
    pub standardizer: Standardizer,
}

impl DatasetSpec {
    fn attach(&self, data: Dataset) -> Result<Dataset> {
        match &self.coarse_map {
            Some(map) => data.with_coarse_map(map.clone()),
            None => Ok(data),
        }
    }

    /// Training pool and optional test set, before splitting.
    pub fn load_raw(&self) -> Result<(Dataset, Option<Dataset>)> {
        let (pool, test) = match &self.source {
            DataSource::Synthetic(spec) => {
                let (pool, test) = spec.generate(self.seed)?;
                (pool, Some(test))
            }
            DataSource::Idx {
                images,
                labels,
                test,
            } => {
                let pool = load_idx(images, labels, Some(self.classes))?;
                let test = match test {
                    Some((i, l)) => Some(load_idx(i, l, Some(self.classes))?),
                    None => None,
                };
                (pool, test)
            }
            DataSource::Cifar { train, test } => {
                let pool = load_cifar(train, self.classes)?;
                let test = if test.is_empty() {
                    None
                } else {
                    Some(load_cifar(test, self.classes)?)
                };
                (pool, test)
            }
        };
        Ok((
            self.attach(pool)?,
            test.map(|t| self.attach(t)).transpose()?,
        ))
    }

    pub fn load(&self) -> Result<DataBundle> {
        let (pool, test) = self.load_raw()?;
        let mut rng = rng_stream(self.seed, STREAM_SPLIT);
        let (train_idx, val_idx) =
            balanced_split(&pool.labels, pool.classes, self.val_fraction, &mut rng)?;
        let train = pool.subset(&train_idx);
        let val = pool.subset(&val_idx);
        let standardizer = Standardizer::fit(&train);
        Ok(DataBundle {
            train,
            val,
            test,
            standardizer,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub data: DatasetSpec,
    pub arch: Arch,
    pub width: usize,
    pub blocks: usize,
    pub head: HeadMode,
    /// Rollout steps per training instance; also the number of per-step
    /// normalization slots.
    pub horizon: usize,
    pub rollout: RolloutMode,
    pub kernel: TemporalKernel,
    pub loss: LossKind,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub augment: Augment,
    /// Corruption drawn fresh for each training image, with probability
    /// `train_noise_prob`.
    pub train_noise: Option<NoiseKind>,
    pub train_noise_prob: f64,
    /// Explicit corruption parameters; unset ones follow the image shape.
    pub noise_params: KvConfig,
    pub scalar: ScalarKind,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarKind {
    F32,
    F64,
}

impl FromStr for ScalarKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "f32" => Ok(ScalarKind::F32),
            "f64" => Ok(ScalarKind::F64),
            other => Err(Error::config(
                "scalar",
                format!("unknown scalar `{other}` (expected f32 | f64)"),
            )),
        }
    }
}

impl fmt::Display for ScalarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalarKind::F32 => "f32",
            ScalarKind::F64 => "f64",
        })
    }
}

fn paths(list: &str) -> Vec<PathBuf> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(PathBuf::from)
        .collect()
}

fn kernel_name(k: &TemporalKernel) -> &'static str {
    match k {
        TemporalKernel::Identity => "identity",
        TemporalKernel::OneStepDelay => "osd",
        TemporalKernel::ExpSmoothing { .. } => "ews",
        TemporalKernel::Explicit { .. } => "explicit",
    }
}

/// Reads `kernel` and `alpha` under the given key names.
pub fn kernel_from(
    kv: &KvConfig,
    kernel_key: &str,
    alpha_key: &str,
    default: &str,
) -> Result<TemporalKernel> {
    let kind = kv.get_str(kernel_key).unwrap_or(default).to_string();
    let alpha = kv.get_or(alpha_key, 0.9)?;
    TemporalKernel::from_config(&kind, alpha).map_err(|e| match e {
        Error::Config { reason, .. } => Error::config(kernel_key, reason),
        other => other,
    })
}

pub fn parse_rollout(s: &str, key: &str) -> Result<RolloutMode> {
    match s.trim() {
        "cascaded" => Ok(RolloutMode::Cascaded),
        "serial" => Ok(RolloutMode::Serial),
        "serial_per_frame" => Ok(RolloutMode::SerialPerFrame),
        other => Err(Error::config(key, format!("unknown rollout `{other}`"))),
    }
}

impl DatasetSpec {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let seed: u64 = kv.get_or("seed", 0)?;
        let data_seed = kv.get_or("data_seed", seed)?;
        let classes = kv.get_or("classes", 10usize)?;
        let need = |key: &str| {
            kv.get_str(key)
                .map(PathBuf::from)
                .ok_or_else(|| Error::config(key, "required for this dataset"))
        };
        let source = match kv.get_str("dataset").unwrap_or("synthetic") {
            "synthetic" => {
                let d = SyntheticSpec::default();
                let spec = SyntheticSpec {
                    classes,
                    superclasses: kv.get_or("superclasses", d.superclasses)?,
                    side: kv.get_or("side", d.side)?,
                    channels: kv.get_or("channels", d.channels)?,
                    per_class: kv.get_or("per_class", d.per_class)?,
                    test_per_class: kv.get_or("test_per_class", d.test_per_class)?,
                    shared_blobs: kv.get_or("shared_blobs", d.shared_blobs)?,
                    class_blobs: kv.get_or("class_blobs", d.class_blobs)?,
                    blob_width: kv.get_or("blob_width", d.blob_width)?,
                    jitter: kv.get_or("jitter", d.jitter)?,
                    blend: kv.get_or("blend", d.blend)?,
                    noise: kv.get_or("pixel_noise", d.noise)?,
                    prototype_seed: kv.get_or("prototype_seed", d.prototype_seed)?,
                };
                spec.validate()?;
                DataSource::Synthetic(spec)
            }
            "idx" => DataSource::Idx {
                images: need("data_path")?,
                labels: need("label_path")?,
                test: match (kv.get_str("test_data_path"), kv.get_str("test_label_path")) {
                    (Some(i), Some(l)) => Some((PathBuf::from(i), PathBuf::from(l))),
                    (None, None) => None,
                    _ => {
                        return Err(Error::config(
                            "test_label_path",
                            "test images and labels go together",
                        ))
                    }
                },
            },
            "cifar" => DataSource::Cifar {
                train: paths(
                    kv.get_str("data_path")
                        .ok_or_else(|| Error::config("data_path", "required for cifar"))?,
                ),
                test: kv.get_str("test_data_path").map(paths).unwrap_or_default(),
            },
            other => {
                return Err(Error::config(
                    "dataset",
                    format!("unknown dataset `{other}` (expected synthetic | idx | cifar)"),
                ))
            }
        };
        let coarse_map = kv.get_list::<usize>("coarse_map")?;
        if let Some(map) = &coarse_map {
            if map.len() != classes {
                return Err(Error::config(
                    "coarse_map",
                    format!("needs {classes} entries, got {}", map.len()),
                ));
            }
        }
        let val_fraction = kv.get_or("val_fraction", 0.1)?;
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::config("val_fraction", "must lie in [0, 1)"));
        }
        Ok(DatasetSpec {
            source,
            classes,
            coarse_map,
            val_fraction,
            seed: data_seed,
        })
    }

    fn write_kv(&self, kv: &mut KvConfig) {
        kv.set("classes", self.classes);
        kv.set("val_fraction", self.val_fraction);
        kv.set("data_seed", self.seed);
        if let Some(map) = &self.coarse_map {
            kv.set("coarse_map", join(map));
        }
        let show = |p: &PathBuf| p.display().to_string();
        match &self.source {
            DataSource::Synthetic(s) => {
                kv.set("dataset", "synthetic");
                kv.set("superclasses", s.superclasses);
                kv.set("side", s.side);
                kv.set("channels", s.channels);
                kv.set("per_class", s.per_class);
                kv.set("test_per_class", s.test_per_class);
                kv.set("shared_blobs", s.shared_blobs);
                kv.set("class_blobs", s.class_blobs);
                kv.set("blob_width", s.blob_width);
                kv.set("jitter", s.jitter);
                kv.set("blend", s.blend);
                kv.set("pixel_noise", s.noise);
                kv.set("prototype_seed", s.prototype_seed);
            }
            DataSource::Idx {
                images,
                labels,
                test,
            } => {
                kv.set("dataset", "idx");
                kv.set("data_path", show(images));
                kv.set("label_path", show(labels));
                if let Some((i, l)) = test {
                    kv.set("test_data_path", show(i));
                    kv.set("test_label_path", show(l));
                }
            }
            DataSource::Cifar { train, test } => {
                kv.set("dataset", "cifar");
                kv.set(
                    "data_path",
                    train.iter().map(show).collect::<Vec<_>>().join(","),
                );
                if !test.is_empty() {
                    kv.set(
                        "test_data_path",
                        test.iter().map(show).collect::<Vec<_>>().join(","),
                    );
                }
            }
        }
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl TrainConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let data = DatasetSpec::from_kv(kv)?;
        let arch = match kv.get_str("arch").unwrap_or("mlp") {
            "mlp" => Arch::Mlp,
            "conv" => Arch::Conv {
                kernel: kv.get_or("conv_kernel", 3)?,
            },
            other => {
                return Err(Error::config(
                    "arch",
                    format!("unknown arch `{other}` (expected mlp | conv)"),
                ))
            }
        };
        let blocks = kv.get_or("blocks", 3usize)?;
        let cfg = TrainConfig {
            data,
            arch,
            width: kv.get_or("width", 32)?,
            blocks,
            head: kv.get_or("head", HeadMode::Single)?,
            horizon: kv.get_or("T", blocks + 1)?,
            rollout: parse_rollout(kv.get_str("rollout").unwrap_or("cascaded"), "rollout")?,
            kernel: kernel_from(kv, "kernel", "alpha", "osd")?,
            loss: kv.get_or("loss", LossKind::Td)?,
            lambda: kv.get_or("lambda", 0.0)?,
            epochs: kv.get_or("epochs", 10)?,
            batch_size: kv.get_or("batch_size", 64)?,
            lr: kv.get_or("lr", 0.1)?,
            momentum: kv.get_or("momentum", 0.9)?,
            weight_decay: kv.get_or("weight_decay", 0.005)?,
            lr_decay: kv.get_or("lr_decay", 0.2)?,
            lr_decay_every: kv.get_or("lr_decay_every", 30)?,
            augment: Augment {
                crop: kv.get_bool("crop", false)?,
                flip: kv.get_bool("flip", false)?,
                cutout: kv.get_bool("cutout", false)?,
            },
            train_noise: match kv.get_str("train_noise").unwrap_or("none") {
                "none" => None,
                other => Some(other.parse().map_err(|_| {
                    Error::config("train_noise", format!("unknown noise `{other}`"))
                })?),
            },
            train_noise_prob: kv.get_or("train_noise_prob", 0.5)?,
            noise_params: {
                let mut p = KvConfig::new();
                for key in NoiseSpec::KEYS {
                    if let Some(v) = kv.get_str(key) {
                        p.set(key, v);
                    }
                }
                p
            },
            scalar: kv.get_or("scalar", ScalarKind::F32)?,
            seed: kv.get_or("seed", 0)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec().validate()?;
        self.kernel.validate()?;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("lambda", "must lie in [0, 1]"));
        }
        if self.batch_size < 2 {
            return Err(Error::config(
                "batch_size",
                "batch normalization needs at least two instances",
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.train_noise_prob) {
            return Err(Error::config("train_noise_prob", "must lie in [0, 1]"));
        }
        if let Some(kind) = self.train_noise {
            self.noise_spec(kind, self.spec().input)?;
        }
        if self.weight_decay < 0.0 || self.lr_decay <= 0.0 {
            return Err(Error::config(
                "weight_decay",
                "decay terms must be non-negative",
            ));
        }
        match self.rollout {
            RolloutMode::Serial if self.horizon < self.blocks + 1 => Err(Error::config(
                "T",
                format!(
                    "serial training needs T >= blocks + 1 = {}",
                    self.blocks + 1
                ),
            )),
            RolloutMode::SerialPerFrame => Err(Error::config(
                "rollout",
                "training supports cascaded | serial",
            )),
            _ => Ok(()),
        }
    }

    /// Every key with its resolved value.
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        self.data.write_kv(&mut kv);
        match self.arch {
            Arch::Mlp => kv.set("arch", "mlp"),
            Arch::Conv { kernel } => {
                kv.set("arch", "conv");
                kv.set("conv_kernel", kernel);
            }
        }
        kv.set("width", self.width);
        kv.set("blocks", self.blocks);
        kv.set(
            "head",
            match self.head {
                HeadMode::Single => "single",
                HeadMode::Multi => "multi",
            },
        );
        kv.set("T", self.horizon);
        kv.set("rollout", self.rollout);
        kv.set("kernel", kernel_name(&self.kernel));
        if let TemporalKernel::ExpSmoothing { alpha } = self.kernel {
            kv.set("alpha", alpha);
        }
        kv.set("loss", self.loss);
        kv.set("lambda", self.lambda);
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("lr", self.lr);
        kv.set("momentum", self.momentum);
        kv.set("weight_decay", self.weight_decay);
        kv.set("lr_decay", self.lr_decay);
        kv.set("lr_decay_every", self.lr_decay_every);
        kv.set("crop", self.augment.crop);
        kv.set("flip", self.augment.flip);
        kv.set("cutout", self.augment.cutout);
        match self.train_noise {
            Some(kind) => {
                kv.set("train_noise", kind);
                kv.set("train_noise_prob", self.train_noise_prob);
            }
            None => kv.set("train_noise", "none"),
        }
        for (k, v) in self.noise_params.entries() {
            kv.set(k, v);
        }
        kv.set("scalar", self.scalar);
        kv.set("seed", self.seed);
        kv
    }

    pub fn spec(&self) -> NetworkSpec {
        let shape = match &self.data.source {
            DataSource::Synthetic(s) => s.shape(),
            // Loaded datasets report their own shape; this is checked in `train`.
            _ => crate::net::InputShape {
                channels: 1,
                height: 1,
                width: 1,
            },
        };
        self.spec_for(shape)
    }

    pub fn spec_for(&self, input: crate::net::InputShape) -> NetworkSpec {
        NetworkSpec {
            input,
            arch: self.arch,
            width: self.width,
            blocks: self.blocks,
            classes: self.data.classes,
            head: self.head,
            horizon: self.horizon,
        }
    }

    pub fn noise_spec(&self, kind: NoiseKind, shape: crate::net::InputShape) -> Result<NoiseSpec> {
        NoiseSpec::from_kv(kind, shape, &self.noise_params)
    }

    /// Rollout used for training-time metrics.
    pub fn plan(&self) -> RolloutPlan {
        match self.rollout {
            RolloutMode::Serial => RolloutPlan::serial(self.horizon),
            _ => RolloutPlan::cascaded(self.horizon, self.kernel.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

/// One line of the metrics log. Epochs count from 1.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub t: usize,
    pub split: Split,
    pub accuracy: f64,
    pub loss: f64,
}

pub const METRICS_HEADER: &str = "epoch,t,split,accuracy,loss";

pub fn write_metrics(rows: &[MetricRow], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.t, r.split, r.accuracy, r.loss
        )?;
    }
    Ok(())
}

/// Per-step accuracy and mean cross-entropy against the labels.
pub fn step_metrics(traces: &[InstanceTrace], labels: &[usize]) -> Vec<(f64, f64)> {
    let steps = traces.first().map_or(0, InstanceTrace::steps);
    let n = traces.len().max(1) as f64;
    (1..=steps)
        .map(|t| {
            let mut correct = 0usize;
            let mut loss = 0.0;
            for (tr, &y) in traces.iter().zip(labels) {
                correct += usize::from(tr.predicted(t) == y);
                loss -= tr.probs[t - 1][y].max(f64::MIN_POSITIVE).ln();
            }
            (correct as f64 / n, loss / n)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    pub checkpoint: Checkpoint<S>,
    pub metrics: Vec<MetricRow>,
}

impl<S: Scalar> TrainOutcome<S> {
    pub fn metrics_csv(&self) -> String {
        let mut buf = Vec::new();
        write_metrics(&self.metrics, &mut buf).expect("write to memory");
        String::from_utf8(buf).expect("ascii")
    }

    pub fn save(&self, checkpoint: &Path, metrics: &Path) -> Result<()> {
        self.checkpoint.save(checkpoint)?;
        std::fs::write(metrics, self.metrics_csv())?;
        Ok(())
    }
}

/// One optimizer step on a batch. Returns the loss value.
fn train_batch<S: Scalar>(
    net: &mut Network<S>,
    opt: &mut Sgd<S>,
    cfg: &TrainConfig,
    x: Tensor<S>,
    labels: &[usize],
    lr: f64,
) -> Result<f64> {
    let Network { spec, params, norm } = net;
    let tape = Tape::new();
    let backend = &tape;
    let vars: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
    let fwd = Forward::new(&backend, spec, &vars)?;
    let x = tape.constant(x);
    let mut ctx = NormCtx::Train(norm);
    let steps = match cfg.rollout {
        RolloutMode::Serial => fwd.serial(&mut ctx, &x, cfg.horizon)?,
        _ => fwd.cascaded(&mut ctx, &vec![x; cfg.horizon], &cfg.kernel)?,
    };
    let logits: Vec<_> = steps.into_iter().map(|s| s.logits).collect();
    // Diverged outputs would make the targets ill-formed; report the loss instead.
    if logits
        .iter()
        .any(|l| l.value().data().iter().any(|v| !v.is_finite()))
    {
        return Ok(f64::NAN);
    }
    let loss = sequence_loss(
        &tape,
        &logits,
        labels,
        cfg.loss,
        cfg.lambda,
        TargetMode::StopGradient,
    )?;
    let value = loss.value().item().map_or(f64::NAN, Scalar::as_f64);
    if !value.is_finite() {
        return Ok(value);
    }
    let grads = tape.grad(loss, &vars)?;
    opt.step(params, &grads, lr)?;
    Ok(value)
}

/// Runs a full training job on already-loaded data.
pub fn train_on<S: Scalar>(cfg: &TrainConfig, data: &DataBundle) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    let spec = cfg.spec_for(data.train.shape);
    if data.train.classes != spec.classes {
        return Err(Error::config(
            "classes",
            format!(
                "dataset has {} classes, config says {}",
                data.train.classes, spec.classes
            ),
        ));
    }
    let mut net = Network::<S>::init(spec, &mut rng_stream(cfg.seed, STREAM_INIT))?;
    let decay: Vec<bool> = net
        .layout()
        .kinds()
        .iter()
        .map(|k| *k == ParamKind::Weight)
        .collect();
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay, true, decay);
    let mut rng = rng_stream(cfg.seed, STREAM_SHUFFLE);
    let shape = data.train.shape;
    let plan = cfg.plan();
    let noise = cfg
        .train_noise
        .map(|k| cfg.noise_spec(k, shape))
        .transpose()?;
    let mut metrics = Vec::new();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg.lr, cfg.lr_decay, cfg.lr_decay_every);
        order.shuffle(&mut rng);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            // A single leftover instance has no batch variance.
            if idx.len() < 2 {
                continue;
            }
            let mut pixels = Vec::with_capacity(idx.len() * shape.len());
            for &i in idx {
                let mut img =
                    cfg.augment
                        .apply(data.train.image(i), shape, &data.standardizer, &mut rng);
                if let Some(spec) = &noise {
                    if rng.random_bool(cfg.train_noise_prob) {
                        img = apply_noise(&img, shape, spec, &mut rng)?;
                    }
                }
                pixels.extend(img.into_iter().map(S::from_f64_lossy));
            }
            let x = Tensor::new(vec![idx.len(), shape.len()], pixels)?;
            let labels: Vec<usize> = idx.iter().map(|&i| data.train.labels[i]).collect();
            let value = train_batch(&mut net, &mut opt, cfg, x, &labels, lr)?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: b + 1,
                    value,
                });
            }
        }
        for (split, set) in [(Split::Train, &data.train), (Split::Val, &data.val)] {
            if set.is_empty() {
                continue;
            }
            let traces = trace_dataset(&net, set, Some(&data.standardizer), &plan)?;
            for (t, (accuracy, loss)) in step_metrics(&traces, &set.labels).into_iter().enumerate()
            {
                metrics.push(MetricRow {
                    epoch: epoch + 1,
                    t: t + 1,
                    split,
                    accuracy,
                    loss,
                });
            }
        }
    }
    let snapshot: BTreeMap<String, String> = cfg.to_kv().entries().clone();
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(net, Some(data.standardizer.clone()), snapshot),
        metrics,
    })
}

/// Loads the configured data and trains.
pub fn train<S: Scalar>(cfg: &TrainConfig) -> Result<TrainOutcome<S>> {
    let data = cfg.data.load()?;
    train_on(cfg, &data)
}
