//! JSON checkpoint container.
//!
//! ```text
//! {
//!   "format": "cascade-checkpoint",
//!   "version": 1,
//!   "scalar": "f32" | "f64",
//!   "network": { "spec": {...}, "params": [{"shape": [...], "data": [...]}, ...],
//!                "norm": {"horizon", "momentum", "eps", "layers": [[{"mean", "var"}, ...], ...]} },
//!   "standardizer": null | {"mean": [...], "std": [...]},
//!   "config": {"key": "value", ...}
//! }
//! ```
//!
//! Parameters appear in the order given by [`Layout`](super::Layout).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Network;
use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "cascade-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Checkpoint<S> {
    pub format: String,
    pub version: u32,
    pub scalar: String,
    pub network: Network<S>,
    /// Per-channel input normalization fitted on the training split.
    pub standardizer: Option<Standardizer>,
    /// Snapshot of the configuration that produced the network.
    pub config: BTreeMap<String, String>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new(
        network: Network<S>,
        standardizer: Option<Standardizer>,
        config: BTreeMap<String, String>,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            scalar: S::NAME.into(),
            network,
            standardizer,
            config,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let header: Header = serde_json::from_str(text)?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unrecognized format `{}`",
                header.format
            )));
        }
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                header.version
            )));
        }
        if header.scalar != S::NAME {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} values, requested {}",
                header.scalar,
                S::NAME
            )));
        }
        let ckpt: Checkpoint<S> = serde_json::from_str(text)?;
        ckpt.network.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
    scalar: String,
}
