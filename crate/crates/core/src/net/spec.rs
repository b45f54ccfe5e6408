use serde::{Deserialize, Serialize};

use crate::autodiff::ConvGeom;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Layer family used by the stem and every residual transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arch {
    /// Dense layers over the flattened input.
    Mlp,
    /// Same-padded `kernel x kernel` convolutions; the head reads the
    /// per-channel spatial mean.
    Conv { kernel: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// One readout shared by every step.
    Single,
    /// A separate readout per step.
    Multi,
}

impl std::str::FromStr for HeadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "single" => Ok(HeadMode::Single),
            "multi" => Ok(HeadMode::Multi),
            other => Err(Error::config(
                "head",
                format!("unknown head mode `{other}`"),
            )),
        }
    }
}

/// Architecture of a uniform-width residual network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: InputShape,
    pub arch: Arch,
    /// Hidden units (MLP) or channels (conv) of the residual stream.
    pub width: usize,
    pub blocks: usize,
    pub classes: usize,
    pub head: HeadMode,
    /// Number of per-step normalization slots, and of heads in multi-head
    /// mode. Steps past the horizon reuse the last slot.
    pub horizon: usize,
}

impl NetworkSpec {
    pub fn mlp(
        input_len: usize,
        width: usize,
        blocks: usize,
        classes: usize,
        horizon: usize,
    ) -> Self {
        NetworkSpec {
            input: InputShape {
                channels: 1,
                height: 1,
                width: input_len,
            },
            arch: Arch::Mlp,
            width,
            blocks,
            classes,
            head: HeadMode::Single,
            horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks < 1 {
            return Err(Error::config("blocks", "need at least one residual block"));
        }
        if self.classes < 2 {
            return Err(Error::config("classes", "need at least two classes"));
        }
        if self.width == 0 || self.input.is_empty() {
            return Err(Error::config(
                "width",
                "width and input size must be positive",
            ));
        }
        if self.horizon == 0 {
            return Err(Error::config("T", "horizon must be at least 1"));
        }
        if let Arch::Conv { kernel } = self.arch {
            if kernel % 2 == 0 {
                return Err(Error::config("conv_kernel", "kernel size must be odd"));
            }
        }
        Ok(())
    }

    /// Delay components on the path to the readout: the stem plus one per block.
    pub fn delays(&self) -> usize {
        self.blocks + 1
    }

    pub fn heads(&self) -> usize {
        match self.head {
            HeadMode::Single => 1,
            HeadMode::Multi => self.horizon,
        }
    }

    /// Head used at 1-based step `t`.
    pub fn head_for_step(&self, t: usize) -> usize {
        match self.head {
            HeadMode::Single => 0,
            HeadMode::Multi => t.clamp(1, self.horizon) - 1,
        }
    }

    /// Columns of the residual stream.
    pub fn stream_cols(&self) -> usize {
        match self.arch {
            Arch::Mlp => self.width,
            Arch::Conv { .. } => self.width * self.input.height * self.input.width,
        }
    }

    pub(crate) fn stem_geom(&self, kernel: usize) -> ConvGeom {
        ConvGeom {
            in_channels: self.input.channels,
            out_channels: self.width,
            height: self.input.height,
            width: self.input.width,
            kernel,
        }
    }

    pub(crate) fn block_geom(&self, kernel: usize) -> ConvGeom {
        ConvGeom {
            in_channels: self.width,
            ..self.stem_geom(kernel)
        }
    }

    /// Normalized layers: the stem and two per block.
    pub fn norm_layers(&self) -> usize {
        1 + 2 * self.blocks
    }
}
