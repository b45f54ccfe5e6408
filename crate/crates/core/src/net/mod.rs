//! Cascaded residual networks.

mod batch;
mod checkpoint;
mod model;
mod norm;
mod rollout;
mod spec;
mod trace;

pub use batch::{settling_step, trace_dataset, trace_sequences, RolloutPlan, CHUNK};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use model::{BlockParams, Layout, Network, ParamKind};
pub use norm::{normalize, ChannelStats, NormCtx, NormStats};
pub use rollout::{Forward, StepOutput};
pub use spec::{Arch, HeadMode, InputShape, NetworkSpec};
pub use trace::{InstanceTrace, RolloutMode, RolloutTrace};
