//! Cascaded residual networks trained with TD(lambda) targets for anytime
//! prediction, plus the analyses used to evaluate them.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod metacog;
pub mod net;
pub mod scalar;
pub mod td;
pub mod temporal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use net::{Checkpoint, Network, NetworkSpec, RolloutTrace};
pub use scalar::Scalar;
pub use temporal::TemporalKernel;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Network32 = Network<f32>;
pub type Network64 = Network<f64>;
pub type Checkpoint32 = Checkpoint<f32>;
pub type Checkpoint64 = Checkpoint<f64>;
pub type RolloutTrace32 = RolloutTrace<f32>;
pub type RolloutTrace64 = RolloutTrace<f64>;
