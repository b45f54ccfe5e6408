//! Minimal reverse-mode differentiation over dense tensors.

mod backend;
pub mod kernels;
mod tape;

pub use backend::{Backend, Eager};
pub use kernels::ConvGeom;
pub use tape::{sigmoid, Reduction, Tape, Var};
