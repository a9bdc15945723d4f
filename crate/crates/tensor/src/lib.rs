//! Numeric substrate for the federated speed-prediction stack.
//!
//! [`Tensor`] is a plain value type (shape + row-major `f64` data + optional
//! gradient). [`Tape`] records operations over tensor values and replays them
//! in reverse to produce gradients. [`ParamSet`] groups named tensors into
//! architectural layers, which is the unit the federated server aggregates.

mod adam;
mod error;
mod gemm;
mod params;
mod serialize;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::{Result, TensorError};
pub use params::{ParamEntry, ParamSet};
pub use serialize::{MAGIC, FORMAT_VERSION};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
