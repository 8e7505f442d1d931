//! Numeric foundation: tensors, a reverse-mode autodiff tape, named
//! parameter sets, an LSTM cell, and finite-difference gradient checking.

pub mod check;
pub mod lstm;
pub mod params;
pub mod tape;
pub mod tensor;

pub use params::{Graph, Param, ParamId, ParamSet};
pub use tape::{Tape, TensorId};
pub use tensor::Tensor;
