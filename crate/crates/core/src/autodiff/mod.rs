//! Reverse-mode automatic differentiation: tensors, the tape, parameters,
//! Adam, and checkpoint files.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, FORMAT_HEADER, FORMAT_VERSION};
pub use params::{clip_global_norm, Binding, ParamId, ParamStore};
pub use tape::{BatchNormStats, Gradients, Tape, Var};
pub use tensor::Tensor;
