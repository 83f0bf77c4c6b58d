//! Dense tensors with tape-based reverse-mode differentiation.

pub mod checkpoint;
pub mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{gradcheck, relative_error, GradcheckReport};
pub use tape::{ConvGeom, Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;
