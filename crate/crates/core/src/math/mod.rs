//! Dense tensors, a reverse-mode tape and supporting numeric kernels.

pub mod gradcheck;
pub mod interp;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod volume;

pub use gradcheck::{grad_check, GradCheck};
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use tape::{sigmoid, softplus, Tape, Var};
pub use tensor::Tensor;
