//! Dense tensors, a define-by-run differentiation tape, Adam, and
//! checkpoint I/O.

mod adam;
pub mod checkpoint;
mod gradcheck;
pub mod kernels;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{analytic_gradient, grad_check, max_relative_error, numeric_gradient, GradCheck};
pub use params::{ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
