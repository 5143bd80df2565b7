//! Dense tensors, a reverse-mode tape, and the gradient / Hessian-vector
//! product entry points every other module builds on.

mod autodiff;
mod params;
mod real;
mod tape;

pub use autodiff::{grad, hvp, loss, value_and_grad, value_and_grad_in, Precision};
pub use params::{Layout, ParamVector, Segment};
pub use real::{Dual, Real};
pub use tape::{Gradients, Tape, Tensor, Var};
