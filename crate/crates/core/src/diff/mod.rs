//! Dense reverse-mode automatic differentiation.
//!
//! Values are row-major matrices ([`Tensor`]); scalars are `1 x 1`. A
//! [`Tape`] records every primitive applied to its [`Var`]s and replays the
//! chain rule in reverse when [`Tape::backward`] is called. Binary
//! elementwise primitives broadcast along any axis of length one.

mod optim;
mod tape;
mod tensor;

pub use optim::{adam_step, sgd_step, LrSchedule, Method, OptimState, OptimizerSpec};
pub use tape::{grad, Gradients, Tape, Var};
pub use tensor::Tensor;
