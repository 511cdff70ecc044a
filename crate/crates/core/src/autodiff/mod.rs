//! Reverse-mode automatic differentiation over dense `f64` arrays, plus the
//! first-order optimizers and the finite-difference gradient check used as a
//! test oracle throughout the crate.

mod array;
mod check;
mod optim;
mod params;
mod tape;

pub use array::{log_add, log_sum_exp, RealArray};
pub use check::finite_diff_check;
pub use optim::{l2_norm, Optimizer, OptimizerConfig, OptimizerMethod};
pub use params::{BoundParams, ParameterVector};
pub use tape::{Gradients, Tape, Var};
