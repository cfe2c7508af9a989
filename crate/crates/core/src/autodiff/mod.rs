//! Reverse-mode differentiation and its finite-difference verification harness.

mod gradcheck;
mod tape;

pub use gradcheck::{gradient_check, gradient_check_params};
pub use tape::{log_softmax, softmax, Gradients, Tape, Var};
