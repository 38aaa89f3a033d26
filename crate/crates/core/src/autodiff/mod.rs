//! Reverse-mode differentiation, the training losses, and finite-difference
//! gradient verification.

pub mod gradcheck;
pub mod losses;
pub mod tape;

pub use gradcheck::{grad_check, run_suite, CheckResult};
pub use losses::LossWeights;
pub use tape::{Gradients, Tape, Var};
