//! Reverse-mode automatic differentiation and the Adam optimizer.

mod adam;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{conv1d_output_len, Tape, Var};
pub use tensor::Tensor;

