//! Dense `f32` arrays, a reverse-mode autodiff tape, gradient checking, and
//! the AdamW optimizer with its warm-up schedule.

mod array;
mod gradcheck;
mod optim;
mod tape;

pub use array::{dot, Array2};
pub use gradcheck::{
    compare_with_finite_differences, grad_check, relative_error, tape_gradients, GradCheckReport,
};
pub use optim::{lr_at, AdamW, AdamWConfig};
pub use tape::{softmax_in_place, Gradients, Tape, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("loss must be 1x1, got {0:?}")]
    NotScalar((usize, usize)),
}
