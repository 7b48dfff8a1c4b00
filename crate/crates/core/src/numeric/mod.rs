//! Dense tensors, tape-based reverse-mode differentiation, AdamW, learning
//! rate schedules and a finite-difference gradient checker.

mod gradcheck;
mod optim;
mod params;
mod schedule;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, check_gradients_at};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Bound, ParamId, ParamStore};
pub use schedule::{Decay, LrSchedule};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value produced by {op} at flat index {index}")]
    NonFinite { op: String, index: usize },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss function is not deterministic: {first} then {second}")]
    Determinism { first: f64, second: f64 },
    #[error("{0}")]
    Contract(String),
}
