//! Response-aware routing across candidate language models.

mod error;

pub mod backbone;
pub mod baselines;
pub mod corpus;
pub mod eval;
pub mod gateway;
pub mod numeric;
pub mod router;

pub use error::{Error, Result};
