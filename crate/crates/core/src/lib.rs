//! Joint image denoising and noise generation under a dual adversarial objective.

pub mod data;
pub mod engine;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Shape, Tape, Tensor, Var};
