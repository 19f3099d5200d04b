//! Debugging-battery harness for feature attributions: train small
//! networks, inject data, model and test-time bugs, compute attribution
//! maps and score how well each method exposes each bug.

pub mod attribution;
pub mod bugs;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
