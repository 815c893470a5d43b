//! Adversarial reprogramming of frozen image classifiers.
//!
//! A single additive program `P = tanh(W ⊙ M)` is learned around an embedded
//! task image so that a frozen host classifier, read through a fixed label
//! map, solves a different task.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod host;
pub mod io;
pub mod nn;
pub mod reprogram;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
