//! Adaptive compressed sensing by greedy posterior-covariance measurement
//! selection.
//!
//! Each acquisition step draws posterior samples given the measurements so
//! far, picks the directions of largest remaining uncertainty (optionally
//! restricted to a candidate family), measures them and repeats.

pub mod engine;
pub mod error;
pub mod harness;
pub mod matrix_io;
pub mod numerics;
pub mod par;
pub mod priors;
pub mod restoration;
pub mod samplers;
pub mod selection;

pub use error::{Error, Result};
