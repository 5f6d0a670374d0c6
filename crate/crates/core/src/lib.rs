//! Online surgical phase recognition on per-second feature sequences.
//!
//! The pipeline refines precomputed frame features with a causal two-head
//! attention layer, encodes sliding windows with a transformer branch, and
//! predicts a phase distribution plus a Surgical Progress Index (SPI) for
//! every second of a recording.

pub mod annotations;
pub mod cli;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod numerics;
pub mod parallel;
pub mod spi;
pub mod training;

pub use error::{Error, Result};
