//! Fringe-projection structured-light reconstruction: pattern generation,
//! phase decoding, triangulation, reliability-gated depth completion, a
//! procedural simulator for closed-loop verification, annotation handling,
//! semantic fusion and evaluation metrics.

pub mod annotations;
pub mod bench;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod io;
pub mod patterns;
pub mod phase;
pub mod pipeline;
pub mod ply;
pub mod simulator;
pub mod stack_io;

pub use error::{Error, Result};
