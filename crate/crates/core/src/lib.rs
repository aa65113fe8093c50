//! Diffusion probabilistic fields.

pub mod engine;
pub mod error;
pub mod field;
pub mod io;
pub mod metrics;
pub mod numerics;
pub mod schedule;
pub mod score;

pub use error::{Error, Result};
