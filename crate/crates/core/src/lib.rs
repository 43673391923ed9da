pub mod artifacts;
pub mod coreset;
pub mod data;
pub mod engine;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod model;
pub mod predictive;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
