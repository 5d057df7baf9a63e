//! Style fusion attention for multi-view feature stylization, with a
//! synthetic fine-tuning harness and consistency metrics.

pub mod adain;
pub mod cli;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod grad;
pub mod metrics;
pub mod model;
pub mod pgm;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
