//! Deep image harmonization toolkit.

pub mod error;
pub mod image;

pub use error::{Error, Result};
pub mod datasynth;
pub mod network;
pub mod training;
pub mod evaluation;
pub mod postprocess;
