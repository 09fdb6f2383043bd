pub mod audio;
pub mod augment;
pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod gan;
pub mod pipeline;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
