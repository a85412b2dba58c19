pub mod config;
pub mod container;
pub mod error;
pub mod generator;
pub mod metrics;
pub mod nn;
pub mod predictor;
pub mod signal;
pub mod source;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
