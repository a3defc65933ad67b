//! EEG emotion recognition: preprocessing, an attention/dynamic-graph
//! classifier built on `atdgnn-tensor`, and a nested cross-validation harness.

pub mod error;
pub mod harness;
pub mod io;
pub mod model;
pub mod signal;

pub use error::{Error, Result};
