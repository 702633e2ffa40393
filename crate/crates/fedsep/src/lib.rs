//! File formats, corpus IO, the parallel executor and the experiment driver
//! around `fedsep-core`.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod executor;
pub mod experiment;
pub mod manifest;
pub mod wav;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
