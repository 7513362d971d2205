//! Directed speech separation for long-form two-speaker recordings.

pub mod audio;
pub mod config;
pub mod autodiff;
pub mod corpus;
pub mod discovery;
pub mod embedder;
pub mod error;
pub mod evaluation;
pub mod separator;
pub mod stitcher;
pub mod training;
pub mod util;

pub use config::RunConfig;
pub use error::{Error, Result};
