pub mod analysis;
pub mod bundle;
pub mod cli;
pub mod config;
pub mod contrast;
pub mod eigen;
pub mod error;
pub mod graph;
pub mod pipeline;
pub mod report;
pub mod scores;
pub mod spectral;
pub mod stats;
pub mod synthetic;
pub mod tokstress;

pub use error::{Error, Result};
