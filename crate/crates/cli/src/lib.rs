//! Command-line pipeline over the `tractseg` library: phantom cohorts,
//! tensor fitting, training, segmentation, evaluation and reproducibility
//! statistics.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

pub use config::RunConfig;
pub use error::CliError;
