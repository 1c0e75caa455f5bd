//! Command-line front-end of `emitterlab`: simulate HBT acquisitions,
//! correlate them, fit g² curves and run the full power-series analysis
//! from one TOML configuration.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::RunConfig;
pub use error::CliError;
