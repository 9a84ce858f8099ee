//! Batch front-end for the `roughvol` engine: JSON run configurations in,
//! CSV and JSON artifacts out.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::CliError;
pub use config::{RunConfig, SchemaError};
