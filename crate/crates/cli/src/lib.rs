//! Pipeline driver for the `auscult` binary: configuration loading, the six
//! subcommands and error-to-exit-code mapping.

pub mod cli;
pub mod config;
pub mod pipeline;

pub use cli::{exit_code, run, Cli};
pub use config::{ConfigError, PipelineConfig};
