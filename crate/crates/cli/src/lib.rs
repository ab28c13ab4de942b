//! Command-line driver for the `weightflow` pipeline: run configuration,
//! the `NMWT` artifact container and one function per subcommand.

pub mod commands;
pub mod config;
pub mod container;
pub mod error;
pub mod report;
pub mod store;
pub mod workspace;

pub use config::RunConfig;
pub use container::{Container, Kind};
pub use error::{CliError, CliResult};
