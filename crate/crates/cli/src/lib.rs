//! Operational shell: configuration parsing, mode dispatch, and the built-in
//! verification suite behind the `aniso-tik` binary.

pub mod config;
pub mod error;
pub mod runner;
pub mod selftest;

pub use config::{Mode, RunConfig};
pub use error::CliError;
pub use runner::{run_file, Overrides};
