//! File formats, run manifests and the command line of the burst-parallel
//! planner and simulator.
//!
//! Pure computation lives in [`burstpar_core`]; this crate reads and writes
//! TOML documents and CSV tables, hashes inputs into [`RunManifest`]s, and
//! exposes the `burstpar` binary.

pub mod cli;
pub mod error;
pub mod format;
pub mod manifest;
pub mod table;

pub use burstpar_core as core;
pub use cli::{execute, Cli, Command, Report};
pub use error::{exit, CliError, Result};
pub use manifest::RunManifest;
