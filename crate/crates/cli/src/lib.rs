//! Command-line front end for the interval-markets engines.
//!
//! State lives in a JSON snapshot plus an append-only JSONL trade log next
//! to it. The log is authoritative: `buy` appends before it rewrites the
//! snapshot, and loading rolls the snapshot forward over any trades it missed.

pub mod commands;
pub mod engine;
pub mod error;
pub mod format;
pub mod store;
pub mod tradelog;

pub use commands::{run, Cli};
pub use error::{exit_code, CliError};
