//! Library side of the `bsa` command: run manifests, the count-record file format
//! and the four subcommands.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod error;
pub mod manifest;
pub mod record;

pub use error::{CliError, Result};
