//! Command-line front end: scenario files, CSV logs, gain checks and
//! post-run analysis.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod commands;
pub mod config;
pub mod csvlog;
pub mod diagnostics;
pub mod error;
pub mod plot;

pub use error::{CliError, Result};
