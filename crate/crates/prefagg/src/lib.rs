//! Files, CSV output and the command-line front end for `prefagg-core`.
//!
//! * [`document`]: strict JSON scenarios, trainer configurations and sweep specs
//! * [`table`]: CSV tables with 17 significant digits
//! * [`sweep`]: binary-question sweeps
//! * [`verify`]: solver against best-response iteration
//! * [`cli`]: `prefagg` subcommands and exit codes

#![warn(missing_docs)]
// `!(x > 0.0)` is how NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod document;
pub mod sweep;
pub mod table;
pub mod verify;

pub use cli::{run_command, run_with, CliError};
pub use document::{load_scenario, read_scenario, scenario_to_json, DocumentError};
