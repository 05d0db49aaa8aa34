//! Configuration, dispatch and table output for the `fbrd` command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod run;
pub mod table;

pub use config::{Command, RunConfig};
pub use run::{compute, run, RunError};
pub use table::{Row, Table};
