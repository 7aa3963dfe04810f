//! Library side of the `ssvi` command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod io;

pub use config::RunConfig;
