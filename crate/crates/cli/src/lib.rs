//! Command-line front end: file formats and subcommands.

pub mod args;
pub mod commands;
pub mod formats;
