//! Command-line front end for the hopping simulator: strict flat-key
//! configuration files, fixed-format CSV and text artifacts, and the five
//! experiment commands wired to the library.

pub mod commands;
pub mod config;
pub mod output;
