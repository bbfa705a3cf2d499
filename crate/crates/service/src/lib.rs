//! Command-line entry points and the HTTP backend of the blind realism study.

pub mod api;
pub mod cli;
