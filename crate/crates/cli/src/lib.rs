//! Configuration schema and runner behind the `branchlab` binary.

pub mod config;
pub mod run;
