//! Files, run directories and commands around [`hetdyn_core`].
//!
//! The `hdyn` binary is a thin wrapper over [`commands`]; everything it does
//! is reachable from here as well.

pub use hetdyn_core as core;

pub mod analysis;
pub mod blocks;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod report;
pub mod run;

pub use error::{HdynError, Result};
