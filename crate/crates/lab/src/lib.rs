//! Run configs, model files and reports around `svip-core`, plus the
//! command implementations behind the `svip` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod format;
pub mod io;

pub use crate::commands::{Format, Output};
pub use crate::config::{LoadedConfig, RunConfig};
pub use crate::error::LabError;
