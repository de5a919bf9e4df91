//! File formats, Monte-Carlo harness and command-line support around
//! [`gridprobe_core`].

pub mod bench;
pub mod dataset;
mod error;
pub mod feeder_file;
pub mod report;
pub mod scenario;

pub use error::{Error, Result};
pub use gridprobe_core as core;
