//! File formats, experiment runners and the command-line interface for the
//! `drlqr-core` synthesis library.

pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod pendulum;

pub use config::{Method, RunConfig};
pub use error::{Error, Result};
