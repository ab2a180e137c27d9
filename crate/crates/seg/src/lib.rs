//! File formats, run configuration and the pipeline verbs of the
//! `vimpute-seg` command-line tool, on top of `vimpute-core`.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod io;
pub mod run;

pub use error::{Error, Result};
