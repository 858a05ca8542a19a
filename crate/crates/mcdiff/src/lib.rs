//! File formats, experiment drivers and the `mcdiff` command line for the
//! joint PET/MRI diffusion reconstruction in `mcdiff-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod container;
pub mod error;
pub mod experiment;
pub mod pgm;

pub use error::{Error, FormatError, Result};
