//! Joint PET/MRI reconstruction with a score-based diffusion prior.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every numerical piece:
//! forward operators, measurement simulation, the variance-exploding noise
//! ladder, score models and their training, data-fidelity terms, the
//! predictor-corrector sampler, quality metrics and the paired phantom
//! generator. File formats and the command-line front end live in the
//! `mcdiff` crate.

#![no_std]
// `!(x > 0.0)` style checks are kept because they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod degradation;
pub mod error;
mod fft;
pub mod fidelity;
pub mod metrics;
pub mod operators;
pub mod phantom;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod score;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    validate_pair, Image2D, KSpaceData, Modality, ModalityPair, NoiseSchedule, SamplingMask,
    Sinogram,
};
