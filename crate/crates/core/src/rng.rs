//! Seeded random streams. Every stochastic operation takes an explicit seed
//! or generator; there is no global state.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::types::Image2D;

pub type StreamRng = ChaCha8Rng;

/// Independent stream `stream` of the generator keyed by `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal_image<R: Rng + ?Sized>(rng: &mut R, width: usize, height: usize) -> Image2D {
    let values: Vec<f64> = (0..width * height)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Image2D::new(width, height, values).expect("normal draws are finite")
}

/// Stream ids used across the crate, kept apart so that simulations sharing
/// one seed never reuse draws.
pub(crate) mod streams {
    pub const MASK: u64 = 1;
    pub const PET_COUNTS: u64 = 2;
    pub const MRI_NOISE: u64 = 3;
    pub const PERTURB: u64 = 4;
    pub const CHAIN: u64 = 5;
    pub const DSM: u64 = 6;
    pub const TRAIN: u64 = 7;
    pub const INIT: u64 = 8;
    pub const SAMPLER: u64 = 9;
    pub const PHANTOM: u64 = 10;
}
