//! Variance-exploding noise ladder, perturbation kernel and forward chain.
//!
//! Levels are 0-based and increase with the index: `sigma_0 = sigma_min`,
//! `sigma_{N-1} = sigma_max`. Level `i` adds variance `sigma_i^2 - sigma_0^2`
//! to clean data, so level 0 is the data distribution itself.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, normal_image, streams};
use crate::types::{ModalityPair, NoiseSchedule};

pub fn sigma_at(sched: &NoiseSchedule, i: usize) -> Result<f64> {
    sched.sigma(i)
}

/// `x0 + sqrt(sigma_i^2 - sigma_0^2) z` with `z` standard normal on both channels.
pub fn perturb(x0: &ModalityPair, sched: &NoiseSchedule, i: usize, seed: u64) -> Result<ModalityPair> {
    perturb_with(x0, sched, i, &mut rng::stream(seed, streams::PERTURB))
}

pub fn perturb_with<R: Rng + ?Sized>(
    x0: &ModalityPair,
    sched: &NoiseSchedule,
    i: usize,
    rng: &mut R,
) -> Result<ModalityPair> {
    let std = sched.perturbation_variance(i)?.max(0.0).sqrt();
    Ok(add_noise(x0, std, rng))
}

/// One Markov step `X_i = X_{i-1} + sqrt(sigma_i^2 - sigma_{i-1}^2) z`.
pub fn forward_chain_step(
    x_prev: &ModalityPair,
    sched: &NoiseSchedule,
    i: usize,
    seed: u64,
) -> Result<ModalityPair> {
    forward_chain_step_with(x_prev, sched, i, &mut rng::stream(seed, streams::CHAIN))
}

pub fn forward_chain_step_with<R: Rng + ?Sized>(
    x_prev: &ModalityPair,
    sched: &NoiseSchedule,
    i: usize,
    rng: &mut R,
) -> Result<ModalityPair> {
    if i == 0 || i >= sched.n_steps {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: sched.n_steps,
        });
    }
    let prev = sched.sigma(i - 1)?;
    let cur = sched.sigma(i)?;
    Ok(chain_increment(x_prev, prev, cur, rng))
}

fn chain_increment<R: Rng + ?Sized>(x: &ModalityPair, prev: f64, cur: f64, rng: &mut R) -> ModalityPair {
    let std = (cur * cur - prev * prev).max(0.0).sqrt();
    add_noise(x, std, rng)
}

fn add_noise<R: Rng + ?Sized>(x: &ModalityPair, std: f64, rng: &mut R) -> ModalityPair {
    let (w, h) = x.dims();
    let mut pet = x.pet.clone();
    let mut mri = x.mri.clone();
    // draws are consumed even when std is zero so that streams stay aligned
    pet.add_scaled(std, &normal_image(rng, w, h));
    mri.add_scaled(std, &normal_image(rng, w, h));
    ModalityPair { pet, mri }
}
