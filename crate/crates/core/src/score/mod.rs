//! Score models `s(x, i) ~ grad log p_i(x)` where `p_i` is the data
//! distribution convolved with `N(0, (sigma_i^2 - sigma_0^2) I)`.
//!
//! [`GaussianOracle`] is exact for a correlated per-pixel Gaussian prior and
//! serves as ground truth for sampler tests. [`ConvScoreNet`] is a small
//! three-layer convolutional network trained by denoising score matching.

pub mod net;

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, normal_image, streams};
use crate::types::{Image2D, ModalityPair, NoiseSchedule};

pub use net::{train, ConvScoreNet, TrainConfig, Trainer};

/// One training sample or iterate: image channels on a common grid, in
/// stacking order (PET first for pairs).
pub type Channels = Vec<Image2D>;

pub trait ScoreModel {
    /// Number of image channels the model scores.
    fn channels(&self) -> usize;

    fn schedule(&self) -> &NoiseSchedule;

    /// Score field at noise level `step`, same shape as `x`.
    fn score(&self, x: &[Image2D], step: usize) -> Result<Channels>;

    fn evaluate(&self, x: &ModalityPair, step: usize) -> Result<ModalityPair> {
        ModalityPair::from_channels(self.score(&x.to_channels(), step)?)
    }
}

impl<M: ScoreModel + ?Sized> ScoreModel for &M {
    fn channels(&self) -> usize {
        (**self).channels()
    }

    fn schedule(&self) -> &NoiseSchedule {
        (**self).schedule()
    }

    fn score(&self, x: &[Image2D], step: usize) -> Result<Channels> {
        (**self).score(x, step)
    }
}

pub(crate) fn check_channels(x: &[Image2D], expected: usize) -> Result<(usize, usize)> {
    if x.len() != expected {
        return Err(Error::ChannelMismatch {
            expected,
            found: x.len(),
        });
    }
    let dims = x[0].dims();
    for c in &x[1..] {
        x[0].check_same_dims(c)?;
    }
    Ok(dims)
}

/// Per-pixel correlated Gaussian prior: every pixel independently draws
/// `(pet, mri) ~ N(mean, C)` with
/// `C = [[std_pet^2, rho std_pet std_mri], [rho std_pet std_mri, std_mri^2]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianOracle {
    pub mean_pet: f64,
    pub mean_mri: f64,
    pub std_pet: f64,
    pub std_mri: f64,
    pub rho: f64,
    pub sched: NoiseSchedule,
}

impl GaussianOracle {
    pub fn new(
        mean: (f64, f64),
        std: (f64, f64),
        rho: f64,
        sched: NoiseSchedule,
    ) -> Result<Self> {
        if !(std.0 > 0.0 && std.1 > 0.0) || !(rho > -1.0 && rho < 1.0) {
            return Err(Error::InvalidConfig(
                "oracle needs positive stds and |rho| < 1".into(),
            ));
        }
        sched.validate()?;
        Ok(Self {
            mean_pet: mean.0,
            mean_mri: mean.1,
            std_pet: std.0,
            std_mri: std.1,
            rho,
            sched,
        })
    }

    /// Prior covariance entries `(c_pp, c_pm, c_mm)`.
    pub fn covariance(&self) -> (f64, f64, f64) {
        (
            self.std_pet * self.std_pet,
            self.rho * self.std_pet * self.std_mri,
            self.std_mri * self.std_mri,
        )
    }

    /// Marginal prior of one channel, for single-modality sampling.
    pub fn marginal(&self, modality: crate::types::Modality) -> MarginalGaussianOracle {
        let (mean, std) = match modality {
            crate::types::Modality::Pet => (self.mean_pet, self.std_pet),
            crate::types::Modality::Mri => (self.mean_mri, self.std_mri),
        };
        MarginalGaussianOracle {
            mean,
            std,
            sched: self.sched,
        }
    }

    /// Draws a clean pair from the prior.
    pub fn sample_prior<R: Rng + ?Sized>(&self, width: usize, height: usize, rng: &mut R) -> ModalityPair {
        let z1 = normal_image(rng, width, height);
        let z2 = normal_image(rng, width, height);
        let cross = (1.0 - self.rho * self.rho).sqrt();
        let pet = z1.map(|v| self.mean_pet + self.std_pet * v);
        let mri = Image2D::from_fn(width, height, |x, y| {
            let a = z1.get(x, y);
            let b = z2.get(x, y);
            self.mean_mri + self.std_mri * (self.rho * a + cross * b)
        });
        ModalityPair { pet, mri }
    }
}

impl ScoreModel for GaussianOracle {
    fn channels(&self) -> usize {
        2
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    /// `-(C + v I)^{-1} (x - m)` per pixel, `v = sigma_i^2 - sigma_0^2`.
    fn score(&self, x: &[Image2D], step: usize) -> Result<Channels> {
        let (w, h) = check_channels(x, 2)?;
        let var = self.sched.perturbation_variance(step)?;
        let (cpp, cpm, cmm) = self.covariance();
        let (a, b, d) = (cpp + var, cpm, cmm + var);
        let det = a * d - b * b;
        let mut pet = Image2D::zeros(w, h);
        let mut mri = Image2D::zeros(w, h);
        let it = x[0].values().iter().zip(x[1].values());
        for ((sp, sm), (&u, &v)) in pet
            .values_mut()
            .iter_mut()
            .zip(mri.values_mut().iter_mut())
            .zip(it)
        {
            let du = u - self.mean_pet;
            let dv = v - self.mean_mri;
            *sp = -(d * du - b * dv) / det;
            *sm = -(-b * du + a * dv) / det;
        }
        Ok(alloc::vec![pet, mri])
    }
}

/// Single-channel Gaussian prior `N(mean, std^2)` per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalGaussianOracle {
    pub mean: f64,
    pub std: f64,
    pub sched: NoiseSchedule,
}

impl ScoreModel for MarginalGaussianOracle {
    fn channels(&self) -> usize {
        1
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    fn score(&self, x: &[Image2D], step: usize) -> Result<Channels> {
        check_channels(x, 1)?;
        let var = self.std * self.std + self.sched.perturbation_variance(step)?;
        Ok(alloc::vec![x[0].map(|v| -(v - self.mean) / var)])
    }
}

/// Noise level and standard-normal field drawn for one training sample.
#[derive(Clone, Debug)]
pub struct DsmDraw {
    pub step: usize,
    pub noise: Channels,
}

/// Draws `i ~ U{1..N-1}` and a noise field for every sample, in batch order.
pub fn draw_dsm<R: Rng + ?Sized>(
    batch: &[Channels],
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<DsmDraw>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(batch
        .iter()
        .map(|sample| {
            let step = rng.random_range(1..sched.n_steps);
            let noise = sample
                .iter()
                .map(|c| normal_image(rng, c.width(), c.height()))
                .collect();
            DsmDraw { step, noise }
        })
        .collect())
}

/// Perturbed sample `x + sqrt(sigma_i^2 - sigma_0^2) z`.
pub(crate) fn perturbed(sample: &[Image2D], draw: &DsmDraw, sched: &NoiseSchedule) -> Result<Channels> {
    let std = sched.perturbation_variance(draw.step)?.sqrt();
    Ok(sample
        .iter()
        .zip(&draw.noise)
        .map(|(x, z)| {
            let mut p = x.clone();
            p.add_scaled(std, z);
            p
        })
        .collect())
}

/// Weighted denoising score-matching loss with fixed draws:
/// mean over samples of `lambda_i || s(x_hat, i) + (x_hat - x) / lambda_i ||^2`,
/// `lambda_i = sigma_i^2 - sigma_0^2`.
pub fn dsm_loss_with_draws<M: ScoreModel + ?Sized>(
    model: &M,
    batch: &[Channels],
    draws: &[DsmDraw],
    sched: &NoiseSchedule,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for (sample, draw) in batch.iter().zip(draws) {
        let weight = sched.perturbation_variance(draw.step)?;
        let noisy = perturbed(sample, draw, sched)?;
        let score = model.score(&noisy, draw.step)?;
        let mut acc = 0.0;
        for ((s, xh), x) in score.iter().zip(&noisy).zip(sample) {
            for ((&s, &xh), &x) in s.values().iter().zip(xh.values()).zip(x.values()) {
                let r = s + (xh - x) / weight;
                acc += r * r;
            }
        }
        total += weight * acc;
    }
    Ok(total / batch.len() as f64)
}

/// [`dsm_loss_with_draws`] with draws taken from `seed`.
pub fn dsm_loss<M: ScoreModel + ?Sized>(
    model: &M,
    batch: &[Channels],
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<f64> {
    let draws = draw_dsm(batch, sched, &mut rng::stream(seed, streams::DSM))?;
    dsm_loss_with_draws(model, batch, &draws, sched)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Modality;
    use std::vec;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::new(0.05, 5.0, 50).unwrap()
    }

    fn oracle(rho: f64) -> GaussianOracle {
        GaussianOracle::new((0.5, -0.2), (1.0, 0.7), rho, sched()).unwrap()
    }

    fn log_density(o: &GaussianOracle, var: f64, u: f64, v: f64) -> f64 {
        let (cpp, cpm, cmm) = o.covariance();
        let (a, b, d) = (cpp + var, cpm, cmm + var);
        let det = a * d - b * b;
        let (du, dv) = (u - o.mean_pet, v - o.mean_mri);
        -0.5 * (d * du * du - 2.0 * b * du * dv + a * dv * dv) / det
    }

    #[test]
    fn score_vanishes_at_the_mean() {
        let o = oracle(0.8);
        let x = vec![Image2D::filled(4, 4, 0.5), Image2D::filled(4, 4, -0.2)];
        for s in o.score(&x, 7).unwrap() {
            assert!(s.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn uncorrelated_score_decouples() {
        let o = oracle(0.0);
        let x = vec![Image2D::filled(2, 2, 1.5), Image2D::filled(2, 2, 0.3)];
        let var = sched().perturbation_variance(10).unwrap();
        let s = o.score(&x, 10).unwrap();
        let ep = -(1.5 - 0.5) / (1.0 + var);
        let em = -(0.3 + 0.2) / (0.49 + var);
        assert!((s[0].get(0, 0) - ep).abs() < 1e-14);
        assert!((s[1].get(1, 1) - em).abs() < 1e-14);
    }

    #[test]
    fn correlated_score_matches_explicit_inverse() {
        // rho 0.8, unit stds, perturbation variance 0.25, x - m = (1, 0):
        // (C + 0.25 I) = [[1.25, 0.8], [0.8, 1.25]], det = 0.9225,
        // inverse first column = (1.25, -0.8) / 0.9225
        let sigma_min = 0.05;
        let target_sigma = (0.25f64 + sigma_min * sigma_min).sqrt();
        let sched = NoiseSchedule::new(sigma_min, target_sigma, 2).unwrap();
        let o = GaussianOracle::new((0.0, 0.0), (1.0, 1.0), 0.8, sched).unwrap();
        assert!((sched.perturbation_variance(1).unwrap() - 0.25).abs() < 1e-15);
        let x = vec![Image2D::filled(1, 1, 1.0), Image2D::filled(1, 1, 0.0)];
        let s = o.score(&x, 1).unwrap();
        assert!((s[0].get(0, 0) + 1.25 / 0.9225).abs() < 1e-12);
        assert!((s[1].get(0, 0) - 0.8 / 0.9225).abs() < 1e-12);
    }

    #[test]
    fn oracle_matches_finite_differences_of_log_density() {
        let o = oracle(-0.6);
        let mut rng = rng::stream(4, 0);
        for step in [0, 13, 49] {
            let var = sched().perturbation_variance(step).unwrap();
            let pair = o.sample_prior(3, 3, &mut rng);
            let s = o.score(&pair.to_channels(), step).unwrap();
            for p in 0..9 {
                let (u, v) = (pair.pet.values()[p], pair.mri.values()[p]);
                let h = 1e-5;
                let du = (log_density(&o, var, u + h, v) - log_density(&o, var, u - h, v)) / (2.0 * h);
                let dv = (log_density(&o, var, u, v + h) - log_density(&o, var, u, v - h)) / (2.0 * h);
                assert!((s[0].values()[p] - du).abs() < 1e-6);
                assert!((s[1].values()[p] - dv).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn marginal_oracle_matches_joint_when_uncorrelated() {
        let o = oracle(0.0);
        let x = vec![Image2D::filled(3, 3, 0.9), Image2D::filled(3, 3, 0.1)];
        let joint = o.score(&x, 20).unwrap();
        let pet = o.marginal(Modality::Pet).score(&x[..1], 20).unwrap();
        let mri = o.marginal(Modality::Mri).score(&x[1..], 20).unwrap();
        assert!((joint[0].get(1, 1) - pet[0].get(1, 1)).abs() < 1e-14);
        assert!((joint[1].get(1, 1) - mri[0].get(1, 1)).abs() < 1e-14);
    }

    struct Perfect {
        sched: NoiseSchedule,
        draws: Vec<DsmDraw>,
    }

    impl ScoreModel for Perfect {
        fn channels(&self) -> usize {
            2
        }
        fn schedule(&self) -> &NoiseSchedule {
            &self.sched
        }
        fn score(&self, x: &[Image2D], step: usize) -> Result<Channels> {
            // look up the draw used for this sample: the test batch has one sample
            let draw = &self.draws[0];
            assert_eq!(draw.step, step);
            let std = self.sched.perturbation_variance(step)?.sqrt();
            Ok(draw.noise.iter().zip(x).map(|(z, _)| z.scaled(-1.0 / std)).collect())
        }
    }

    struct Zero(NoiseSchedule);

    impl ScoreModel for Zero {
        fn channels(&self) -> usize {
            2
        }
        fn schedule(&self) -> &NoiseSchedule {
            &self.0
        }
        fn score(&self, x: &[Image2D], _: usize) -> Result<Channels> {
            Ok(x.iter().map(|c| Image2D::zeros(c.width(), c.height())).collect())
        }
    }

    #[test]
    fn perfect_score_has_zero_loss() {
        let s = sched();
        let batch = vec![vec![Image2D::filled(4, 4, 0.3), Image2D::filled(4, 4, 0.6)]];
        let draws = draw_dsm(&batch, &s, &mut rng::stream(1, 0)).unwrap();
        let model = Perfect {
            sched: s,
            draws: draws.clone(),
        };
        let loss = dsm_loss_with_draws(&model, &batch, &draws, &s).unwrap();
        assert!(loss.abs() < 1e-18);
    }

    #[test]
    fn zero_score_loss_averages_to_channel_pixel_count() {
        let s = sched();
        let batch: Vec<Channels> = (0..64)
            .map(|_| vec![Image2D::filled(8, 8, 0.3), Image2D::filled(8, 8, 0.6)])
            .collect();
        let mut total = 0.0;
        let rounds = 10;
        for seed in 0..rounds {
            total += dsm_loss(&Zero(s), &batch, &s, seed).unwrap();
        }
        let mean = total / rounds as f64;
        assert!((mean / 128.0 - 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn dsm_loss_rejects_empty_batch_and_is_nonnegative() {
        let s = sched();
        assert_eq!(dsm_loss(&oracle(0.3), &[], &s, 0), Err(Error::EmptyBatch));
        let batch = vec![vec![Image2D::filled(4, 4, 2.0), Image2D::filled(4, 4, -1.0)]];
        assert!(dsm_loss(&oracle(0.3), &batch, &s, 0).unwrap() >= 0.0);
    }
}
