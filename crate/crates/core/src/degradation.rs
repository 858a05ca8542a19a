//! Measurement simulation: Poisson counts for PET, noisy masked k-space for MRI.

use alloc::vec::Vec;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::operators::{apply_mask, fft2_forward, radon_forward, RadonGeometry};
use crate::rng::{self, streams};
use crate::types::{Image2D, KSpaceData, SamplingMask, Sinogram};

#[derive(Clone, Debug, PartialEq)]
pub struct DegradeConfig {
    /// Expected counts per unit line integral.
    pub pet_dose: f64,
    /// Standard deviation of each real/imaginary k-space noise component.
    pub mri_noise_std: f64,
    pub mask: SamplingMask,
    pub seed: u64,
}

impl DegradeConfig {
    pub fn new(mask: SamplingMask, seed: u64) -> Self {
        Self {
            pet_dose: 100.0,
            mri_noise_std: 0.0,
            mask,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.pet_dose > 0.0) || !self.pet_dose.is_finite() {
            return Err(Error::InvalidConfig("pet_dose must be positive".into()));
        }
        if !(self.mri_noise_std >= 0.0) || !self.mri_noise_std.is_finite() {
            return Err(Error::InvalidConfig("mri_noise_std must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Each bin drawn independently as `Poisson(pet_dose * (A u)_bin)`.
pub fn simulate_pet(u: &Image2D, geom: &RadonGeometry, cfg: &DegradeConfig) -> Result<Sinogram> {
    cfg.validate()?;
    if let Some((index, &value)) = u.values().iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(Error::NegativeActivity { index, value });
    }
    let expected = radon_forward(u, geom)?;
    let mut rng = rng::stream(cfg.seed, streams::PET_COUNTS);
    let counts: Vec<f64> = expected
        .values()
        .iter()
        .map(|&line| {
            let rate = cfg.pet_dose * line;
            if rate > 0.0 {
                Poisson::new(rate).expect("finite positive rate").sample(&mut rng)
            } else {
                0.0
            }
        })
        .collect();
    Sinogram::new(geom.n_detectors(), geom.n_angles(), counts)
}

/// `mask(F v + eta)` with i.i.d. complex Gaussian `eta`.
pub fn simulate_mri(v: &Image2D, cfg: &DegradeConfig) -> Result<KSpaceData> {
    cfg.validate()?;
    let clean = fft2_forward(v);
    if clean.dims() != cfg.mask.dims() {
        return Err(Error::DimensionMismatch {
            expected: clean.dims(),
            found: cfg.mask.dims(),
        });
    }
    let mut rng = rng::stream(cfg.seed, streams::MRI_NOISE);
    let std = cfg.mri_noise_std;
    let noisy: Vec<Complex64> = clean
        .values()
        .iter()
        .map(|&c| {
            if std > 0.0 {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                c + Complex64::new(std * re, std * im)
            } else {
                c
            }
        })
        .collect();
    let noisy = KSpaceData::new(clean.width(), clean.height(), noisy, None)?;
    apply_mask(&noisy, &cfg.mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::make_cartesian_mask;

    fn disc(size: usize) -> Image2D {
        let c = (size as f64 - 1.0) / 2.0;
        Image2D::from_fn(size, size, |x, y| {
            let r2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2);
            if r2 < (size as f64 / 3.0).powi(2) {
                0.5 + 0.5 * (x as f64 / size as f64)
            } else {
                0.0
            }
        })
    }

    #[test]
    fn zero_activity_gives_zero_counts() {
        let geom = RadonGeometry::for_image(16, 12).unwrap();
        let cfg = DegradeConfig::new(SamplingMask::full(16, 16), 1);
        let sino = simulate_pet(&Image2D::zeros(16, 16), &geom, &cfg).unwrap();
        assert!(sino.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn counts_are_integers_and_reproducible() {
        let geom = RadonGeometry::for_image(16, 12).unwrap();
        let cfg = DegradeConfig::new(SamplingMask::full(16, 16), 5);
        let a = simulate_pet(&disc(16), &geom, &cfg).unwrap();
        let b = simulate_pet(&disc(16), &geom, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.values().iter().all(|&v| v >= 0.0 && v.fract() == 0.0));
        let other = DegradeConfig { seed: 6, ..cfg };
        assert_ne!(a, simulate_pet(&disc(16), &geom, &other).unwrap());
    }

    #[test]
    fn high_dose_counts_approach_line_integrals() {
        let geom = RadonGeometry::for_image(32, 40).unwrap();
        let u = disc(32);
        let cfg = DegradeConfig {
            pet_dose: 1e6,
            ..DegradeConfig::new(SamplingMask::full(32, 32), 11)
        };
        let counts = simulate_pet(&u, &geom, &cfg).unwrap();
        let exact = radon_forward(&u, &geom).unwrap();
        let err: f64 = counts
            .values()
            .iter()
            .zip(exact.values())
            .map(|(c, e)| (c / 1e6 - e).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err / exact.norm() < 0.01);
    }

    #[test]
    fn negative_activity_is_rejected() {
        let geom = RadonGeometry::for_image(8, 4).unwrap();
        let mut u = Image2D::zeros(8, 8);
        u.set(2, 3, -0.5);
        let cfg = DegradeConfig::new(SamplingMask::full(8, 8), 0);
        assert_eq!(
            simulate_pet(&u, &geom, &cfg),
            Err(Error::NegativeActivity {
                index: 26,
                value: -0.5
            })
        );
    }

    #[test]
    fn noiseless_full_mri_is_the_plain_transform() {
        let v = disc(16);
        let cfg = DegradeConfig::new(SamplingMask::full(16, 16), 0);
        let g = simulate_mri(&v, &cfg).unwrap();
        assert_eq!(g.values(), fft2_forward(&v).values());

        let mask = make_cartesian_mask(16, 16, 4.0, 0.125, 1).unwrap();
        let g4 = simulate_mri(&v, &DegradeConfig::new(mask, 0)).unwrap();
        assert!(g4.norm() <= fft2_forward(&v).norm());
    }

    #[test]
    fn mri_noise_has_requested_std_on_sampled_bins() {
        let v = disc(64);
        let mask = make_cartesian_mask(64, 64, 2.0, 0.08, 4).unwrap();
        let clean = apply_mask(&fft2_forward(&v), &mask).unwrap();
        let flags = mask.row_flags();
        let mut sum_sq = 0.0;
        let mut n = 0usize;
        for seed in 21..26 {
            let cfg = DegradeConfig {
                mri_noise_std: 0.3,
                ..DegradeConfig::new(mask.clone(), seed)
            };
            let g = simulate_mri(&v, &cfg).unwrap();
            for (i, (a, b)) in g.values().iter().zip(clean.values()).enumerate() {
                if flags[i / 64] {
                    let d = a - b;
                    sum_sq += d.re * d.re + d.im * d.im;
                    n += 2;
                } else {
                    assert_eq!(*a, Complex64::new(0.0, 0.0));
                }
            }
        }
        assert!(n >= 10_000);
        let std = (sum_sq / n as f64).sqrt();
        assert!((std / 0.3 - 1.0).abs() < 0.05, "std {std}");
    }
}
