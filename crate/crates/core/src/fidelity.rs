//! Data-fidelity terms: Poisson negative log-likelihood for PET, weighted
//! least squares on sampled k-space for MRI, and their gradients.
//!
//! PET has two gradient forms. [`FidelityVariant::PoissonRatio`] is the exact
//! gradient `A^T (1 - f / A u)` of the Poisson objective;
//! [`FidelityVariant::FbpResidual`] replaces it with `fbp(A u - f)`, the
//! direction the reconstruction loop uses by default.

use alloc::string::ToString;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{apply_mask, fbp, fft2_forward, ifft2_adjoint, kspace_sub, radon_adjoint, radon_forward, RadonGeometry};
use crate::types::{Image2D, KSpaceData, SamplingMask, Sinogram};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidelityVariant {
    #[default]
    FbpResidual,
    PoissonRatio,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelityConfig {
    pub variant: FidelityVariant,
    /// Floor applied to expected counts before division and log.
    pub ratio_clamp: f64,
    /// Weight of the k-space least-squares term.
    pub mri_weight: f64,
    /// Expected counts per unit line integral (the simulated dose). The
    /// PET forward model is `count_scale * A u`.
    pub count_scale: f64,
    pub geom: RadonGeometry,
    pub mask: SamplingMask,
}

impl FidelityConfig {
    pub fn new(geom: RadonGeometry, mask: SamplingMask) -> Self {
        Self {
            variant: FidelityVariant::FbpResidual,
            ratio_clamp: 1e-6,
            mri_weight: 1.0,
            count_scale: 1.0,
            geom,
            mask,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio_clamp > 0.0) {
            return Err(Error::InvalidConfig("ratio_clamp must be positive".to_string()));
        }
        if !(self.mri_weight > 0.0) || !self.mri_weight.is_finite() {
            return Err(Error::InvalidConfig("mri_weight must be positive".to_string()));
        }
        if !(self.count_scale > 0.0) || !self.count_scale.is_finite() {
            return Err(Error::InvalidConfig("count_scale must be positive".to_string()));
        }
        Ok(())
    }

    fn expected_counts(&self, u: &Image2D) -> Result<Vec<f64>> {
        let au = radon_forward(u, &self.geom)?;
        let s = self.count_scale;
        Ok(au.values().iter().map(|&v| s * v).collect())
    }

    fn check_sinogram(&self, f: &Sinogram) -> Result<()> {
        let expected = (self.geom.n_detectors(), self.geom.n_angles());
        let found = (f.n_detectors(), f.n_angles());
        if expected != found {
            return Err(Error::DimensionMismatch { expected, found });
        }
        Ok(())
    }
}

/// `sum_b [s (A u)_b - f_b log(max(s (A u)_b, clamp))]`, `s = count_scale`.
pub fn pet_neg_loglik(u: &Image2D, f: &Sinogram, cfg: &FidelityConfig) -> Result<f64> {
    cfg.check_sinogram(f)?;
    let lam = cfg.expected_counts(u)?;
    Ok(lam
        .iter()
        .zip(f.values())
        .map(|(&l, &c)| {
            // a zero count contributes no log term even where l is clamped
            let log_term = if c == 0.0 { 0.0 } else { c * l.max(cfg.ratio_clamp).ln() };
            l - log_term
        })
        .sum())
}

pub fn pet_grad(u: &Image2D, f: &Sinogram, cfg: &FidelityConfig) -> Result<Image2D> {
    cfg.check_sinogram(f)?;
    let size = u.width();
    let s = cfg.count_scale;
    match cfg.variant {
        FidelityVariant::PoissonRatio => {
            let lam = cfg.expected_counts(u)?;
            let ratio: Vec<f64> = lam
                .iter()
                .zip(f.values())
                .map(|(&l, &c)| s * (1.0 - c / l.max(cfg.ratio_clamp)))
                .collect();
            let ratio = Sinogram::new(f.n_detectors(), f.n_angles(), ratio)?;
            radon_adjoint(&ratio, &cfg.geom, size)
        }
        FidelityVariant::FbpResidual => {
            let au = radon_forward(u, &cfg.geom)?;
            let resid: Vec<f64> = au
                .values()
                .iter()
                .zip(f.values())
                .map(|(&a, &c)| a - c / s)
                .collect();
            let resid = Sinogram::new(f.n_detectors(), f.n_angles(), resid)?;
            fbp(&resid, &cfg.geom, size)
        }
    }
}

fn mri_residual(v: &Image2D, g: &KSpaceData, cfg: &FidelityConfig) -> Result<KSpaceData> {
    if v.dims() != g.dims() {
        return Err(Error::DimensionMismatch {
            expected: v.dims(),
            found: g.dims(),
        });
    }
    let fv = apply_mask(&fft2_forward(v), &cfg.mask)?;
    let g = apply_mask(g, &cfg.mask)?;
    kspace_sub(&fv, &g)
}

/// `(mri_weight / 2) || mask(F v) - mask(g) ||^2`.
pub fn mri_neg_loglik(v: &Image2D, g: &KSpaceData, cfg: &FidelityConfig) -> Result<f64> {
    let r = mri_residual(v, g, cfg)?;
    let n = r.norm();
    Ok(0.5 * cfg.mri_weight * n * n)
}

/// `mri_weight * Re(F^* (mask(F v) - mask(g)))`.
pub fn mri_grad(v: &Image2D, g: &KSpaceData, cfg: &FidelityConfig) -> Result<Image2D> {
    let r = mri_residual(v, g, cfg)?;
    Ok(ifft2_adjoint(&r).scaled(cfg.mri_weight))
}

/// Likelihood term of one channel, as consumed by the sampler.
pub trait ChannelFidelity {
    fn gradient(&self, x: &Image2D) -> Result<Image2D>;
    fn neg_loglik(&self, x: &Image2D) -> Result<f64>;
}

#[derive(Clone, Debug)]
pub struct PetFidelity {
    pub sinogram: Sinogram,
    pub cfg: FidelityConfig,
}

impl ChannelFidelity for PetFidelity {
    fn gradient(&self, x: &Image2D) -> Result<Image2D> {
        pet_grad(x, &self.sinogram, &self.cfg)
    }

    fn neg_loglik(&self, x: &Image2D) -> Result<f64> {
        pet_neg_loglik(x, &self.sinogram, &self.cfg)
    }
}

#[derive(Clone, Debug)]
pub struct MriFidelity {
    pub kspace: KSpaceData,
    pub cfg: FidelityConfig,
}

impl ChannelFidelity for MriFidelity {
    fn gradient(&self, x: &Image2D) -> Result<Image2D> {
        mri_grad(x, &self.kspace, &self.cfg)
    }

    fn neg_loglik(&self, x: &Image2D) -> Result<f64> {
        mri_neg_loglik(x, &self.kspace, &self.cfg)
    }
}

/// Direct pixel observation `y = x + N(0, noise_std^2)`.
#[derive(Clone, Debug)]
pub struct PixelGaussianFidelity {
    pub observed: Image2D,
    pub noise_std: f64,
}

impl ChannelFidelity for PixelGaussianFidelity {
    fn gradient(&self, x: &Image2D) -> Result<Image2D> {
        x.check_same_dims(&self.observed)?;
        let inv = 1.0 / (self.noise_std * self.noise_std);
        let mut g = x.clone();
        g.add_scaled(-1.0, &self.observed);
        Ok(g.scaled(inv))
    }

    fn neg_loglik(&self, x: &Image2D) -> Result<f64> {
        x.check_same_dims(&self.observed)?;
        let mut d = x.clone();
        d.add_scaled(-1.0, &self.observed);
        let n = d.norm() / self.noise_std;
        Ok(0.5 * n * n)
    }
}
