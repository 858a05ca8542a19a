//! Shared value types: images, the stacked PET/MRI unknown, measurements,
//! sampling masks and the configuration records consumed by the sampler.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major real image. `values[y * width + x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Image2D {
    /// Builds an image, rejecting empty grids, wrong lengths and non-finite entries.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                found: (values.len(), 1),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    /// Builds an image from `f(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to the pixels. Callers that may produce NaN/Inf should
    /// check [`Image2D::first_non_finite`] afterwards.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.values[y * self.width + x] = value;
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Image2D) -> f64 {
        debug_assert_eq!(self.dims(), other.dims());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, scale: f64, other: &Image2D) {
        debug_assert_eq!(self.dims(), other.dims());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn scaled(&self, scale: f64) -> Image2D {
        self.map(|v| v * scale)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image2D {
        Image2D {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn check_same_dims(&self, other: &Image2D) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }
}

/// Which channel of the stacked unknown an image belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Pet,
    Mri,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Pet => "pet",
            Modality::Mri => "mri",
        }
    }

    /// Channel position in the stacked pair.
    pub fn index(self) -> usize {
        match self {
            Modality::Pet => 0,
            Modality::Mri => 1,
        }
    }
}

/// The stacked unknown: PET activity and MRI magnitude on a common grid.
///
/// Fields are public so that callers can assemble pairs freely;
/// [`validate_pair`] enforces the invariants.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityPair {
    pub pet: Image2D,
    pub mri: Image2D,
}

impl ModalityPair {
    pub fn new(pet: Image2D, mri: Image2D) -> Result<Self> {
        validate_pair(Self { pet, mri })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pet.dims()
    }

    pub fn get(&self, modality: Modality) -> &Image2D {
        match modality {
            Modality::Pet => &self.pet,
            Modality::Mri => &self.mri,
        }
    }

    /// Channels in stacking order (PET first).
    pub fn to_channels(&self) -> Vec<Image2D> {
        vec![self.pet.clone(), self.mri.clone()]
    }

    pub fn from_channels(mut channels: Vec<Image2D>) -> Result<Self> {
        if channels.len() != 2 {
            return Err(Error::ChannelMismatch {
                expected: 2,
                found: channels.len(),
            });
        }
        let mri = channels.pop().expect("two channels");
        let pet = channels.pop().expect("two channels");
        Self::new(pet, mri)
    }
}

/// Returns the pair unchanged if both channels share a grid and are finite.
pub fn validate_pair(pair: ModalityPair) -> Result<ModalityPair> {
    pair.pet.check_same_dims(&pair.mri)?;
    if let Some(index) = pair.pet.first_non_finite() {
        return Err(Error::NonFiniteValue { index });
    }
    if let Some(index) = pair.mri.first_non_finite() {
        return Err(Error::NonFiniteValue {
            index: pair.pet.len() + index,
        });
    }
    Ok(pair)
}

/// Radon-domain data. Each projection is contiguous:
/// `values[angle * n_detectors + detector]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    n_detectors: usize,
    n_angles: usize,
    values: Vec<f64>,
}

impl Sinogram {
    pub fn new(n_detectors: usize, n_angles: usize, values: Vec<f64>) -> Result<Self> {
        if n_detectors == 0 || n_angles == 0 || values.len() != n_detectors * n_angles {
            return Err(Error::DimensionMismatch {
                expected: (n_detectors, n_angles),
                found: (values.len(), 1),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(Self {
            n_detectors,
            n_angles,
            values,
        })
    }

    pub fn zeros(n_detectors: usize, n_angles: usize) -> Self {
        Self {
            n_detectors,
            n_angles,
            values: vec![0.0; n_detectors * n_angles],
        }
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn n_angles(&self) -> usize {
        self.n_angles
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn projection(&self, angle: usize) -> &[f64] {
        &self.values[angle * self.n_detectors..(angle + 1) * self.n_detectors]
    }

    pub fn get(&self, detector: usize, angle: usize) -> f64 {
        self.values[angle * self.n_detectors + detector]
    }

    pub fn dot(&self, other: &Sinogram) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Set of fully sampled phase-encode rows (Cartesian undersampling).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingMask {
    width: usize,
    height: usize,
    lines: Vec<usize>,
    acceleration: f64,
    center_fraction: f64,
}

impl SamplingMask {
    /// Builds a mask from explicit row indices (sorted and deduplicated here).
    pub fn from_lines(
        width: usize,
        height: usize,
        mut lines: Vec<usize>,
        acceleration: f64,
        center_fraction: f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DimensionMismatch {
                expected: (1, 1),
                found: (width, height),
            });
        }
        lines.sort_unstable();
        lines.dedup();
        if lines.iter().any(|&l| l >= height) {
            return Err(Error::InvalidConfig("mask line outside the grid".into()));
        }
        if !(acceleration >= 1.0) || !(0.0..=1.0).contains(&center_fraction) {
            return Err(Error::InvalidConfig(
                "mask needs acceleration >= 1 and center fraction in [0, 1]".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            lines,
            acceleration,
            center_fraction,
        })
    }

    /// Every row sampled (R = 1).
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            lines: (0..height).collect(),
            acceleration: 1.0,
            center_fraction: 1.0,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn lines(&self) -> &[usize] {
        &self.lines
    }

    pub fn acceleration(&self) -> f64 {
        self.acceleration
    }

    pub fn center_fraction(&self) -> f64 {
        self.center_fraction
    }

    pub fn contains(&self, row: usize) -> bool {
        self.lines.binary_search(&row).is_ok()
    }

    /// One flag per row.
    pub fn row_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.height];
        for &l in &self.lines {
            flags[l] = true;
        }
        flags
    }
}

/// Centered (DC at `(height / 2, width / 2)`) complex k-space samples.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceData {
    width: usize,
    height: usize,
    values: Vec<Complex64>,
    mask: Option<SamplingMask>,
}

impl KSpaceData {
    /// Builds k-space data. With a mask, excluded rows must be exactly zero.
    pub fn new(
        width: usize,
        height: usize,
        values: Vec<Complex64>,
        mask: Option<SamplingMask>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                found: (values.len(), 1),
            });
        }
        if let Some(index) = values
            .iter()
            .position(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(Error::NonFiniteValue { index });
        }
        if let Some(mask) = &mask {
            if mask.dims() != (width, height) {
                return Err(Error::DimensionMismatch {
                    expected: (width, height),
                    found: mask.dims(),
                });
            }
            let flags = mask.row_flags();
            for (row, sampled) in flags.iter().enumerate() {
                if !sampled
                    && values[row * width..(row + 1) * width]
                        .iter()
                        .any(|c| c.re != 0.0 || c.im != 0.0)
                {
                    return Err(Error::InvalidConfig(
                        "k-space entry outside the mask is nonzero".into(),
                    ));
                }
            }
        }
        Ok(Self {
            width,
            height,
            values,
            mask,
        })
    }

    pub(crate) fn from_parts_unchecked(
        width: usize,
        height: usize,
        values: Vec<Complex64>,
        mask: Option<SamplingMask>,
    ) -> Self {
        Self {
            width,
            height,
            values,
            mask,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn mask(&self) -> Option<&SamplingMask> {
        self.mask.as_ref()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Real inner product `Re <self, other>`.
    pub fn dot_re(&self, other: &KSpaceData) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a.conj() * b).re)
            .sum()
    }
}

/// Geometric noise ladder `sigma_0 = sigma_min < ... < sigma_{N-1} = sigma_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub n_steps: usize,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            sigma_min: 0.1,
            sigma_max: 348.0,
            n_steps: 1000,
        }
    }
}

impl NoiseSchedule {
    pub fn new(sigma_min: f64, sigma_max: f64, n_steps: usize) -> Result<Self> {
        let sched = Self {
            sigma_min,
            sigma_max,
            n_steps,
        };
        sched.validate()?;
        Ok(sched)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0) || !(self.sigma_max > self.sigma_min) || !self.sigma_max.is_finite() {
            return Err(Error::InvalidConfig(
                "noise schedule needs 0 < sigma_min < sigma_max".into(),
            ));
        }
        if self.n_steps < 2 {
            return Err(Error::InvalidConfig("noise schedule needs at least 2 levels".into()));
        }
        Ok(())
    }

    /// `sigma_min * (sigma_max / sigma_min)^(i / (N - 1))`, exact at both ends.
    pub fn sigma(&self, i: usize) -> Result<f64> {
        let n = self.n_steps;
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, len: n });
        }
        Ok(if i == 0 {
            self.sigma_min
        } else if i == n - 1 {
            self.sigma_max
        } else {
            let ratio = self.sigma_max / self.sigma_min;
            self.sigma_min * ratio.powf(i as f64 / (n - 1) as f64)
        })
    }

    /// Variance added on top of clean data at level `i`: `sigma_i^2 - sigma_0^2`.
    pub fn perturbation_variance(&self, i: usize) -> Result<f64> {
        let s = self.sigma(i)?;
        Ok(s * s - self.sigma_min * self.sigma_min)
    }
}

/// Per-modality knobs of the predictor-corrector loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    /// Predictor fidelity scale.
    pub lambda: f64,
    /// Corrector step-size scale.
    pub alpha: f64,
    /// Corrector fidelity scale.
    pub beta: f64,
    /// Corrector signal-to-noise ratio.
    pub snr: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            alpha: 1.0,
            beta: 1.0,
            snr: 0.16,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub corrector_steps: usize,
    pub pet: ChannelParams,
    pub mri: ChannelParams,
    /// Clamp the PET channel at zero after every update.
    pub nonneg_pet: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_steps: 1000,
            corrector_steps: 1,
            pet: ChannelParams::default(),
            mri: ChannelParams::default(),
            nonneg_pet: false,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn channel(&self, modality: Modality) -> &ChannelParams {
        match modality {
            Modality::Pet => &self.pet,
            Modality::Mri => &self.mri,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in [&self.pet, &self.mri] {
            let ok = [p.lambda, p.alpha, p.beta, p.snr]
                .iter()
                .all(|v| v.is_finite() && *v >= 0.0);
            if !ok {
                return Err(Error::InvalidConfig(
                    "sampler scales must be finite and nonnegative".into(),
                ));
            }
        }
        Ok(())
    }
}
