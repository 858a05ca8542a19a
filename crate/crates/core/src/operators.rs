//! Forward operators and adjoints.
//!
//! PET: parallel-beam Radon transform. Every pixel center is projected onto
//! the detector axis and its value is split linearly between the two
//! neighbouring bins, so the transform conserves mass and its adjoint is the
//! same weights read in the other direction. Filtered backprojection applies a
//! Ram-Lak ramp in the detector frequency domain before backprojecting.
//!
//! MRI: unitary 2-D DFT with the DC bin moved to `(height / 2, width / 2)`,
//! row masks for Cartesian undersampling, and the real part of the inverse
//! transform as the adjoint onto real images.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::rng::{self, streams};
use crate::types::{Image2D, KSpaceData, SamplingMask, Sinogram};

/// Parallel-beam acquisition geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadonGeometry {
    n_detectors: usize,
    angles: Vec<f64>,
    detector_spacing: f64,
}

impl RadonGeometry {
    /// `n_angles` uniform angles on `[0, pi)` with unit detector spacing.
    pub fn new(n_detectors: usize, n_angles: usize) -> Result<Self> {
        Self::with_spacing(n_detectors, n_angles, 1.0)
    }

    pub fn with_spacing(n_detectors: usize, n_angles: usize, detector_spacing: f64) -> Result<Self> {
        if n_detectors == 0 || n_angles == 0 || !(detector_spacing > 0.0) {
            return Err(Error::GeometryMismatch(
                "geometry needs detectors, angles and a positive spacing".into(),
            ));
        }
        let angles = (0..n_angles)
            .map(|a| PI * a as f64 / n_angles as f64)
            .collect();
        Ok(Self {
            n_detectors,
            angles,
            detector_spacing,
        })
    }

    /// Smallest unit-spacing geometry covering a `size x size` image, with the
    /// detector count of the same parity as `size` so that the central bin sits
    /// on the image center.
    pub fn for_image(size: usize, n_angles: usize) -> Result<Self> {
        let needed = ((size as f64) * SQRT_2).ceil() as usize;
        let n = if needed % 2 == size % 2 { needed } else { needed + 1 };
        Self::new(n, n_angles)
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn n_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn detector_spacing(&self) -> f64 {
        self.detector_spacing
    }

    /// True when every pixel of a `size x size` image projects inside the
    /// detector for every angle in `[0, pi)`.
    pub fn covers(&self, size: usize) -> bool {
        (self.n_detectors as f64) * self.detector_spacing >= size as f64 * SQRT_2
    }

    fn check_image(&self, img: &Image2D) -> Result<usize> {
        if img.width() != img.height() {
            return Err(Error::NonSquareImage {
                width: img.width(),
                height: img.height(),
            });
        }
        if !self.covers(img.width()) {
            return Err(Error::GeometryMismatch(alloc::format!(
                "{} detectors of spacing {} do not cover a {}x{} image",
                self.n_detectors,
                self.detector_spacing,
                img.width(),
                img.height()
            )));
        }
        Ok(img.width())
    }

    fn check_sinogram(&self, sino: &Sinogram) -> Result<()> {
        if sino.n_detectors() != self.n_detectors || sino.n_angles() != self.n_angles() {
            return Err(Error::GeometryMismatch(alloc::format!(
                "sinogram {}x{} does not match geometry {}x{}",
                sino.n_detectors(),
                sino.n_angles(),
                self.n_detectors,
                self.n_angles()
            )));
        }
        Ok(())
    }

    /// Calls `f(pixel, angle, bin, weight)` for every nonzero interpolation weight.
    fn for_each_weight(&self, size: usize, mut f: impl FnMut(usize, usize, usize, f64)) {
        let c = (size as f64 - 1.0) / 2.0;
        let dc = (self.n_detectors as f64 - 1.0) / 2.0;
        let inv = 1.0 / self.detector_spacing;
        let last = self.n_detectors as isize - 1;
        for (a, &theta) in self.angles.iter().enumerate() {
            let (sin, cos) = theta.sin_cos();
            for y in 0..size {
                let ty = (y as f64 - c) * sin;
                for x in 0..size {
                    let t = ((x as f64 - c) * cos + ty) * inv + dc;
                    let lo = t.floor();
                    let frac = t - lo;
                    let lo = lo as isize;
                    let pixel = y * size + x;
                    if (0..=last).contains(&lo) {
                        f(pixel, a, lo as usize, (1.0 - frac) * inv);
                    }
                    if frac > 0.0 && (0..=last).contains(&(lo + 1)) {
                        f(pixel, a, (lo + 1) as usize, frac * inv);
                    }
                }
            }
        }
    }
}

/// Line integrals of `img` for every (detector, angle) of `geom`.
pub fn radon_forward(img: &Image2D, geom: &RadonGeometry) -> Result<Sinogram> {
    let size = geom.check_image(img)?;
    let nd = geom.n_detectors;
    let mut out = Sinogram::zeros(nd, geom.n_angles());
    let src = img.values();
    let dst = out.values_mut();
    geom.for_each_weight(size, |pixel, angle, bin, w| {
        dst[angle * nd + bin] += w * src[pixel];
    });
    Ok(out)
}

/// Exact adjoint of [`radon_forward`] onto a `size x size` image.
pub fn radon_adjoint(sino: &Sinogram, geom: &RadonGeometry, size: usize) -> Result<Image2D> {
    geom.check_sinogram(sino)?;
    let mut out = Image2D::zeros(size, size);
    geom.check_image(&out)?;
    let nd = geom.n_detectors;
    let src = sino.values();
    let dst = out.values_mut();
    geom.for_each_weight(size, |pixel, angle, bin, w| {
        dst[pixel] += w * src[angle * nd + bin];
    });
    Ok(out)
}

/// Ram-Lak filtered backprojection onto a `size x size` image.
pub fn fbp(sino: &Sinogram, geom: &RadonGeometry, size: usize) -> Result<Image2D> {
    geom.check_sinogram(sino)?;
    let filtered = ramp_filter(sino, geom.detector_spacing);
    let mut img = radon_adjoint(&filtered, geom, size)?;
    let scale = PI / geom.n_angles() as f64 * geom.detector_spacing;
    for v in img.values_mut() {
        *v *= scale;
    }
    Ok(img)
}

/// Convolves every projection with the band-limited ramp kernel
/// `h[0] = 1/4, h[odd k] = -1/(pi k)^2`, via zero-padded FFTs.
fn ramp_filter(sino: &Sinogram, spacing: f64) -> Sinogram {
    let nd = sino.n_detectors();
    let padded = (2 * nd).next_power_of_two();
    let mut kernel = vec![Complex64::new(0.0, 0.0); padded];
    kernel[0].re = 0.25;
    for k in (1..nd).step_by(2) {
        let h = -1.0 / (PI * k as f64).powi(2);
        kernel[k].re = h;
        kernel[padded - k].re = h;
    }
    fft::transform(&mut kernel, false);

    let mut out = Sinogram::zeros(nd, sino.n_angles());
    let mut buf = vec![Complex64::new(0.0, 0.0); padded];
    let norm = 1.0 / (padded as f64 * spacing);
    for a in 0..sino.n_angles() {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (b, &p) in buf.iter_mut().zip(sino.projection(a)) {
            b.re = p;
        }
        fft::transform(&mut buf, false);
        for (b, k) in buf.iter_mut().zip(&kernel) {
            *b *= k;
        }
        fft::transform(&mut buf, true);
        let row = &mut out.values_mut()[a * nd..(a + 1) * nd];
        for (o, b) in row.iter_mut().zip(&buf) {
            *o = b.re * norm;
        }
    }
    out
}

fn centered_to_natural(k: usize, n: usize) -> usize {
    (k + n - n / 2) % n
}

/// Unitary DFT of a real image, centered (DC at `(height / 2, width / 2)`), unmasked.
pub fn fft2_forward(img: &Image2D) -> KSpaceData {
    let (w, h) = img.dims();
    let mut data: Vec<Complex64> = img
        .values()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    fft::transform_2d(&mut data, w, h, false);
    let mut centered = vec![Complex64::new(0.0, 0.0); w * h];
    for ky in 0..h {
        let ny = centered_to_natural(ky, h);
        for kx in 0..w {
            let nx = centered_to_natural(kx, w);
            centered[ky * w + kx] = data[ny * w + nx];
        }
    }
    KSpaceData::from_parts_unchecked(w, h, centered, None)
}

/// Real part of the unitary inverse DFT (the adjoint of [`fft2_forward`] on real images).
pub fn ifft2_adjoint(ks: &KSpaceData) -> Image2D {
    let (w, h) = ks.dims();
    let mut data = vec![Complex64::new(0.0, 0.0); w * h];
    let src = ks.values();
    for ky in 0..h {
        let ny = centered_to_natural(ky, h);
        for kx in 0..w {
            let nx = centered_to_natural(kx, w);
            data[ny * w + nx] = src[ky * w + kx];
        }
    }
    fft::transform_2d(&mut data, w, h, true);
    Image2D::from_fn(w, h, |x, y| data[y * w + x].re)
}

/// Zeroes every row outside `mask.lines`.
pub fn apply_mask(ks: &KSpaceData, mask: &SamplingMask) -> Result<KSpaceData> {
    if ks.dims() != mask.dims() {
        return Err(Error::DimensionMismatch {
            expected: ks.dims(),
            found: mask.dims(),
        });
    }
    let w = ks.width();
    let flags = mask.row_flags();
    let mut values = ks.values().to_vec();
    for (row, keep) in values.chunks_exact_mut(w).zip(&flags) {
        if !keep {
            row.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        }
    }
    Ok(KSpaceData::from_parts_unchecked(
        w,
        ks.height(),
        values,
        Some(mask.clone()),
    ))
}

/// Elementwise `a - b` on k-space grids of equal size. The result keeps `a`'s mask.
pub(crate) fn kspace_sub(a: &KSpaceData, b: &KSpaceData) -> Result<KSpaceData> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            found: b.dims(),
        });
    }
    let values = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| x - y)
        .collect();
    Ok(KSpaceData::from_parts_unchecked(
        a.width(),
        a.height(),
        values,
        a.mask().cloned(),
    ))
}

/// Band of `ceil(center_fraction * height)` rows around `height / 2`.
pub fn center_band(height: usize, center_fraction: f64) -> core::ops::Range<usize> {
    // the small offset keeps exact products such as 0.25 * 32 from rounding up
    let band = ((center_fraction * height as f64) - 1e-9).ceil().max(0.0) as usize;
    let band = band.min(height);
    let start = (height / 2).saturating_sub(band / 2).min(height - band);
    start..start + band
}

/// Cartesian row mask: the center band plus uniformly drawn extra rows, for
/// `round(height / acceleration)` rows in total.
pub fn make_cartesian_mask(
    width: usize,
    height: usize,
    acceleration: f64,
    center_fraction: f64,
    seed: u64,
) -> Result<SamplingMask> {
    if !(acceleration >= 1.0) || !acceleration.is_finite() {
        return Err(Error::InvalidConfig("acceleration must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&center_fraction) {
        return Err(Error::InvalidConfig("center fraction must lie in [0, 1]".into()));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidConfig("mask dimensions must be positive".into()));
    }
    let total = ((height as f64) / acceleration).round() as usize;
    let band = center_band(height, center_fraction);
    if total < band.len() {
        return Err(Error::InfeasibleMask {
            lines: total,
            band: band.len(),
        });
    }
    let mut lines: Vec<usize> = band.clone().collect();
    let outside: Vec<usize> = (0..height).filter(|r| !band.contains(r)).collect();
    let mut rng = rng::stream(seed, streams::MASK);
    let extra = total - band.len();
    lines.extend(
        index::sample(&mut rng, outside.len(), extra)
            .into_iter()
            .map(|i| outside[i]),
    );
    SamplingMask::from_lines(width, height, lines, acceleration, center_fraction)
}
