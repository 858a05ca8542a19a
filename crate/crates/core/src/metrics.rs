//! Image quality metrics and mean/std aggregation.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Image2D;

fn check_dims(x: &Image2D, reference: &Image2D) -> Result<()> {
    if x.dims() != reference.dims() {
        return Err(Error::DimensionMismatch {
            expected: reference.dims(),
            found: x.dims(),
        });
    }
    Ok(())
}

/// `20 log10(peak / sqrt(mse))` with `peak = max(ref) - min(ref)`.
/// Returns `f64::INFINITY` when `x == ref` exactly.
pub fn psnr(x: &Image2D, reference: &Image2D) -> Result<f64> {
    check_dims(x, reference)?;
    let sse: f64 = x
        .values()
        .iter()
        .zip(reference.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = reference.max() - reference.min();
    if peak == 0.0 {
        return Err(Error::ZeroReference);
    }
    let mse = sse / x.len() as f64;
    Ok(20.0 * (peak / mse.sqrt()).log10())
}

/// `||x - ref||^2 / ||ref||^2`.
pub fn nmse(x: &Image2D, reference: &Image2D) -> Result<f64> {
    check_dims(x, reference)?;
    let den: f64 = reference.values().iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    let num: f64 = x
        .values()
        .iter()
        .zip(reference.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(num / den)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    /// Side of the square Gaussian window.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Fixed dynamic range `L`; `None` takes `max - min` of the reference,
    /// falling back to 1 for a constant reference.
    pub dynamic_range: Option<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: None,
        }
    }
}

impl SsimParams {
    /// Normalized separable window profile; the 2-D window is its outer product.
    pub fn profile(&self) -> Vec<f64> {
        let c = (self.window as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - c;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }
}

/// Mean SSIM over every window position fully inside the image.
pub fn ssim(x: &Image2D, reference: &Image2D, p: &SsimParams) -> Result<f64> {
    check_dims(x, reference)?;
    let (w, h) = x.dims();
    if w < p.window || h < p.window || p.window == 0 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            window: p.window,
        });
    }
    let range = p.dynamic_range.unwrap_or_else(|| {
        let r = reference.max() - reference.min();
        if r > 0.0 {
            r
        } else {
            1.0
        }
    });
    let c1 = (p.k1 * range) * (p.k1 * range);
    let c2 = (p.k2 * range) * (p.k2 * range);
    let g = p.profile();
    let (xv, yv) = (x.values(), reference.values());
    let (ow, oh) = (w - p.window + 1, h - p.window + 1);
    let mut total = 0.0;
    for oy in 0..oh {
        for ox in 0..ow {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (dy, &gy) in g.iter().enumerate() {
                let row = (oy + dy) * w + ox;
                for (dx, &gx) in g.iter().enumerate() {
                    let wt = gy * gx;
                    let a = xv[row + dx];
                    let b = yv[row + dx];
                    mx += wt * a;
                    my += wt * b;
                    sxx += wt * a * a;
                    syy += wt * b * b;
                    sxy += wt * a * b;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (ow * oh) as f64)
}

/// Mean and population standard deviation, displayed as `m±s` to 4 decimals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4}±{:.4}", self.mean, self.std)
    }
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::EmptyList);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(Aggregate {
        mean,
        std: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, normal_image};
    use alloc::string::ToString;

    fn image(seed: u64, size: usize) -> Image2D {
        normal_image(&mut rng::stream(seed, 0), size, size)
    }

    #[test]
    fn psnr_identities() {
        let r = image(1, 8);
        assert_eq!(psnr(&r, &r).unwrap(), f64::INFINITY);
        let unit = Image2D::from_fn(4, 4, |x, _| x as f64 / 3.0);
        let shifted = unit.map(|v| v + 0.1);
        assert!((psnr(&shifted, &unit).unwrap() - 20.0).abs() < 1e-12);
        assert!(matches!(
            psnr(&r, &image(2, 7)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn psnr_matches_scalar_loop() {
        let (a, b) = (image(3, 9), image(4, 9));
        let (mut lo, mut hi, mut sse) = (f64::MAX, f64::MIN, 0.0);
        for i in 0..81 {
            lo = lo.min(b.values()[i]);
            hi = hi.max(b.values()[i]);
            sse += (a.values()[i] - b.values()[i]).powi(2);
        }
        let expected = 10.0 * ((hi - lo) * (hi - lo) / (sse / 81.0)).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn nmse_identities() {
        let r = image(5, 6);
        assert_eq!(nmse(&r, &r).unwrap(), 0.0);
        assert_eq!(nmse(&Image2D::zeros(6, 6), &r).unwrap(), 1.0);
        assert!((nmse(&r.scaled(2.0), &r).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(nmse(&r, &Image2D::zeros(6, 6)), Err(Error::ZeroReference));
    }

    #[test]
    fn ssim_identities() {
        let p = SsimParams::default();
        let r = image(6, 16);
        assert_eq!(ssim(&r, &r, &p).unwrap(), 1.0);
        // odd about the window center, so every weighted mean is zero
        let patch = Image2D::from_fn(11, 11, |x, y| x as f64 - 5.0 + 0.5 * (y as f64 - 5.0));
        assert!(ssim(&patch.scaled(-1.0), &patch, &p).unwrap() < 0.0);
        assert!(matches!(
            ssim(&image(1, 10), &image(2, 10), &p),
            Err(Error::ImageTooSmall { window: 11, .. })
        ));
    }

    #[test]
    fn ssim_window_sums_to_one() {
        let g = SsimParams::default().profile();
        let total: f64 = g.iter().flat_map(|a| g.iter().map(move |b| a * b)).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn ssim_matches_direct_two_dimensional_window() {
        let p = SsimParams::default();
        let (a, b) = (image(7, 14), image(8, 14).map(|v| 0.3 * v));
        let range = b.max() - b.min();
        let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
        let mut wts = [[0.0; 11]; 11];
        let mut total_w = 0.0;
        for (i, row) in wts.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let d2 = (i as f64 - 5.0).powi(2) + (j as f64 - 5.0).powi(2);
                *v = (-d2 / 4.5).exp();
                total_w += *v;
            }
        }
        let mut acc = 0.0;
        for oy in 0..4 {
            for ox in 0..4 {
                let at = |img: &Image2D, i: usize, j: usize| img.get(ox + j, oy + i);
                let mut m = [0.0; 2];
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = wts[i][j] / total_w;
                        m[0] += wt * at(&a, i, j);
                        m[1] += wt * at(&b, i, j);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = wts[i][j] / total_w;
                        let (da, db) = (at(&a, i, j) - m[0], at(&b, i, j) - m[1]);
                        va += wt * da * da;
                        vb += wt * db * db;
                        cov += wt * da * db;
                    }
                }
                acc += (2.0 * m[0] * m[1] + c1) * (2.0 * cov + c2)
                    / ((m[0] * m[0] + m[1] * m[1] + c1) * (va + vb + c2));
            }
        }
        let expected = acc / 16.0;
        assert!((ssim(&a, &b, &p).unwrap() - expected).abs() < 1e-6);
    }

    #[test]
    fn ssim_is_symmetric_with_fixed_range() {
        let p = SsimParams {
            dynamic_range: Some(2.0),
            ..SsimParams::default()
        };
        let (a, b) = (image(9, 12), image(10, 12));
        assert!((ssim(&a, &b, &p).unwrap() - ssim(&b, &a, &p).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn aggregate_formatting() {
        let cell = aggregate(&[38.4944 - 5.8396, 38.4944 + 5.8396]).unwrap();
        assert_eq!(cell.to_string(), "38.4944±5.8396");
        assert_eq!(aggregate(&[1.25]).unwrap().to_string(), "1.2500±0.0000");
        assert_eq!(aggregate(&[1.0, 2.0, 3.0]).unwrap().to_string(), "2.0000±0.8165");
        assert_eq!(aggregate(&[]), Err(Error::EmptyList));
    }
}
