//! Paired ellipse phantoms with shared anatomy and different contrast.
//!
//! Both channels are sums of the same ellipse indicators. Ellipse `k` has MRI
//! intensity `a_k ~ U(0.2, 1)` and PET intensity
//! `(1 - j) (1.2 - a_k) + j u_k` with `u_k ~ U(0.2, 1)` and `j` the contrast
//! jitter, so PET is a contrast-inverted, partly independent relabeling of
//! the MRI regions. PET is then blurred. Both channels are divided by their
//! maximum, which keeps the zero background and maps into `[0, 1]`.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::types::{Image2D, ModalityPair};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub size: usize,
    pub n_ellipses: usize,
    pub seed: u64,
    /// Standard deviation in pixels of the PET blur.
    pub pet_smoothing: f64,
    /// Weight of the independent part of the PET intensities.
    pub contrast_jitter: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            size: 32,
            n_ellipses: 6,
            seed: 0,
            pet_smoothing: 1.0,
            contrast_jitter: 0.3,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::InvalidConfig("phantom size must be at least 16".into()));
        }
        if self.n_ellipses == 0 {
            return Err(Error::InvalidConfig("phantom needs at least one ellipse".into()));
        }
        if !(self.pet_smoothing >= 0.0) || !self.pet_smoothing.is_finite() {
            return Err(Error::InvalidConfig("pet_smoothing must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.contrast_jitter) {
            return Err(Error::InvalidConfig("contrast_jitter must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        u * u + v * v <= 1.0
    }
}

fn draw_ellipses<R: Rng>(spec: &PhantomSpec, rng: &mut R) -> Vec<Ellipse> {
    let n = spec.size as f64;
    let c = (n - 1.0) / 2.0;
    let mut out = Vec::with_capacity(spec.n_ellipses);
    let angle = |rng: &mut R| rng.random_range(0.0..core::f64::consts::PI);
    let t = angle(rng);
    let body = Ellipse {
        cx: c + rng.random_range(-0.03..0.03) * n,
        cy: c + rng.random_range(-0.03..0.03) * n,
        a: rng.random_range(0.36..0.44) * n,
        b: rng.random_range(0.30..0.40) * n,
        cos: t.cos(),
        sin: t.sin(),
    };
    out.push(body);
    let min_gap = 0.12 * n;
    while out.len() < spec.n_ellipses {
        let mut candidate = None;
        // rejection sampling on the center; the last draw is kept if no
        // well-separated center turns up
        for _ in 0..64 {
            let r = rng.random_range(0.0..0.6f64).sqrt() * body.b;
            let phi = rng.random_range(0.0..core::f64::consts::TAU);
            let (cx, cy) = (body.cx + r * phi.cos(), body.cy + r * phi.sin());
            let t = angle(rng);
            let e = Ellipse {
                cx,
                cy,
                a: rng.random_range(0.06..0.18) * n,
                b: rng.random_range(0.05..0.12) * n,
                cos: t.cos(),
                sin: t.sin(),
            };
            let apart = out[1..]
                .iter()
                .all(|o| ((o.cx - cx).powi(2) + (o.cy - cy).powi(2)).sqrt() >= min_gap);
            candidate = Some(e);
            if apart {
                break;
            }
        }
        out.push(candidate.expect("at least one draw"));
    }
    out
}

fn gaussian_blur(img: &Image2D, std: f64) -> Image2D {
    if std == 0.0 {
        return img.clone();
    }
    let radius = (3.0 * std).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * std * std)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.into_iter().map(|v| v / total).collect();
    let (w, h) = img.dims();
    let pass = |src: &Image2D, horizontal: bool| {
        Image2D::from_fn(w, h, |x, y| {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let d = k as isize - radius;
                let (sx, sy) = if horizontal {
                    (x as isize + d, y as isize)
                } else {
                    (x as isize, y as isize + d)
                };
                if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                    acc += kv * src.get(sx as usize, sy as usize);
                }
            }
            acc
        })
    };
    pass(&pass(img, true), false)
}

fn normalize(img: Image2D) -> Image2D {
    let max = img.max();
    if max > 0.0 {
        img.map(|v| v / max)
    } else {
        img
    }
}

pub fn gen_pair(spec: &PhantomSpec) -> Result<ModalityPair> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, streams::PHANTOM);
    let ellipses = draw_ellipses(spec, &mut rng);
    let j = spec.contrast_jitter;
    let intensities: Vec<(f64, f64)> = ellipses
        .iter()
        .map(|_| {
            let a: f64 = rng.random_range(0.2..1.0);
            let u: f64 = rng.random_range(0.2..1.0);
            (a, (1.0 - j) * (1.2 - a) + j * u)
        })
        .collect();
    let n = spec.size;
    let mut mri = Image2D::zeros(n, n);
    let mut pet = Image2D::zeros(n, n);
    for y in 0..n {
        for x in 0..n {
            let (mut m, mut p) = (0.0, 0.0);
            for (e, &(a, b)) in ellipses.iter().zip(&intensities) {
                if e.contains(x as f64, y as f64) {
                    m += a;
                    p += b;
                }
            }
            mri.set(x, y, m);
            pet.set(x, y, p);
        }
    }
    let pet = gaussian_blur(&pet, spec.pet_smoothing);
    ModalityPair::new(normalize(pet), normalize(mri))
}
