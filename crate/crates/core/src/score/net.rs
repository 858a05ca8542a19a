//! Three-layer convolutional score network with exact reverse-mode gradients.
//!
//! Architecture: conv3x3 (C+1 -> h), ReLU, conv3x3 (h -> h), ReLU,
//! conv3x3 (h -> C). The extra input channel is filled with `log sigma_i`.
//! Image channels enter scaled by `1 / sqrt(1 + sigma_i^2)` so the input
//! stays O(1) across the whole noise ladder. The raw output approximates
//! `-(x_hat - x) / sigma_i`; the score is the raw output divided by `sigma_i`.
//!
//! Parameters live in one flat vector in the order
//! `w1, b1, w2, b2, w3, b3`, weights indexed `[out][in][ky][kx]`.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{check_channels, draw_dsm, Channels, DsmDraw, ScoreModel};
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::types::{Image2D, NoiseSchedule};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvScoreNet<T = f32> {
    channels: usize,
    hidden: usize,
    sched: NoiseSchedule,
    params: Vec<T>,
}

#[derive(Clone, Copy)]
struct Layout {
    cin: usize,
    hidden: usize,
    cout: usize,
}

impl Layout {
    fn new(channels: usize, hidden: usize) -> Self {
        Self {
            cin: channels + 1,
            hidden,
            cout: channels,
        }
    }

    fn sizes(&self) -> [usize; 6] {
        let h = self.hidden;
        [self.cin * h * 9, h, h * h * 9, h, h * self.cout * 9, self.cout]
    }

    fn total(&self) -> usize {
        self.sizes().iter().sum()
    }
}

/// Splits a flat parameter vector into `[w1, b1, w2, b2, w3, b3]`.
fn split<T>(params: &[T], layout: Layout) -> [&[T]; 6] {
    let s = layout.sizes();
    let (w1, rest) = params.split_at(s[0]);
    let (b1, rest) = rest.split_at(s[1]);
    let (w2, rest) = rest.split_at(s[2]);
    let (b2, rest) = rest.split_at(s[3]);
    let (w3, b3) = rest.split_at(s[4]);
    [w1, b1, w2, b2, w3, b3]
}

fn split_mut<T>(params: &mut [T], layout: Layout) -> [&mut [T]; 6] {
    let s = layout.sizes();
    let (w1, rest) = params.split_at_mut(s[0]);
    let (b1, rest) = rest.split_at_mut(s[1]);
    let (w2, rest) = rest.split_at_mut(s[2]);
    let (b2, rest) = rest.split_at_mut(s[3]);
    let (w3, b3) = rest.split_at_mut(s[4]);
    [w1, b1, w2, b2, w3, b3]
}

fn cast<T: Float>(v: f64) -> T {
    T::from(v).expect("f64 converts to any float type")
}

/// Valid output range along one axis for kernel offset `k` in `0..3`.
#[inline]
fn tap_range(k: usize, n: usize) -> (usize, usize) {
    let lo = usize::from(k == 0);
    let hi = if k == 2 { n.saturating_sub(1) } else { n };
    (lo, hi.max(lo))
}

/// Unrolls 3x3 zero-padded neighborhoods: row `c * 9 + ky * 3 + kx` of `col`
/// holds input plane `c` shifted by `(kx - 1, ky - 1)`.
fn im2col<T: Float>(input: &[T], cin: usize, w: usize, h: usize, col: &mut Vec<T>) {
    let plane = w * h;
    col.clear();
    col.resize(cin * 9 * plane, T::zero());
    for c in 0..cin {
        let src = &input[c * plane..(c + 1) * plane];
        for ky in 0..3 {
            let (y0, y1) = tap_range(ky, h);
            for kx in 0..3 {
                let (x0, x1) = tap_range(kx, w);
                let dst = &mut col[(c * 9 + ky * 3 + kx) * plane..][..plane];
                for y in y0..y1 {
                    let s = &src[(y + ky - 1) * w + x0 + kx - 1..][..x1 - x0];
                    dst[y * w + x0..y * w + x1].copy_from_slice(s);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im_add<T: Float>(col: &[T], cin: usize, w: usize, h: usize, dinput: &mut [T]) {
    let plane = w * h;
    for c in 0..cin {
        for ky in 0..3 {
            let (y0, y1) = tap_range(ky, h);
            for kx in 0..3 {
                let (x0, x1) = tap_range(kx, w);
                let src = &col[(c * 9 + ky * 3 + kx) * plane..][..plane];
                for y in y0..y1 {
                    let off = c * plane + (y + ky - 1) * w + x0 + kx - 1;
                    let d = &mut dinput[off..off + x1 - x0];
                    for (d, &s) in d.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy<T: Float>(a: T, x: &[T], y: &mut [T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y = *y + a * x;
    }
}

/// `y += a[0] x[0] + a[1] x[1] + a[2] x[2] + a[3] x[3]` in one pass over `y`.
#[inline]
fn axpy4<T: Float>(a: [T; 4], x: [&[T]; 4], y: &mut [T]) {
    let n = y.len();
    let (x0, x1, x2, x3) = (&x[0][..n], &x[1][..n], &x[2][..n], &x[3][..n]);
    for i in 0..n {
        y[i] = y[i] + a[0] * x0[i] + a[1] * x1[i] + a[2] * x2[i] + a[3] * x3[i];
    }
}

/// Dot product with eight interleaved partial sums so the loop vectorizes.
#[inline]
fn dot<T: Float>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let tail = xc.remainder().iter().zip(yc.remainder()).fold(T::zero(), |a, (&p, &q)| a + p * q);
    for (a, b) in xc.zip(yc) {
        for k in 0..8 {
            acc[k] = acc[k] + a[k] * b[k];
        }
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

/// Zero-padded 3x3 convolution, stride 1.
#[allow(clippy::too_many_arguments)]
fn conv3x3<T: Float>(
    input: &[T],
    cin: usize,
    w: usize,
    h: usize,
    weights: &[T],
    bias: &[T],
    cout: usize,
    out: &mut [T],
) {
    let plane = w * h;
    let k = cin * 9;
    let mut col = Vec::new();
    im2col(input, cin, w, h, &mut col);
    for (o, dst) in out.chunks_exact_mut(plane).take(cout).enumerate() {
        dst.fill(bias[o]);
    }
    let rows: Vec<&[T]> = col.chunks_exact(plane).collect();
    for (o, dst) in out.chunks_exact_mut(plane).take(cout).enumerate() {
        let wo = &weights[o * k..(o + 1) * k];
        let mut ck = 0;
        while ck + 4 <= k {
            let a = [wo[ck], wo[ck + 1], wo[ck + 2], wo[ck + 3]];
            axpy4(a, [rows[ck], rows[ck + 1], rows[ck + 2], rows[ck + 3]], dst);
            ck += 4;
        }
        for r in ck..k {
            axpy(wo[r], rows[r], dst);
        }
    }
}

/// Accumulates weight, bias and (optionally) input gradients of [`conv3x3`].
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward<T: Float>(
    input: &[T],
    cin: usize,
    w: usize,
    h: usize,
    weights: &[T],
    dout: &[T],
    cout: usize,
    dweights: &mut [T],
    dbias: &mut [T],
    dinput: Option<&mut [T]>,
) {
    let plane = w * h;
    let k = cin * 9;
    let mut col = Vec::new();
    im2col(input, cin, w, h, &mut col);
    for (o, g) in dout.chunks_exact(plane).take(cout).enumerate() {
        dbias[o] = g.iter().fold(dbias[o], |a, &v| a + v);
        for (ck, src) in col.chunks_exact(plane).enumerate() {
            dweights[o * k + ck] = dweights[o * k + ck] + dot(g, src);
        }
    }
    if let Some(din) = dinput {
        // reuse the column buffer for the column-space gradient
        let g: Vec<&[T]> = dout.chunks_exact(plane).take(cout).collect();
        for (ck, dst) in col.chunks_exact_mut(plane).enumerate() {
            dst.fill(T::zero());
            let mut o = 0;
            while o + 4 <= cout {
                let a = [0, 1, 2, 3].map(|d| weights[(o + d) * k + ck]);
                axpy4(a, [g[o], g[o + 1], g[o + 2], g[o + 3]], dst);
                o += 4;
            }
            for r in o..cout {
                axpy(weights[r * k + ck], g[r], dst);
            }
        }
        col2im_add(&col, cin, w, h, din);
    }
}

fn relu<T: Float>(v: &mut [T]) {
    for x in v {
        *x = x.max(T::zero());
    }
}

/// Multiplies `grad` by the ReLU derivative read off the activation.
fn relu_backward<T: Float>(grad: &mut [T], act: &[T]) {
    for (g, &a) in grad.iter_mut().zip(act) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

struct Activations<T> {
    input: Vec<T>,
    a1: Vec<T>,
    a2: Vec<T>,
    out: Vec<T>,
}

impl<T: Float> ConvScoreNet<T> {
    pub fn param_count(channels: usize, hidden: usize) -> usize {
        Layout::new(channels, hidden).total()
    }

    /// He-initialized hidden layers, a small output layer and zero biases.
    pub fn new(channels: usize, hidden: usize, sched: NoiseSchedule, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(channels, hidden, sched)?;
        let layout = net.layout();
        let mut rng = rng::stream(seed, streams::INIT);
        let [w1, _, w2, _, w3, _] = split_mut(&mut net.params, layout);
        let fan1 = (layout.cin * 9) as f64;
        let fan2 = (hidden * 9) as f64;
        for (w, std) in [
            (w1, (2.0 / fan1).sqrt()),
            (w2, (2.0 / fan2).sqrt()),
            (w3, 0.1 * (1.0 / fan2).sqrt()),
        ] {
            for v in w.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = cast(std * z);
            }
        }
        Ok(net)
    }

    pub fn zeros(channels: usize, hidden: usize, sched: NoiseSchedule) -> Result<Self> {
        Self::from_params(
            channels,
            hidden,
            sched,
            vec![T::zero(); Self::param_count(channels, hidden)],
        )
    }

    pub fn from_params(channels: usize, hidden: usize, sched: NoiseSchedule, params: Vec<T>) -> Result<Self> {
        if channels == 0 || hidden == 0 {
            return Err(Error::InvalidConfig("network needs at least one channel and hidden unit".into()));
        }
        sched.validate()?;
        let expected = Self::param_count(channels, hidden);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected: (expected, 1),
                found: (params.len(), 1),
            });
        }
        Ok(Self {
            channels,
            hidden,
            sched,
            params,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<T> {
        self.params
    }

    /// Same weights in another float type.
    pub fn cast<U: Float>(&self) -> ConvScoreNet<U> {
        ConvScoreNet {
            channels: self.channels,
            hidden: self.hidden,
            sched: self.sched,
            params: self
                .params
                .iter()
                .map(|v| cast(v.to_f64().expect("finite float")))
                .collect(),
        }
    }

    fn layout(&self) -> Layout {
        Layout::new(self.channels, self.hidden)
    }

    fn input(&self, x: &[Image2D], step: usize) -> Result<(Vec<T>, usize, usize)> {
        let (w, h) = check_channels(x, self.channels)?;
        let sigma = self.sched.sigma(step)?;
        let scale = 1.0 / (1.0 + sigma * sigma).sqrt();
        let mut input = Vec::with_capacity((self.channels + 1) * w * h);
        for c in x {
            input.extend(c.values().iter().map(|&v| cast::<T>(v * scale)));
        }
        input.extend(core::iter::repeat_n(cast::<T>(sigma.ln()), w * h));
        Ok((input, w, h))
    }

    fn forward(&self, input: Vec<T>, w: usize, h: usize) -> Activations<T> {
        let layout = self.layout();
        let plane = w * h;
        let [w1, b1, w2, b2, w3, b3] = split(&self.params, layout);
        let mut a1 = vec![T::zero(); layout.hidden * plane];
        conv3x3(&input, layout.cin, w, h, w1, b1, layout.hidden, &mut a1);
        relu(&mut a1);
        let mut a2 = vec![T::zero(); layout.hidden * plane];
        conv3x3(&a1, layout.hidden, w, h, w2, b2, layout.hidden, &mut a2);
        relu(&mut a2);
        let mut out = vec![T::zero(); layout.cout * plane];
        conv3x3(&a2, layout.hidden, w, h, w3, b3, layout.cout, &mut out);
        Activations { input, a1, a2, out }
    }

    /// Network output before the `1 / sigma_i` scaling.
    pub fn raw_output(&self, x: &[Image2D], step: usize) -> Result<Channels> {
        let (input, w, h) = self.input(x, step)?;
        let acts = self.forward(input, w, h);
        Ok(to_images(&acts.out, w, h))
    }

    /// Adds parameter gradients of `sum(out * dout)` into `grad`.
    fn backward(&self, acts: &Activations<T>, dout: &[T], w: usize, h: usize, grad: &mut [T]) {
        let layout = self.layout();
        let plane = w * h;
        let [w1, _, w2, _, w3, _] = split(&self.params, layout);
        let [gw1, gb1, gw2, gb2, gw3, gb3] = split_mut(grad, layout);
        let mut da2 = vec![T::zero(); layout.hidden * plane];
        conv3x3_backward(&acts.a2, layout.hidden, w, h, w3, dout, layout.cout, gw3, gb3, Some(&mut da2));
        relu_backward(&mut da2, &acts.a2);
        let mut da1 = vec![T::zero(); layout.hidden * plane];
        conv3x3_backward(&acts.a1, layout.hidden, w, h, w2, &da2, layout.hidden, gw2, gb2, Some(&mut da1));
        relu_backward(&mut da1, &acts.a1);
        conv3x3_backward(&acts.input, layout.cin, w, h, w1, &da1, layout.hidden, gw1, gb1, None);
    }

    /// DSM loss (as in [`super::dsm_loss_with_draws`]) and its gradient with
    /// respect to every parameter.
    pub fn loss_and_grad(&self, batch: &[Channels], draws: &[DsmDraw]) -> Result<(f64, Vec<T>)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let inv_b = 1.0 / batch.len() as f64;
        let mut grad = vec![T::zero(); self.params.len()];
        let mut total = 0.0;
        for (sample, draw) in batch.iter().zip(draws) {
            let sigma = self.sched.sigma(draw.step)?;
            let lambda = self.sched.perturbation_variance(draw.step)?;
            let noisy = super::perturbed(sample, draw, &self.sched)?;
            let (input, w, h) = self.input(&noisy, draw.step)?;
            let acts = self.forward(input, w, h);
            // loss = || a * raw + z ||^2 with a = sqrt(lambda) / sigma
            let a = lambda.sqrt() / sigma;
            let z = draw.noise.iter().flat_map(|c| c.values().iter());
            let mut dout = Vec::with_capacity(acts.out.len());
            for (&r, &z) in acts.out.iter().zip(z) {
                let e = a * r.to_f64().unwrap_or(f64::NAN) + z;
                total += e * e;
                dout.push(cast::<T>(2.0 * a * e * inv_b));
            }
            self.backward(&acts, &dout, w, h, &mut grad);
        }
        Ok((total * inv_b, grad))
    }
}

fn to_images<T: Float>(data: &[T], w: usize, h: usize) -> Channels {
    data.chunks_exact(w * h)
        .map(|c| {
            Image2D::from_fn(w, h, |x, y| c[y * w + x].to_f64().unwrap_or(f64::NAN))
        })
        .collect()
}

/// `raw / sigma`, the score returned for a raw network output at level `sigma`.
pub(crate) fn scale_raw(raw: Channels, sigma: f64) -> Channels {
    raw.into_iter().map(|c| c.scaled(1.0 / sigma)).collect()
}

impl<T: Float> ScoreModel for ConvScoreNet<T> {
    fn channels(&self) -> usize {
        self.channels
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    fn score(&self, x: &[Image2D], step: usize) -> Result<Channels> {
        let raw = self.raw_output(x, step)?;
        let out = scale_raw(raw, self.sched.sigma(step)?);
        if let Some(step) = out.iter().find_map(|c| c.first_non_finite().map(|_| step)) {
            return Err(Error::NonFiniteIterate { step });
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Cosine decay from `learning_rate` to `learning_rate * final_lr_fraction`
    /// over the run, stepped per epoch; 1 keeps the rate constant.
    pub final_lr_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            learning_rate: 1e-3,
            final_lr_fraction: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning_rate must be finite and nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::InvalidConfig("final_lr_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Learning rate used during the 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let t = epoch as f64 / self.epochs.max(1) as f64;
        let floor = self.learning_rate * self.final_lr_fraction;
        floor + (self.learning_rate - floor) * 0.5 * (1.0 + (core::f64::consts::PI * t).cos())
    }
}

/// First and second moment estimates of Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Float> AdamState<T> {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [T], grad: &[T], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let t = self.t as i32;
        let c1 = cast::<T>(1.0 / (1.0 - B1.powi(t)));
        let c2 = cast::<T>(1.0 / (1.0 - B2.powi(t)));
        let (b1, b2) = (cast::<T>(B1), cast::<T>(B2));
        let (nb1, nb2) = (cast::<T>(1.0 - B1), cast::<T>(1.0 - B2));
        let (lr, eps) = (cast::<T>(lr), cast::<T>(EPS));
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + nb1 * g;
            *v = b2 * *v + nb2 * g * g;
            let update = (*m * c1) / ((*v * c2).sqrt() + eps);
            *p = *p - lr * update;
        }
    }
}

/// Resumable minibatch Adam on the DSM objective. Epoch `e` draws its
/// shuffle and noise from a stream keyed by `(seed, e)`, so resuming from a
/// saved state reproduces an uninterrupted run exactly.
#[derive(Clone, Debug)]
pub struct Trainer<T = f32> {
    cfg: TrainConfig,
    adam: AdamState<T>,
    epoch: usize,
    history: Vec<f64>,
}

impl<T: Float> Trainer<T> {
    pub fn new(cfg: TrainConfig, net: &ConvScoreNet<T>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            adam: AdamState::new(net.params.len()),
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn resume(cfg: TrainConfig, adam: AdamState<T>, history: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            adam,
            epoch: history.len(),
            history,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn adam(&self) -> &AdamState<T> {
        &self.adam
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    /// One pass over `data`; returns the mean per-sample loss.
    pub fn run_epoch(&mut self, net: &mut ConvScoreNet<T>, data: &[Channels]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if self.adam.m.len() != net.params.len() {
            return Err(Error::DimensionMismatch {
                expected: (net.params.len(), 1),
                found: (self.adam.m.len(), 1),
            });
        }
        let key = self.cfg.seed ^ (self.epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = rng::stream(key, streams::TRAIN);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let lr = self.cfg.lr_at(self.epoch);
        let mut total = 0.0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<Channels> = chunk.iter().map(|&i| data[i].clone()).collect();
            let draws = draw_dsm(&batch, &net.sched, &mut rng)?;
            let (loss, grad) = net.loss_and_grad(&batch, &draws)?;
            if !loss.is_finite() {
                return Err(Error::DivergenceDetected { epoch: self.epoch });
            }
            total += loss * batch.len() as f64;
            self.adam.step(&mut net.params, &grad, lr);
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::DivergenceDetected { epoch: self.epoch });
        }
        let mean = total / data.len() as f64;
        self.history.push(mean);
        self.epoch += 1;
        Ok(mean)
    }
}

/// Trains for `cfg.epochs` epochs; returns the final network and the
/// per-epoch mean loss.
pub fn train<T: Float>(
    mut model: ConvScoreNet<T>,
    dataset: &[Channels],
    cfg: TrainConfig,
    sched: &NoiseSchedule,
) -> Result<(ConvScoreNet<T>, Vec<f64>)> {
    if *sched != model.sched {
        return Err(Error::ScheduleMismatch);
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut trainer = Trainer::new(cfg, &model)?;
    while !trainer.is_done() {
        trainer.run_epoch(&mut model, dataset)?;
    }
    Ok((model, trainer.history))
}
