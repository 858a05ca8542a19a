//! Reverse-time samplers: unconditional generation and predictor-corrector
//! reconstruction with per-channel data fidelity.
//!
//! The predictor moves the iterate from level `i + 1` to `i`:
//! `x_c += d (s_c - eps_c G_c) + sqrt(d) z_c` with `d = sigma_{i+1}^2 - sigma_i^2`
//! and `eps_c = lambda_c |s_c| / |G_c|`. Each corrector step at level `i`
//! applies `x_c += mu_c (s_c - rho_c G_c) + sqrt(2 mu_c) z_c` with
//! `mu_c = 2 alpha_c (r_c |z_c| / |s_c|)^2` and `rho_c = beta_c |s_c| / |G_c|`.
//! Norms are per channel; one standard-normal field is drawn per channel per
//! step, in channel order.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fidelity::{ChannelFidelity, FidelityConfig, MriFidelity, PetFidelity};
use crate::rng::{self, normal_image, streams, StreamRng};
use crate::score::{check_channels, Channels, ScoreModel};
use crate::types::{ChannelParams, Image2D, KSpaceData, Modality, ModalityPair, NoiseSchedule, SamplerConfig, Sinogram};

/// Iterate of the reverse chain together with its random stream.
#[derive(Clone, Debug)]
pub struct SamplerState {
    pub x: Channels,
    /// Noise level of the current iterate.
    pub step_index: usize,
    /// Corrector steps already taken at `step_index`.
    pub corrector_index: usize,
    rng: StreamRng,
}

impl SamplerState {
    pub fn new(x: Channels, step_index: usize, seed: u64) -> Self {
        Self {
            x,
            step_index,
            corrector_index: 0,
            rng: rng::stream(seed, streams::SAMPLER),
        }
    }

    /// `x ~ N(0, sigma_max^2 I)` at level `N - 1`.
    pub fn initial(channels: usize, width: usize, height: usize, sched: &NoiseSchedule, seed: u64) -> Self {
        let mut rng = rng::stream(seed, streams::SAMPLER);
        let x = (0..channels)
            .map(|_| normal_image(&mut rng, width, height).scaled(sched.sigma_max))
            .collect();
        Self {
            x,
            step_index: sched.n_steps - 1,
            corrector_index: 0,
            rng,
        }
    }

    fn draw(&mut self) -> Channels {
        self.x
            .iter()
            .map(|c| normal_image(&mut self.rng, c.width(), c.height()))
            .collect()
    }
}

/// Sampler settings and likelihood of one channel.
#[derive(Clone, Copy)]
pub struct ChannelTerm<'a> {
    pub params: ChannelParams,
    pub fidelity: Option<&'a dyn ChannelFidelity>,
    pub nonneg: bool,
}

impl<'a> ChannelTerm<'a> {
    pub fn new(params: ChannelParams, fidelity: Option<&'a dyn ChannelFidelity>) -> Self {
        Self {
            params,
            fidelity,
            nonneg: false,
        }
    }
}

/// Per-step diagnostics, one entry per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub corrector: usize,
    pub score_norms: Vec<f64>,
    pub grad_norms: Vec<f64>,
    /// Filled in by [`PcSampler::run`] when an observer is attached.
    pub neg_logliks: Vec<f64>,
}

pub struct PcSampler<'a> {
    score: &'a dyn ScoreModel,
    terms: Vec<ChannelTerm<'a>>,
    noise_scale: f64,
}

fn guarded_ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl<'a> PcSampler<'a> {
    pub fn new(score: &'a dyn ScoreModel, terms: Vec<ChannelTerm<'a>>) -> Result<Self> {
        if terms.len() != score.channels() {
            return Err(Error::ChannelMismatch {
                expected: score.channels(),
                found: terms.len(),
            });
        }
        for t in &terms {
            SamplerConfig {
                pet: t.params,
                mri: t.params,
                ..SamplerConfig::default()
            }
            .validate()?;
        }
        Ok(Self {
            score,
            terms,
            noise_scale: 1.0,
        })
    }

    /// Multiplies every injected noise term; 0 turns the chain deterministic.
    pub fn with_noise_scale(mut self, scale: f64) -> Self {
        self.noise_scale = scale;
        self
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        self.score.schedule()
    }

    fn gradients(&self, x: &[Image2D]) -> Result<Vec<Option<Image2D>>> {
        self.terms
            .iter()
            .zip(x)
            .map(|(t, xc)| t.fidelity.map(|f| f.gradient(xc)).transpose())
            .collect()
    }

    fn finish(&self, state: &SamplerState, step: usize) -> Result<()> {
        if state.x.iter().any(|c| c.first_non_finite().is_some()) {
            return Err(Error::NonFiniteIterate { step });
        }
        Ok(())
    }

    fn clamp(&self, state: &mut SamplerState) {
        for (t, xc) in self.terms.iter().zip(&mut state.x) {
            if t.nonneg {
                xc.values_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
    }

    /// Moves `state` from level `step_index` to `step_index - 1`.
    pub fn predictor_step(&self, state: &mut SamplerState) -> Result<TraceRow> {
        let sched = *self.schedule();
        let from = state.step_index;
        if from == 0 || from >= sched.n_steps {
            return Err(Error::IndexOutOfRange {
                index: from,
                len: sched.n_steps,
            });
        }
        check_channels(&state.x, self.terms.len())?;
        let hi = sched.sigma(from)?;
        let lo = sched.sigma(from - 1)?;
        let delta = hi * hi - lo * lo;
        let score = self.score.score(&state.x, from)?;
        let grads = self.gradients(&state.x)?;
        let z = state.draw();
        let noise = self.noise_scale * delta.sqrt();
        let mut row = TraceRow {
            step: from - 1,
            corrector: 0,
            score_norms: Vec::new(),
            grad_norms: Vec::new(),
            neg_logliks: Vec::new(),
        };
        for c in 0..self.terms.len() {
            let s_norm = score[c].norm();
            let xc = &mut state.x[c];
            xc.add_scaled(delta, &score[c]);
            let g_norm = match &grads[c] {
                Some(g) => {
                    let g_norm = g.norm();
                    let eps = self.terms[c].params.lambda * guarded_ratio(s_norm, g_norm);
                    xc.add_scaled(-delta * eps, g);
                    g_norm
                }
                None => 0.0,
            };
            xc.add_scaled(noise, &z[c]);
            row.score_norms.push(s_norm);
            row.grad_norms.push(g_norm);
        }
        self.clamp(state);
        state.step_index = from - 1;
        state.corrector_index = 0;
        self.finish(state, from - 1)?;
        Ok(row)
    }

    /// One Langevin correction at the current level.
    pub fn corrector_step(&self, state: &mut SamplerState) -> Result<TraceRow> {
        let level = state.step_index;
        check_channels(&state.x, self.terms.len())?;
        let score = self.score.score(&state.x, level)?;
        let grads = self.gradients(&state.x)?;
        let z = state.draw();
        let mut row = TraceRow {
            step: level,
            corrector: state.corrector_index + 1,
            score_norms: Vec::new(),
            grad_norms: Vec::new(),
            neg_logliks: Vec::new(),
        };
        for c in 0..self.terms.len() {
            let p = self.terms[c].params;
            let s_norm = score[c].norm();
            let g_norm = grads[c].as_ref().map_or(0.0, Image2D::norm);
            row.score_norms.push(s_norm);
            row.grad_norms.push(g_norm);
            if p.alpha == 0.0 || p.snr == 0.0 {
                continue;
            }
            if s_norm == 0.0 {
                return Err(Error::ZeroScoreField { channel: c, step: level });
            }
            let ratio = p.snr * z[c].norm() / s_norm;
            let mu = 2.0 * p.alpha * ratio * ratio;
            let xc = &mut state.x[c];
            xc.add_scaled(mu, &score[c]);
            if let Some(g) = &grads[c] {
                let rho = p.beta * guarded_ratio(s_norm, g_norm);
                xc.add_scaled(-mu * rho, g);
            }
            xc.add_scaled(self.noise_scale * (2.0 * mu).sqrt(), &z[c]);
        }
        self.clamp(state);
        state.corrector_index += 1;
        self.finish(state, level)?;
        Ok(row)
    }

    fn observe(
        &self,
        state: &SamplerState,
        mut row: TraceRow,
        observer: &mut Option<&mut dyn FnMut(&TraceRow)>,
    ) -> Result<()> {
        if let Some(obs) = observer.as_mut() {
            row.neg_logliks = self
                .terms
                .iter()
                .zip(&state.x)
                .map(|(t, xc)| t.fidelity.map_or(Ok(0.0), |f| f.neg_loglik(xc)))
                .collect::<Result<_>>()?;
            obs(&row);
        }
        Ok(())
    }

    /// Predictor followed by `corrector_steps` corrector steps at every
    /// level until level 0 is reached.
    pub fn run(
        &self,
        state: &mut SamplerState,
        corrector_steps: usize,
        mut observer: Option<&mut dyn FnMut(&TraceRow)>,
    ) -> Result<()> {
        while state.step_index > 0 {
            let row = self.predictor_step(state)?;
            self.observe(state, row, &mut observer)?;
            for _ in 0..corrector_steps {
                let row = self.corrector_step(state)?;
                self.observe(state, row, &mut observer)?;
            }
        }
        Ok(())
    }
}

fn check_schedule(score: &dyn ScoreModel, sched: &NoiseSchedule, cfg: &SamplerConfig) -> Result<()> {
    sched.validate()?;
    cfg.validate()?;
    if score.schedule() != sched || cfg.n_steps != sched.n_steps {
        return Err(Error::ScheduleMismatch);
    }
    Ok(())
}

/// Full reconstruction with arbitrary per-channel likelihoods. Returns the
/// level-0 iterate.
pub fn reconstruct_with(
    score: &dyn ScoreModel,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    terms: Vec<ChannelTerm<'_>>,
    shape: (usize, usize),
    observer: Option<&mut dyn FnMut(&TraceRow)>,
) -> Result<Channels> {
    check_schedule(score, sched, cfg)?;
    let sampler = PcSampler::new(score, terms)?;
    let mut state = SamplerState::initial(score.channels(), shape.0, shape.1, sched, cfg.seed);
    sampler.run(&mut state, cfg.corrector_steps, observer)?;
    Ok(state.x)
}

/// Joint PET/MRI reconstruction from a sinogram and undersampled k-space.
pub fn joint_reconstruct(
    f: &Sinogram,
    g: &KSpaceData,
    score: &dyn ScoreModel,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    fid: &FidelityConfig,
    observer: Option<&mut dyn FnMut(&TraceRow)>,
) -> Result<ModalityPair> {
    fid.validate()?;
    let pet = PetFidelity {
        sinogram: f.clone(),
        cfg: fid.clone(),
    };
    let mri = MriFidelity {
        kspace: g.clone(),
        cfg: fid.clone(),
    };
    let terms = alloc::vec![
        ChannelTerm {
            nonneg: cfg.nonneg_pet,
            ..ChannelTerm::new(cfg.pet, Some(&pet))
        },
        ChannelTerm::new(cfg.mri, Some(&mri)),
    ];
    let x = reconstruct_with(score, sched, cfg, terms, g.dims(), observer)?;
    ModalityPair::from_channels(x)
}

/// Measurement of a single modality.
#[derive(Clone, Copy, Debug)]
pub enum Measurement<'a> {
    Pet(&'a Sinogram),
    Mri(&'a KSpaceData),
}

impl Measurement<'_> {
    pub fn modality(&self) -> Modality {
        match self {
            Measurement::Pet(_) => Modality::Pet,
            Measurement::Mri(_) => Modality::Mri,
        }
    }
}

/// Single-channel reconstruction with a single-modality score model.
pub fn standalone_reconstruct(
    measurement: Measurement<'_>,
    size: usize,
    score: &dyn ScoreModel,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    fid: &FidelityConfig,
    observer: Option<&mut dyn FnMut(&TraceRow)>,
) -> Result<Image2D> {
    fid.validate()?;
    let modality = measurement.modality();
    let fidelity: alloc::boxed::Box<dyn ChannelFidelity> = match measurement {
        Measurement::Pet(f) => alloc::boxed::Box::new(PetFidelity {
            sinogram: f.clone(),
            cfg: fid.clone(),
        }),
        Measurement::Mri(g) => alloc::boxed::Box::new(MriFidelity {
            kspace: g.clone(),
            cfg: fid.clone(),
        }),
    };
    let term = ChannelTerm {
        nonneg: modality == Modality::Pet && cfg.nonneg_pet,
        ..ChannelTerm::new(*cfg.channel(modality), Some(fidelity.as_ref()))
    };
    let mut x = reconstruct_with(score, sched, cfg, alloc::vec![term], (size, size), observer)?;
    Ok(x.remove(0))
}

/// Reverse iteration `x_{i-1} = x_i + (sigma_i^2 - sigma_{i-1}^2) s(x_i, i)
/// + sqrt(sigma_{i-1}^2 (sigma_i^2 - sigma_{i-1}^2) / sigma_i^2) z` for
/// `i = N-1 .. 1`, from `x ~ N(0, sigma_max^2 I)`.
pub fn unconditional_sample(
    score: &dyn ScoreModel,
    sched: &NoiseSchedule,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<Channels> {
    sched.validate()?;
    if score.schedule() != sched {
        return Err(Error::ScheduleMismatch);
    }
    let mut state = SamplerState::initial(score.channels(), width, height, sched, seed);
    for i in (1..sched.n_steps).rev() {
        let hi = sched.sigma(i)?;
        let lo = sched.sigma(i - 1)?;
        let delta = hi * hi - lo * lo;
        let noise = (lo * lo * delta / (hi * hi)).sqrt();
        let s = score.score(&state.x, i)?;
        let z = state.draw();
        for ((xc, sc), zc) in state.x.iter_mut().zip(&s).zip(&z) {
            xc.add_scaled(delta, sc);
            xc.add_scaled(noise, zc);
        }
        if state.x.iter().any(|c| c.first_non_finite().is_some()) {
            return Err(Error::NonFiniteIterate { step: i - 1 });
        }
    }
    Ok(state.x)
}
