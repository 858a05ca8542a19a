//! Measurement simulation, baselines and the joint-versus-stand-alone ablation.

use mcdiff_core::degradation::{simulate_mri, simulate_pet, DegradeConfig};
use mcdiff_core::metrics::{aggregate, nmse, psnr, ssim, Aggregate, SsimParams};
use mcdiff_core::operators::{fbp, ifft2_adjoint, make_cartesian_mask, RadonGeometry};
use mcdiff_core::sampler::{joint_reconstruct, standalone_reconstruct, Measurement};
use mcdiff_core::score::ScoreModel;
use mcdiff_core::types::SamplerConfig;
use mcdiff_core::{Image2D, KSpaceData, Modality, ModalityPair, NoiseSchedule, SamplingMask, Sinogram};
use serde::{Serialize, Serializer};

use crate::config::{DegradeSettings, FidelitySettings};
use crate::error::Result;

/// Simulated measurements of one ground-truth pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurements {
    pub sinogram: Sinogram,
    pub geom: RadonGeometry,
    pub kspace: KSpaceData,
    pub mask: SamplingMask,
}

/// Mask and noise both derive from `seed` through separate random streams.
pub fn degrade(truth: &ModalityPair, settings: &DegradeSettings, seed: u64) -> Result<Measurements> {
    let (w, h) = truth.dims();
    if w != h {
        return Err(mcdiff_core::Error::NonSquareImage { width: w, height: h }.into());
    }
    let geom = RadonGeometry::for_image(w, settings.n_angles)?;
    let mask = make_cartesian_mask(w, h, settings.acceleration, settings.center_fraction, seed)?;
    let cfg = DegradeConfig {
        pet_dose: settings.pet_dose,
        mri_noise_std: settings.mri_noise_std,
        mask: mask.clone(),
        seed,
    };
    Ok(Measurements {
        sinogram: simulate_pet(&truth.pet, &geom, &cfg)?,
        kspace: simulate_mri(&truth.mri, &cfg)?,
        geom,
        mask,
    })
}

/// Filtered backprojection of the counts divided by the dose.
pub fn fbp_baseline(sino: &Sinogram, geom: &RadonGeometry, size: usize, dose: f64) -> Result<Image2D> {
    let mut scaled = sino.clone();
    scaled.values_mut().iter_mut().for_each(|v| *v /= dose);
    Ok(fbp(&scaled, geom, size)?)
}

/// Inverse transform of the undersampled k-space with missing rows left at zero.
pub fn zero_filled_baseline(ks: &KSpaceData) -> Image2D {
    ifft2_adjoint(ks)
}

fn finite_or_text<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

/// PSNR is `"inf"` in JSON for an exact reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Scores {
    #[serde(serialize_with = "finite_or_text")]
    pub psnr: f64,
    pub ssim: f64,
    pub nmse: f64,
}

pub fn score_image(x: &Image2D, truth: &Image2D) -> Result<Scores> {
    Ok(Scores {
        psnr: psnr(x, truth)?,
        ssim: ssim(x, truth, &SsimParams::default())?,
        nmse: nmse(x, truth)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairScores {
    pub pet: Scores,
    pub mri: Scores,
}

pub fn score_pair(x: &ModalityPair, truth: &ModalityPair) -> Result<PairScores> {
    Ok(PairScores {
        pet: score_image(&x.pet, &truth.pet)?,
        mri: score_image(&x.mri, &truth.mri)?,
    })
}

/// Score models compared by the ablation.
#[derive(Clone, Copy)]
pub struct AblationModels<'a> {
    pub joint: &'a dyn ScoreModel,
    pub pet: &'a dyn ScoreModel,
    pub mri: &'a dyn ScoreModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationSetup {
    pub sched: NoiseSchedule,
    pub sampler: SamplerConfig,
    pub degrade: DegradeSettings,
    pub fidelity: FidelitySettings,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairOutcome {
    pub index: usize,
    pub standalone: PairScores,
    pub joint: PairScores,
    pub baseline: PairScores,
}

/// Pair `k` is degraded with seed `degrade.seed + k` and sampled with seed
/// `sampler.seed + k`, for every method.
pub fn ablate_pair(truth: &ModalityPair, k: usize, setup: &AblationSetup, models: AblationModels<'_>) -> Result<PairOutcome> {
    let size = truth.dims().0;
    let m = degrade(truth, &setup.degrade, setup.degrade.seed.wrapping_add(k as u64))?;
    let fid = setup.fidelity.build(m.geom.clone(), m.mask.clone(), setup.degrade.pet_dose);
    let cfg = SamplerConfig {
        seed: setup.sampler.seed.wrapping_add(k as u64),
        ..setup.sampler
    };
    let joint = joint_reconstruct(&m.sinogram, &m.kspace, models.joint, &setup.sched, &cfg, &fid, None)?;
    let pet = standalone_reconstruct(Measurement::Pet(&m.sinogram), size, models.pet, &setup.sched, &cfg, &fid, None)?;
    let mri = standalone_reconstruct(Measurement::Mri(&m.kspace), size, models.mri, &setup.sched, &cfg, &fid, None)?;
    let baseline = ModalityPair::new(
        fbp_baseline(&m.sinogram, &m.geom, size, setup.degrade.pet_dose)?,
        zero_filled_baseline(&m.kspace),
    )?;
    Ok(PairOutcome {
        index: k,
        standalone: score_pair(&ModalityPair::new(pet, mri)?, truth)?,
        joint: score_pair(&joint, truth)?,
        baseline: score_pair(&baseline, truth)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricCells {
    pub psnr: Aggregate,
    pub ssim: Aggregate,
    pub nmse: Aggregate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MethodRow {
    pub pet: MetricCells,
    pub mri: MetricCells,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub pairs: Vec<PairOutcome>,
    pub standalone: MethodRow,
    pub joint: MethodRow,
    pub baseline: MethodRow,
}

fn cells(scores: &[Scores]) -> Result<MetricCells> {
    let col = |f: fn(&Scores) -> f64| aggregate(&scores.iter().map(f).collect::<Vec<_>>());
    Ok(MetricCells {
        psnr: col(|s| s.psnr)?,
        ssim: col(|s| s.ssim)?,
        nmse: col(|s| s.nmse)?,
    })
}

fn row(pairs: &[PairOutcome], pick: fn(&PairOutcome) -> &PairScores) -> Result<MethodRow> {
    let pet: Vec<Scores> = pairs.iter().map(|p| pick(p).pet).collect();
    let mri: Vec<Scores> = pairs.iter().map(|p| pick(p).mri).collect();
    Ok(MethodRow {
        pet: cells(&pet)?,
        mri: cells(&mri)?,
    })
}

impl AblationReport {
    pub fn from_pairs(pairs: Vec<PairOutcome>) -> Result<Self> {
        Ok(Self {
            standalone: row(&pairs, |p| &p.standalone)?,
            joint: row(&pairs, |p| &p.joint)?,
            baseline: row(&pairs, |p| &p.baseline)?,
            pairs,
        })
    }

    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        match method {
            "standalone" => Some(&self.standalone),
            "joint" => Some(&self.joint),
            "baseline" => Some(&self.baseline),
            _ => None,
        }
    }

    /// Markdown table with one row per diffusion method and mean±std cells.
    pub fn table(&self) -> String {
        let mut out = String::from("| Method | PET PSNR | PET SSIM | PET NMSE | MRI PSNR | MRI SSIM | MRI NMSE |\n");
        out.push_str("|---|---|---|---|---|---|---|\n");
        for (name, r) in [("Stand-alone", &self.standalone), ("Joint", &self.joint)] {
            out.push_str(&format!(
                "| {name} | {} | {} | {} | {} | {} | {} |\n",
                r.pet.psnr, r.pet.ssim, r.pet.nmse, r.mri.psnr, r.mri.ssim, r.mri.nmse
            ));
        }
        out
    }
}

pub fn ablate(truths: &[ModalityPair], setup: &AblationSetup, models: AblationModels<'_>) -> Result<AblationReport> {
    let pairs = truths
        .iter()
        .enumerate()
        .map(|(k, t)| ablate_pair(t, k, setup, models))
        .collect::<Result<Vec<_>>>()?;
    AblationReport::from_pairs(pairs)
}

pub fn modality_of(name: &str) -> Option<Modality> {
    match name {
        "pet" => Some(Modality::Pet),
        "mri" => Some(Modality::Mri),
        _ => None,
    }
}
