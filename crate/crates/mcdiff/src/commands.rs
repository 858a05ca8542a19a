//! Subcommand bodies. Each writes its artifacts plus `effective_config.json`
//! into the output directory and returns a short summary for stdout.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mcdiff_core::fidelity::{ChannelFidelity, FidelityConfig, PixelGaussianFidelity};
use mcdiff_core::operators::RadonGeometry;
use mcdiff_core::phantom::{gen_pair, PhantomSpec};
use mcdiff_core::sampler::{joint_reconstruct, reconstruct_with, standalone_reconstruct, ChannelTerm, Measurement, TraceRow};
use mcdiff_core::score::{ConvScoreNet, ScoreModel, Trainer};
use mcdiff_core::{Image2D, KSpaceData, Modality, ModalityPair, SamplingMask, Sinogram};
use serde_json::{json, Map, Value};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::container::{self, object, peek_header};
use crate::error::{Error, Result};
use crate::experiment::{self, AblationModels, AblationSetup};
use crate::pgm::export_pgm;

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn hash_extra(cfg: &RunConfig) -> Map<String, Value> {
    object(json!({ "config_hash": cfg.hash() }))
}

/// Writes `count` pairs with seeds `phantom.seed + k` and a manifest.
pub fn cmd_phantom(cfg: &RunConfig, count: usize, out: &Path) -> Result<String> {
    cfg.phantom.validate()?;
    ensure_dir(out)?;
    let mut files = Vec::with_capacity(count);
    for k in 0..count {
        let spec = PhantomSpec {
            seed: cfg.phantom.seed.wrapping_add(k as u64),
            ..cfg.phantom
        };
        let name = format!("pair_{k:04}.mcd");
        let extra = object(json!({ "phantom": spec }));
        container::save_pair(&out.join(&name), &gen_pair(&spec)?, &extra)?;
        files.push(json!({ "file": name, "seed": spec.seed }));
    }
    let manifest = json!({ "count": count, "files": files });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_text(&out.join("manifest.json"), &text)?;
    cfg.write_effective(out)?;
    Ok(text)
}

/// Simulates the sinogram, k-space and mask of one pair with `degrade.seed`.
pub fn cmd_degrade(cfg: &RunConfig, pair: &Path, out: &Path) -> Result<String> {
    let truth = container::load_pair(pair)?;
    ensure_dir(out)?;
    let m = experiment::degrade(&truth, &cfg.degrade, cfg.degrade.seed)?;
    let extra = hash_extra(cfg);
    let mut sino_extra = extra.clone();
    sino_extra.insert("pet_dose".into(), json!(cfg.degrade.pet_dose));
    container::save_sinogram(&out.join("sinogram.mcd"), &m.sinogram, &m.geom, &sino_extra)?;
    container::save_kspace(&out.join("kspace.mcd"), &m.kspace, &extra)?;
    container::save_mask(&out.join("mask.mcd"), &m.mask, &extra)?;
    cfg.write_effective(out)?;
    Ok(format!(
        "sinogram {}x{}, k-space {}x{} with {} of {} lines\n",
        m.sinogram.n_detectors(),
        m.sinogram.n_angles(),
        m.kspace.width(),
        m.kspace.height(),
        m.mask.lines().len(),
        m.mask.height()
    ))
}

/// Every `pair` container of `dir`, in file-name order.
pub fn load_dataset(dir: &Path) -> Result<Vec<ModalityPair>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "mcd"))
        .collect();
    paths.sort();
    let mut pairs = Vec::new();
    for p in paths {
        if peek_header(&p)?.kind == "pair" {
            pairs.push(container::load_pair(&p)?);
        }
    }
    Ok(pairs)
}

fn select_channels(pairs: &[ModalityPair], modalities: &[Modality]) -> Vec<Vec<Image2D>> {
    pairs
        .iter()
        .map(|p| modalities.iter().map(|&m| p.get(m).clone()).collect())
        .collect()
}

fn loss_csv(history: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (e, l) in history.iter().enumerate() {
        writeln!(out, "{},{l}", e + 1).expect("string write");
    }
    out
}

/// Trains (or resumes) a network on the chosen channels, checkpointing after
/// every epoch so an interrupted run resumes where it stopped.
pub fn cmd_train(
    cfg: &RunConfig,
    dataset: &Path,
    modalities: &[Modality],
    resume: Option<&Path>,
    out: &Path,
) -> Result<String> {
    let pairs = load_dataset(dataset)?;
    if pairs.is_empty() {
        return Err(mcdiff_core::Error::EmptyDataset.into());
    }
    let data = select_channels(&pairs, modalities);
    let (mut net, mut trainer) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.modalities != modalities {
                return Err(Error::Usage(format!(
                    "{} was trained on {:?}, not {modalities:?}",
                    path.display(),
                    ck.modalities
                )));
            }
            let trainer = ck.trainer(cfg.train)?;
            (ck.net, trainer)
        }
        None => {
            let hidden = if modalities.len() == 2 {
                cfg.model.joint_hidden
            } else {
                cfg.model.hidden
            };
            let net = ConvScoreNet::<f32>::new(modalities.len(), hidden, cfg.schedule, cfg.model.init_seed)?;
            let trainer = Trainer::new(cfg.train, &net)?;
            (net, trainer)
        }
    };
    if *net.schedule() != cfg.schedule {
        return Err(mcdiff_core::Error::ScheduleMismatch.into());
    }
    ensure_dir(out)?;
    cfg.write_effective(out)?;
    let ck_path = out.join("checkpoint.mcd");
    while !trainer.is_done() {
        trainer.run_epoch(&mut net, &data)?;
        Checkpoint::new(net.clone(), modalities.to_vec(), cfg.model.init_seed, &trainer).save(&ck_path)?;
        write_text(&out.join("loss.csv"), &loss_csv(trainer.history()))?;
    }
    if trainer.history().is_empty() {
        Checkpoint::new(net, modalities.to_vec(), cfg.model.init_seed, &trainer).save(&ck_path)?;
        write_text(&out.join("loss.csv"), &loss_csv(&[]))?;
    }
    let last = trainer.history().last().copied().unwrap_or(f64::NAN);
    Ok(format!("trained {} epochs, final loss {last}\n", trainer.epoch()))
}

/// Where the prior score comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum ScoreSource {
    Oracle,
    Checkpoint(PathBuf),
}

impl std::str::FromStr for ScoreSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.split_once(':') {
            _ if s == "oracle" => Ok(ScoreSource::Oracle),
            Some(("checkpoint", p)) if !p.is_empty() => Ok(ScoreSource::Checkpoint(PathBuf::from(p))),
            _ => Err(format!("expected `oracle` or `checkpoint:PATH`, got `{s}`")),
        }
    }
}

/// Inputs of `reconstruct`.
#[derive(Clone, Debug, Default)]
pub struct ReconstructInputs {
    pub sinogram: Option<PathBuf>,
    pub kspace: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    /// Pixel-observation fixture: a noisy pair observed directly.
    pub observed: Option<PathBuf>,
    pub pixel_noise: Option<f64>,
    /// Number of chains averaged into the output.
    pub chains: usize,
}

fn score_model(cfg: &mut RunConfig, source: &ScoreSource, channels: &[Modality]) -> Result<Box<dyn ScoreModel>> {
    match source {
        ScoreSource::Oracle => {
            let oracle = cfg.oracle.build(cfg.schedule)?;
            Ok(match channels {
                [m] => Box::new(oracle.marginal(*m)),
                _ => Box::new(oracle),
            })
        }
        ScoreSource::Checkpoint(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.modalities != channels {
                return Err(Error::Usage(format!(
                    "{} holds a {:?} network but {channels:?} is needed",
                    path.display(),
                    ck.modalities
                )));
            }
            // the network is tied to the ladder it was trained on
            let sched = *ck.net.schedule();
            cfg.schedule = sched;
            cfg.sampler.n_steps = sched.n_steps;
            Ok(Box::new(ck.net))
        }
    }
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Usage(format!("missing --{what}")))
}

fn trace_csv(rows: &[TraceRow], channels: &[Modality]) -> String {
    let mut out = String::from("i,j,score_norm_pet,score_norm_mri,grad_norm_pet,grad_norm_mri,pet_nll,mri_nll\n");
    let cell = |v: &[f64], m: Modality| {
        channels
            .iter()
            .position(|&c| c == m)
            .map(|i| v[i].to_string())
            .unwrap_or_default()
    };
    for r in rows {
        let mut fields = vec![r.step.to_string(), r.corrector.to_string()];
        for v in [&r.score_norms, &r.grad_norms, &r.neg_logliks] {
            fields.push(cell(v, Modality::Pet));
            fields.push(cell(v, Modality::Mri));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn mask_for(inputs: &ReconstructInputs, ks: &KSpaceData) -> Result<SamplingMask> {
    match (&inputs.mask, ks.mask()) {
        (Some(path), _) => container::load_mask(path),
        (None, Some(m)) => Ok(m.clone()),
        (None, None) => Ok(SamplingMask::full(ks.width(), ks.height())),
    }
}

fn load_sinogram(path: &Path, cfg: &RunConfig) -> Result<(Sinogram, RadonGeometry, f64)> {
    let dose = peek_header(path)?
        .extra
        .get("pet_dose")
        .and_then(Value::as_f64)
        .unwrap_or(cfg.degrade.pet_dose);
    let (sino, geom) = container::load_sinogram(path)?;
    Ok((sino, geom, dose))
}

/// Joint or stand-alone reconstruction; writes `recon.mcd`, PGM previews and
/// the trace of the first chain.
pub fn cmd_reconstruct(
    cfg: &RunConfig,
    source: &ScoreSource,
    standalone: Option<Modality>,
    steps: Option<usize>,
    inputs: &ReconstructInputs,
    out: &Path,
) -> Result<String> {
    let mut cfg = cfg.clone();
    if let Some(n) = steps {
        cfg.schedule.n_steps = n;
        cfg.sampler.n_steps = n;
    }
    let channels: Vec<Modality> = match standalone {
        Some(m) => vec![m],
        None => vec![Modality::Pet, Modality::Mri],
    };
    let score = score_model(&mut cfg, source, &channels)?;
    if steps.is_some_and(|n| n != cfg.schedule.n_steps) {
        return Err(Error::Usage(format!(
            "--steps must match the {} levels the checkpoint was trained on",
            cfg.schedule.n_steps
        )));
    }
    cfg.validate()?;
    let chains = inputs.chains.max(1);
    let mut rows = Vec::new();
    let mut acc: Option<Vec<Image2D>> = None;
    for c in 0..chains {
        let mut sampler = cfg.sampler;
        sampler.seed = cfg.sampler.seed.wrapping_add(c as u64);
        let mut record = |r: &TraceRow| rows.push(r.clone());
        let observer: Option<&mut dyn FnMut(&TraceRow)> = if c == 0 { Some(&mut record) } else { None };
        let x = reconstruct_once(&cfg, &sampler, score.as_ref(), standalone, inputs, observer)?;
        match acc.as_mut() {
            None => acc = Some(x),
            Some(sum) => sum.iter_mut().zip(&x).for_each(|(s, v)| s.add_scaled(1.0, v)),
        }
    }
    let x: Vec<Image2D> = acc
        .expect("at least one chain")
        .into_iter()
        .map(|s| s.scaled(1.0 / chains as f64))
        .collect();
    ensure_dir(out)?;
    cfg.write_effective(out)?;
    let extra = hash_extra(&cfg);
    let recon = out.join("recon.mcd");
    match standalone {
        Some(m) => {
            let mut extra = extra;
            extra.insert("modality".into(), json!(m));
            container::save_image(&recon, &x[0], &extra)?;
            export_pgm(&x[0], &out.join(format!("recon_{}.pgm", m.name())))?;
        }
        None => {
            let pair = ModalityPair::from_channels(x)?;
            container::save_pair(&recon, &pair, &extra)?;
            export_pgm(&pair.pet, &out.join("recon_pet.pgm"))?;
            export_pgm(&pair.mri, &out.join("recon_mri.pgm"))?;
        }
    }
    write_text(&out.join("trace.csv"), &trace_csv(&rows, &channels))?;
    Ok(format!("{} chain(s), {} trace rows\n", chains, rows.len()))
}

fn reconstruct_once(
    cfg: &RunConfig,
    sampler: &mcdiff_core::types::SamplerConfig,
    score: &dyn ScoreModel,
    standalone: Option<Modality>,
    inputs: &ReconstructInputs,
    observer: Option<&mut dyn FnMut(&TraceRow)>,
) -> Result<Vec<Image2D>> {
    let sched = &cfg.schedule;
    if let Some(obs_path) = &inputs.observed {
        let tau = inputs
            .pixel_noise
            .ok_or_else(|| Error::Usage("--observed needs --pixel-noise".into()))?;
        let observed = container::load_pair(obs_path)?;
        let channels: Vec<Modality> = standalone.map_or(vec![Modality::Pet, Modality::Mri], |m| vec![m]);
        let fids: Vec<PixelGaussianFidelity> = channels
            .iter()
            .map(|&m| PixelGaussianFidelity {
                observed: observed.get(m).clone(),
                noise_std: tau,
            })
            .collect();
        let terms = channels
            .iter()
            .zip(&fids)
            .map(|(&m, f)| ChannelTerm::new(*sampler.channel(m), Some(f as &dyn ChannelFidelity)))
            .collect();
        return Ok(reconstruct_with(score, sched, sampler, terms, observed.dims(), observer)?);
    }
    let settings = &cfg.fidelity;
    match standalone {
        Some(Modality::Pet) => {
            let (sino, geom, dose) = load_sinogram(require(&inputs.sinogram, "sinogram")?, cfg)?;
            let size = image_size(&geom, inputs)?;
            let fid = settings.build(geom, SamplingMask::full(size, size), dose);
            let x = standalone_reconstruct(Measurement::Pet(&sino), size, score, sched, sampler, &fid, observer)?;
            Ok(vec![x])
        }
        Some(Modality::Mri) => {
            let ks = container::load_kspace(require(&inputs.kspace, "kspace")?)?;
            let mask = mask_for(inputs, &ks)?;
            let size = ks.width();
            let fid = settings.build(RadonGeometry::for_image(size, 1)?, mask, cfg.degrade.pet_dose);
            let x = standalone_reconstruct(Measurement::Mri(&ks), size, score, sched, sampler, &fid, observer)?;
            Ok(vec![x])
        }
        None => {
            let (sino, geom, dose) = load_sinogram(require(&inputs.sinogram, "sinogram")?, cfg)?;
            let ks = container::load_kspace(require(&inputs.kspace, "kspace")?)?;
            let mask = mask_for(inputs, &ks)?;
            let fid: FidelityConfig = settings.build(geom, mask, dose);
            let pair = joint_reconstruct(&sino, &ks, score, sched, sampler, &fid, observer)?;
            Ok(pair.to_channels())
        }
    }
}

/// Image side for a PET-only run: from the k-space or mask if given, else the
/// largest square the detector array covers.
fn image_size(geom: &RadonGeometry, inputs: &ReconstructInputs) -> Result<usize> {
    if let Some(p) = &inputs.mask {
        return Ok(container::load_mask(p)?.width());
    }
    if let Some(p) = &inputs.kspace {
        return Ok(container::load_kspace(p)?.width());
    }
    let mut size = (geom.n_detectors() as f64 * std::f64::consts::FRAC_1_SQRT_2).floor() as usize;
    while size > 1 && !geom.covers(size) {
        size -= 1;
    }
    Ok(size)
}

/// PSNR/SSIM/NMSE of a reconstruction (pair or single image) against a truth pair.
pub fn cmd_eval(recon: &Path, truth: &Path, out: &Path) -> Result<String> {
    let truth = container::load_pair(truth)?;
    let header = peek_header(recon)?;
    let report = match header.kind.as_str() {
        "pair" => serde_json::to_value(experiment::score_pair(&container::load_pair(recon)?, &truth)?),
        "image" => {
            let m = header
                .extra
                .get("modality")
                .and_then(Value::as_str)
                .and_then(experiment::modality_of)
                .ok_or_else(|| Error::Usage(format!("{} does not record its modality", recon.display())))?;
            let img = container::load_image(recon)?;
            let scores = experiment::score_image(&img, truth.get(m))?;
            let mut report = Map::new();
            report.insert(m.name().to_string(), serde_json::to_value(scores).expect("scores serialize"));
            Ok(Value::Object(report))
        }
        other => return Err(Error::Usage(format!("cannot evaluate a {other} container"))),
    }
    .expect("scores serialize");
    ensure_dir(out)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_text(&out.join("metrics.json"), &text)?;
    Ok(text)
}

/// Stand-alone versus joint on every pair of `dataset`; writes the JSON
/// report and the markdown table.
pub fn cmd_ablate(
    cfg: &RunConfig,
    dataset: &Path,
    source: &ScoreSource,
    singles: Option<(&Path, &Path)>,
    out: &Path,
) -> Result<String> {
    let truths = load_dataset(dataset)?;
    if truths.is_empty() {
        return Err(mcdiff_core::Error::EmptyDataset.into());
    }
    let mut cfg = cfg.clone();
    let joint = score_model(&mut cfg, source, &[Modality::Pet, Modality::Mri])?;
    let (pet, mri) = match (source, singles) {
        (ScoreSource::Checkpoint(_), Some((p, m))) => (
            score_model(&mut cfg, &ScoreSource::Checkpoint(p.to_path_buf()), &[Modality::Pet])?,
            score_model(&mut cfg, &ScoreSource::Checkpoint(m.to_path_buf()), &[Modality::Mri])?,
        ),
        (ScoreSource::Oracle, None) => (
            score_model(&mut cfg, source, &[Modality::Pet])?,
            score_model(&mut cfg, source, &[Modality::Mri])?,
        ),
        _ => {
            return Err(Error::Usage(
                "checkpoint ablation needs --pet-checkpoint and --mri-checkpoint; the oracle takes neither".into(),
            ))
        }
    };
    for (name, m) in [("PET", &pet), ("MRI", &mri)] {
        if m.schedule() != joint.schedule() {
            return Err(Error::Usage(format!("the {name} network was trained on a different noise schedule")));
        }
    }
    cfg.validate()?;
    let setup = AblationSetup {
        sched: cfg.schedule,
        sampler: cfg.sampler,
        degrade: cfg.degrade.clone(),
        fidelity: cfg.fidelity.clone(),
    };
    let models = AblationModels {
        joint: joint.as_ref(),
        pet: pet.as_ref(),
        mri: mri.as_ref(),
    };
    let report = experiment::ablate(&truths, &setup, models)?;
    ensure_dir(out)?;
    cfg.write_effective(out)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_text(&out.join("ablation.json"), &json)?;
    let table = report.table();
    write_text(&out.join("ablation.md"), &table)?;
    Ok(table)
}
