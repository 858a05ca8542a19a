use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mcdiff::commands::{self, ReconstructInputs, ScoreSource};
use mcdiff::config::RunConfig;
use mcdiff::{Error, Result};
use mcdiff_core::fidelity::FidelityVariant;
use mcdiff_core::Modality;

#[derive(Parser)]
#[command(name = "mcdiff", version, about = "Joint PET/MRI reconstruction with a score-based diffusion prior")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed of the command's random stage.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Channel {
    Pet,
    Mri,
}

impl From<Channel> for Modality {
    fn from(c: Channel) -> Self {
        match c {
            Channel::Pet => Modality::Pet,
            Channel::Mri => Modality::Mri,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Fidelity {
    Fbp,
    Poisson,
}

#[derive(Subcommand)]
enum Command {
    /// Generate paired phantoms.
    Phantom {
        #[command(flatten)]
        common: Common,
        /// Number of pairs.
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Simulate sinogram, undersampled k-space and mask from a pair.
    Degrade {
        #[command(flatten)]
        common: Common,
        pair: PathBuf,
    },
    /// Train a score network by denoising score matching.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory of pair containers.
        dataset: PathBuf,
        /// Train a single-modality network on this channel.
        #[arg(long, value_enum)]
        modality: Option<Channel>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Joint or stand-alone predictor-corrector reconstruction.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// `oracle` or `checkpoint:PATH`.
        #[arg(long, default_value = "oracle")]
        score: ScoreSource,
        #[arg(long, value_enum)]
        standalone: Option<Channel>,
        #[arg(long, value_enum)]
        fidelity: Option<Fidelity>,
        /// Number of noise levels.
        #[arg(long)]
        steps: Option<usize>,
        /// Corrector steps per level.
        #[arg(long)]
        corrector: Option<usize>,
        #[arg(long)]
        sinogram: Option<PathBuf>,
        #[arg(long)]
        kspace: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Pair observed directly with Gaussian pixel noise (oracle fixture).
        #[arg(long, requires = "pixel_noise")]
        observed: Option<PathBuf>,
        #[arg(long)]
        pixel_noise: Option<f64>,
        /// Chains averaged into the output.
        #[arg(long, default_value_t = 1)]
        chains: usize,
    },
    /// PSNR, SSIM and NMSE of a reconstruction against its truth pair.
    Eval {
        #[command(flatten)]
        common: Common,
        recon: PathBuf,
        truth: PathBuf,
    },
    /// Stand-alone versus joint reconstruction over a dataset.
    Ablate {
        #[command(flatten)]
        common: Common,
        dataset: PathBuf,
        /// `oracle` or `checkpoint:PATH` of the two-channel network.
        #[arg(long, default_value = "oracle")]
        score: ScoreSource,
        #[arg(long, requires = "mri_checkpoint")]
        pet_checkpoint: Option<PathBuf>,
        #[arg(long, requires = "pet_checkpoint")]
        mri_checkpoint: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Phantom { common, count } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.phantom.seed = s;
            }
            commands::cmd_phantom(&cfg, count, &common.out)
        }
        Command::Degrade { common, pair } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.degrade.seed = s;
            }
            commands::cmd_degrade(&cfg, &pair, &common.out)
        }
        Command::Train { common, dataset, modality, resume } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.train.seed = s;
            }
            let modalities = match modality {
                Some(c) => vec![c.into()],
                None => vec![Modality::Pet, Modality::Mri],
            };
            commands::cmd_train(&cfg, &dataset, &modalities, resume.as_deref(), &common.out)
        }
        Command::Reconstruct {
            common,
            score,
            standalone,
            fidelity,
            steps,
            corrector,
            sinogram,
            kspace,
            mask,
            observed,
            pixel_noise,
            chains,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.sampler.seed = s;
            }
            if let Some(f) = fidelity {
                cfg.fidelity.variant = match f {
                    Fidelity::Fbp => FidelityVariant::FbpResidual,
                    Fidelity::Poisson => FidelityVariant::PoissonRatio,
                };
            }
            if let Some(m) = corrector {
                cfg.sampler.corrector_steps = m;
            }
            let inputs = ReconstructInputs {
                sinogram,
                kspace,
                mask,
                observed,
                pixel_noise,
                chains,
            };
            let standalone = standalone.map(Modality::from);
            commands::cmd_reconstruct(&cfg, &score, standalone, steps, &inputs, &common.out)
        }
        Command::Eval { common, recon, truth } => commands::cmd_eval(&recon, &truth, &common.out),
        Command::Ablate {
            common,
            dataset,
            score,
            pet_checkpoint,
            mri_checkpoint,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.sampler.seed = s;
            }
            let singles = pet_checkpoint
                .as_deref()
                .zip(mri_checkpoint.as_deref())
                .map(|(p, m): (&Path, &Path)| (p, m));
            commands::cmd_ablate(&cfg, &dataset, &score, singles, &common.out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let line = match &e {
                Error::Usage(m) => m.clone(),
                other => other.to_string(),
            };
            eprintln!("error: {}", line.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
