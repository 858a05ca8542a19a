//! The JSON run configuration shared by every subcommand.
//!
//! Every section has explicit defaults, unknown keys are rejected, and the
//! effective configuration is written back in full next to each command's
//! outputs. Paths are command-line only, so neither the written configuration
//! nor its hash depends on where a run happens.

use std::fs;
use std::path::Path;

use mcdiff_core::fidelity::{FidelityConfig, FidelityVariant};
use mcdiff_core::operators::RadonGeometry;
use mcdiff_core::phantom::PhantomSpec;
use mcdiff_core::score::{GaussianOracle, TrainConfig};
use mcdiff_core::types::SamplerConfig;
use mcdiff_core::{NoiseSchedule, SamplingMask};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradeSettings {
    pub pet_dose: f64,
    pub mri_noise_std: f64,
    pub acceleration: f64,
    pub center_fraction: f64,
    pub n_angles: usize,
    pub seed: u64,
}

impl Default for DegradeSettings {
    fn default() -> Self {
        Self {
            pet_dose: 100.0,
            mri_noise_std: 0.0,
            acceleration: 4.0,
            center_fraction: 0.04,
            n_angles: 300,
            seed: 0,
        }
    }
}

/// Likelihood settings; geometry and mask come from the measurement files and
/// the PET count scale from the dose recorded with the sinogram.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FidelitySettings {
    pub variant: FidelityVariant,
    pub ratio_clamp: f64,
    pub mri_weight: f64,
}

impl Default for FidelitySettings {
    fn default() -> Self {
        Self {
            variant: FidelityVariant::FbpResidual,
            ratio_clamp: 1e-6,
            mri_weight: 1.0,
        }
    }
}

impl FidelitySettings {
    pub fn build(&self, geom: RadonGeometry, mask: SamplingMask, count_scale: f64) -> FidelityConfig {
        FidelityConfig {
            variant: self.variant,
            ratio_clamp: self.ratio_clamp,
            mri_weight: self.mri_weight,
            count_scale,
            ..FidelityConfig::new(geom, mask)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    /// Hidden width of single-modality networks.
    pub hidden: usize,
    /// Hidden width of the two-channel network.
    pub joint_hidden: usize,
    pub init_seed: u64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            hidden: 32,
            joint_hidden: 32,
            init_seed: 0,
        }
    }
}

/// Parameters of the analytic correlated-Gaussian prior used by `--score oracle`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSettings {
    pub mean: [f64; 2],
    pub std: [f64; 2],
    pub rho: f64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            mean: [0.5, 0.3],
            std: [1.0, 1.0],
            rho: 0.8,
        }
    }
}

impl OracleSettings {
    pub fn build(&self, sched: NoiseSchedule) -> mcdiff_core::Result<GaussianOracle> {
        GaussianOracle::new(
            (self.mean[0], self.mean[1]),
            (self.std[0], self.std[1]),
            self.rho,
            sched,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schedule: NoiseSchedule,
    pub sampler: SamplerConfig,
    pub fidelity: FidelitySettings,
    pub degrade: DegradeSettings,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub phantom: PhantomSpec,
    pub oracle: OracleSettings,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("config serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write_effective(&self, dir: &Path) -> Result<()> {
        let path = dir.join("effective_config.json");
        fs::write(&path, self.to_json()).map_err(|e| Error::io(&path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.sampler.validate()?;
        self.train.validate()?;
        self.phantom.validate()?;
        if self.sampler.n_steps != self.schedule.n_steps {
            return Err(Error::Usage(format!(
                "sampler.n_steps ({}) must equal schedule.n_steps ({})",
                self.sampler.n_steps, self.schedule.n_steps
            )));
        }
        Ok(())
    }
}
