//! Score-network checkpoints: a `checkpoint` container whose `f32le` blob has
//! three rows of `width` values (weights in declared order, Adam first and
//! second moments), with architecture, schedule and training state in the
//! header so that training resumes exactly.

use std::fs;
use std::path::Path;

use mcdiff_core::score::net::AdamState;
use mcdiff_core::score::{ConvScoreNet, TrainConfig, Trainer};
use mcdiff_core::{Modality, NoiseSchedule};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::container::{decode, encode, Dtype, Header};
use crate::error::{Error, FormatError, Result};

pub const ARCHITECTURE: &str = "conv3x3-relu-conv3x3-relu-conv3x3";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    architecture: String,
    modalities: Vec<Modality>,
    hidden: usize,
    schedule: NoiseSchedule,
    init_seed: u64,
    train: TrainConfig,
    adam_t: u64,
    history: Vec<f64>,
}

/// A network together with the optimizer state that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: ConvScoreNet<f32>,
    pub modalities: Vec<Modality>,
    pub init_seed: u64,
    pub train: TrainConfig,
    pub adam: AdamState<f32>,
    pub history: Vec<f64>,
}

impl Checkpoint {
    pub fn new(net: ConvScoreNet<f32>, modalities: Vec<Modality>, init_seed: u64, trainer: &Trainer<f32>) -> Self {
        Self {
            net,
            modalities,
            init_seed,
            train: *trainer.config(),
            adam: trainer.adam().clone(),
            history: trainer.history().to_vec(),
        }
    }

    pub fn epoch(&self) -> usize {
        self.history.len()
    }

    /// Trainer positioned after the last completed epoch, running to `cfg.epochs`.
    pub fn trainer(&self, cfg: TrainConfig) -> mcdiff_core::Result<Trainer<f32>> {
        Trainer::resume(cfg, self.adam.clone(), self.history.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Meta {
            architecture: ARCHITECTURE.to_string(),
            modalities: self.modalities.clone(),
            hidden: self.net.hidden(),
            schedule: *mcdiff_core::score::ScoreModel::schedule(&self.net),
            init_seed: self.init_seed,
            train: self.train,
            adam_t: self.adam.t,
            history: self.history.clone(),
        };
        let n = self.net.params().len();
        let extra = match serde_json::to_value(&meta).expect("meta serializes") {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        let header = Header::new("checkpoint", n, 3, 1, Dtype::F32le).with_extra(&extra);
        let blob: Vec<u8> = [self.net.params(), &self.adam.m, &self.adam.v]
            .iter()
            .flat_map(|row| row.iter().flat_map(|v| v.to_le_bytes()))
            .collect();
        encode(&header, &blob)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let (header, blob) = decode(bytes)?;
        if header.kind != "checkpoint" {
            return Err(FormatError::WrongKind {
                expected: "checkpoint".into(),
                found: header.kind,
            });
        }
        if header.dtype != Dtype::F32le || header.height != 3 || header.channels != 1 {
            return Err(FormatError::Header("checkpoint blob must be 3 rows of f32le".into()));
        }
        let meta: Meta = serde_json::from_value(Value::Object(header.extra.clone()))
            .map_err(|e| FormatError::Header(e.to_string()))?;
        if meta.architecture != ARCHITECTURE {
            return Err(FormatError::Header(format!("unknown architecture {}", meta.architecture)));
        }
        let values: Vec<f32> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        let n = header.width;
        let net = ConvScoreNet::from_params(meta.modalities.len(), meta.hidden, meta.schedule, values[..n].to_vec())
            .map_err(|e| FormatError::Header(e.to_string()))?;
        let adam = AdamState {
            m: values[n..2 * n].to_vec(),
            v: values[2 * n..].to_vec(),
            t: meta.adam_t,
        };
        Ok(Self {
            net,
            modalities: meta.modalities,
            init_seed: meta.init_seed,
            train: meta.train,
            adam,
            history: meta.history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::format(path, e))
    }
}
