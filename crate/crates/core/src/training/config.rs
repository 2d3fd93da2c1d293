use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoiser::{NetworkConfig, DEFAULT_FRAME_RATE, DEFAULT_LATENT_SCALE};
use crate::diffusion::{ScheduleConfig, WeightConfig};
use crate::error::{Error, Result};

pub const STAGE1_LEARNING_RATE: f64 = 1e-4;
pub const STAGE2_LEARNING_RATE: f64 = 5e-5;

/// Architecture and latent space of a model trained from scratch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub network: NetworkConfig,
    pub schedule: ScheduleConfig,
    pub codec_seed: u64,
    pub latent_scale: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            schedule: ScheduleConfig::default(),
            codec_seed: 0,
            latent_scale: DEFAULT_LATENT_SCALE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: u8,
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Frames per stage-2 clip.
    pub clip_length: usize,
    /// Clip sampling rate; source videos are taken to run at 8 fps.
    pub frame_rate: f64,
    /// Per-modality control dropout probability.
    pub dropout_p: f64,
    /// Apply control dropout at stage 2 as well.
    pub stage2_dropout: bool,
    /// Probability of permuting a stage-2 clip's control frames.
    pub shuffle_p: f64,
    pub seed: u64,
    pub weight: WeightConfig,
    pub weight_decay: f64,
    /// Used only when training starts from a fresh initialisation.
    pub model: ModelSpec,
    /// Stage-1 checkpoint a stage-2 run starts from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::stage1()
    }
}

impl TrainConfig {
    pub fn stage1() -> Self {
        Self {
            stage: 1,
            steps: 2000,
            learning_rate: STAGE1_LEARNING_RATE,
            batch_size: 12,
            clip_length: 16,
            frame_rate: DEFAULT_FRAME_RATE,
            dropout_p: 0.01,
            stage2_dropout: false,
            shuffle_p: 0.05,
            seed: 0,
            weight: WeightConfig::default(),
            weight_decay: 0.0,
            model: ModelSpec::default(),
            init_checkpoint: None,
        }
    }

    pub fn stage2() -> Self {
        Self {
            stage: 2,
            steps: 1000,
            learning_rate: STAGE2_LEARNING_RATE,
            batch_size: 1,
            ..Self::stage1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if !matches!(self.stage, 1 | 2) {
            return bad(format!("stage must be 1 or 2, got {}", self.stage));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 || self.clip_length == 0 {
            return bad("batch size and clip length must be positive".into());
        }
        if !(self.frame_rate > 0.0 && self.frame_rate <= DEFAULT_FRAME_RATE) {
            return bad(format!("frame rate {} must lie in (0, {DEFAULT_FRAME_RATE}]", self.frame_rate));
        }
        for (name, p) in [("dropout_p", self.dropout_p), ("shuffle_p", self.shuffle_p)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} outside [0, 1]"));
            }
        }
        if self.weight_decay < 0.0 {
            return bad(format!("weight decay {} is negative", self.weight_decay));
        }
        WeightConfig::new(self.weight.gamma)?;
        if !(self.model.latent_scale > 0.0 && self.model.latent_scale.is_finite()) {
            return bad(format!("latent scale {} must be positive", self.model.latent_scale));
        }
        self.model.network.validate()
    }

    /// Frame stride that resamples the 8 fps source to `frame_rate`.
    pub fn frame_stride(&self) -> usize {
        ((DEFAULT_FRAME_RATE / self.frame_rate).round() as usize).max(1)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Toml(e.to_string()))?;
        if cfg.stage == 2 && cfg.init_checkpoint.is_none() {
            return Err(Error::invalid("a stage-2 run config must name init_checkpoint"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(p), Some(dir)) = (cfg.init_checkpoint.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }
}
