//! JSON checkpoint: parameters plus the metadata needed to resume or sample.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::{Model, NetworkConfig};
use crate::diffusion::ScheduleConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Multiplier applied to codec latents before diffusion.
pub const DEFAULT_LATENT_SCALE: f64 = 0.25;

fn default_latent_scale() -> f64 {
    DEFAULT_LATENT_SCALE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Training stage that produced the parameters (0 for a fresh init).
    pub stage: u8,
    /// Cumulative optimiser steps.
    pub step: usize,
    pub schedule: ScheduleConfig,
    pub codec_seed: u64,
    pub network: NetworkConfig,
    #[serde(default = "default_latent_scale")]
    pub latent_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub meta: CheckpointMeta,
    pub params: ParamStore,
}

impl Checkpoint {
    /// Freshly initialised parameters at stage 0.
    pub fn init(network: NetworkConfig, schedule: ScheduleConfig, codec_seed: u64) -> Result<Self> {
        let params = ParamStore::init(&network)?;
        Ok(Self {
            version: CHECKPOINT_VERSION,
            meta: CheckpointMeta {
                stage: 0,
                step: 0,
                schedule,
                codec_seed,
                network,
                latent_scale: DEFAULT_LATENT_SCALE,
                tag: None,
            },
            params,
        })
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_parts(self.meta.network.clone(), self.params.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        if !(ck.meta.latent_scale > 0.0 && ck.meta.latent_scale.is_finite()) {
            return Err(Error::Checkpoint(format!("latent scale {} must be positive", ck.meta.latent_scale)));
        }
        ck.model()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
