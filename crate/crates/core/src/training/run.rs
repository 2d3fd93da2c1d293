use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::{BatchSampler, LatentCodec, NoObserver, TrainObserver};
use super::optim::{Adam, AdamConfig};
use super::step::training_step;
use crate::curation::{Domain, Manifest};
use crate::denoiser::params::Trainable;
use crate::denoiser::{Checkpoint, ParamGroup};
use crate::error::{Error, Result};

/// Window of the moving average kept in run records.
pub const MOVING_AVERAGE_WINDOW: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    /// Mean loss over the last `MOVING_AVERAGE_WINDOW` steps.
    pub moving_average: f64,
    pub wall_ms: f64,
}

/// Append-only log of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: String,
    pub stage: u8,
    pub seed: u64,
    pub config_hash: String,
    pub manifest_len: usize,
    pub steps: Vec<StepRecord>,
    pub wall_clock_s: f64,
}

impl RunRecord {
    fn new(kind: &str, config: &TrainConfig, manifest_len: usize) -> Self {
        Self {
            kind: kind.into(),
            stage: config.stage,
            seed: config.seed,
            config_hash: config.hash(),
            manifest_len,
            steps: Vec::new(),
            wall_clock_s: 0.0,
        }
    }

    fn push(&mut self, loss: f64, wall_ms: f64) {
        let step = self.steps.len();
        let lo = (step + 1).saturating_sub(MOVING_AVERAGE_WINDOW);
        let window = self.steps[lo..].iter().map(|s| s.loss).sum::<f64>() + loss;
        self.steps.push(StepRecord {
            step,
            loss,
            moving_average: window / (step + 1 - lo) as f64,
            wall_ms,
        });
    }

    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }

    /// Mean loss over steps `[start, start + len)`.
    pub fn mean_loss(&self, start: usize, len: usize) -> Option<f64> {
        let s = self.steps.get(start..start + len)?;
        (!s.is_empty()).then(|| s.iter().map(|r| r.loss).sum::<f64>() / len as f64)
    }

    /// Header line, one line per step, then a summary line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        let header = serde_json::json!({
            "record": "header",
            "kind": self.kind,
            "stage": self.stage,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "manifest_len": self.manifest_len,
        });
        writeln!(out, "{header}").unwrap();
        for s in &self.steps {
            let mut v = serde_json::to_value(s)?;
            v["record"] = "step".into();
            writeln!(out, "{v}").unwrap();
        }
        let summary = serde_json::json!({
            "record": "summary",
            "steps": self.steps.len(),
            "final_moving_average": self.steps.last().map(|s| s.moving_average),
            "wall_clock_s": self.wall_clock_s,
        });
        writeln!(out, "{summary}").unwrap();
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub record: RunRecord,
}

/// The shared optimisation loop. `config.stage` selects the protocol:
/// stage 1 trains every parameter on single frames, stage 2 trains only the
/// motion modules on clips.
pub fn run_training(
    kind: &str,
    config: &TrainConfig,
    init: Checkpoint,
    manifest: &Manifest,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutput> {
    config.validate()?;
    let mut record = RunRecord::new(kind, config, manifest.len());
    let started = Instant::now();
    let mut ck = init;
    let mut model = ck.model()?;
    let schedule = ck.meta.schedule.build()?;
    let codec = LatentCodec::new(ck.meta.codec_seed, ck.meta.latent_scale);
    let mut sampler = BatchSampler::new(config, manifest, model.config(), &codec, schedule)?;
    let trainable = match config.stage {
        1 => Trainable::All,
        _ => Trainable::Only(ParamGroup::Temporal),
    };
    let mut opt = Adam::new(AdamConfig::new(config.learning_rate, config.weight_decay));
    for step in 0..config.steps {
        let t0 = Instant::now();
        let batch = sampler.draw_batch(step, config.batch_size, observer)?;
        let out = training_step(&model, &batch, trainable).map_err(|e| match e {
            Error::NonFiniteLoss { t, weight, loss, .. } => Error::NonFiniteLoss { step, t, weight, loss },
            e => e,
        })?;
        opt.update(model.params_mut(), &out.grads)?;
        record.push(out.loss, t0.elapsed().as_secs_f64() * 1e3);
        if (step + 1) % 100 == 0 {
            log::debug!("{kind} step {} loss {:.5}", step + 1, record.steps[step].moving_average);
        }
    }
    record.wall_clock_s = started.elapsed().as_secs_f64();
    ck.params = model.params().clone();
    ck.meta.stage = config.stage;
    ck.meta.step += config.steps;
    ck.meta.tag = Some(kind.to_string());
    Ok(TrainOutput { checkpoint: ck, record })
}

/// Trains a fresh model (`config.model`) with the single-frame protocol.
pub fn train_stage1(config: &TrainConfig, manifest: &Manifest) -> Result<TrainOutput> {
    if config.stage != 1 {
        return Err(Error::invalid("train_stage1 needs a stage-1 config"));
    }
    let m = &config.model;
    let mut init = Checkpoint::init(m.network.clone(), m.schedule.clone(), m.codec_seed)?;
    init.meta.latent_scale = m.latent_scale;
    run_training("stage1", config, init, manifest, &mut NoObserver)
}

/// Trains the motion modules of a stage-1 checkpoint; spatial parameters
/// stay frozen.
pub fn train_stage2(config: &TrainConfig, stage1: &Checkpoint, manifest: &Manifest) -> Result<TrainOutput> {
    train_stage2_observed(config, stage1, manifest, &mut NoObserver)
}

pub fn train_stage2_observed(
    config: &TrainConfig,
    stage1: &Checkpoint,
    manifest: &Manifest,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutput> {
    if config.stage != 2 {
        return Err(Error::invalid("train_stage2 needs a stage-2 config"));
    }
    if stage1.meta.stage < 1 {
        return Err(Error::Checkpoint("stage-2 training needs a trained stage-1 checkpoint".into()));
    }
    stage1.model()?;
    run_training("stage2", config, stage1.clone(), manifest, observer)
}

/// Continues training on synthetic data under the protocol of the stage
/// that produced `checkpoint`. Zero steps return the checkpoint unchanged.
pub fn finetune(checkpoint: &Checkpoint, synthetic: &Manifest, config: &TrainConfig) -> Result<TrainOutput> {
    if checkpoint.meta.stage < 1 {
        return Err(Error::Checkpoint("fine-tuning needs a trained checkpoint".into()));
    }
    if let Some(e) = synthetic.entries.iter().find(|e| e.domain == Domain::Real) {
        return Err(Error::Manifest(format!(
            "fine-tuning takes synthetic data only; `{}` is real",
            e.id
        )));
    }
    let config = TrainConfig {
        stage: checkpoint.meta.stage,
        ..config.clone()
    };
    if config.steps == 0 {
        config.validate()?;
        return Ok(TrainOutput {
            checkpoint: checkpoint.clone(),
            record: RunRecord::new("finetune", &config, synthetic.len()),
        });
    }
    run_training("finetune", &config, checkpoint.clone(), synthetic, &mut NoObserver)
}
