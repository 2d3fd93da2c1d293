use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curation::{Aggregation, Domain, ToySpec};
use crate::error::{Error, Result};
use crate::training::{ModelSpec, TrainConfig, DEFAULT_SAMPLE_STEPS};

pub const PLAN_SCHEMA: u32 = 1;

/// The five synthetic-to-real ratios of the scaling experiment.
pub const RATIO_LABELS: [&str; 5] = ["0:1", "1:1", "2:1", "4:1", "8:1"];

/// Where a dataset comes from: an existing manifest or a toy render.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Path to a manifest; relative paths resolve against the plan file.
    Manifest(PathBuf),
    Toy {
        spec: ToySpec,
        /// Render seed; derived from the plan seed when absent.
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanData {
    pub real: DataSource,
    pub synthetic: DataSource,
    /// Held-out real clips every group is scored on.
    pub eval: DataSource,
}

/// Step count plus optional overrides of the stage defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_length: Option<usize>,
}

impl StagePlan {
    /// The stage's default config with this plan's overrides applied.
    pub fn config(&self, stage: u8, model: &ModelSpec, seed: u64) -> Result<TrainConfig> {
        let mut c = match stage {
            1 => TrainConfig::stage1(),
            2 => TrainConfig::stage2(),
            s => return Err(Error::Plan(format!("no training stage {s}"))),
        };
        c.steps = self.steps;
        c.seed = seed;
        c.model = model.clone();
        if let Some(b) = self.batch_size {
            c.batch_size = b;
        }
        if let Some(lr) = self.learning_rate {
            c.learning_rate = lr;
        }
        if let Some(l) = self.clip_length {
            c.clip_length = l;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionPlan {
    /// Synthetic videos added to the real set by each strategy.
    pub n: usize,
    #[serde(default)]
    pub aggregation: Aggregation,
    /// Hand-picked ids for the manual group; a motion-family heuristic
    /// picks them when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual_ids: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalPlan {
    #[serde(default = "default_sample_steps")]
    pub sample_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_frames: Option<usize>,
    /// Fill the LPIPS column with a grid-colour embedding distance; the
    /// column is absent otherwise.
    #[serde(default)]
    pub perceptual_proxy: bool,
}

fn default_sample_steps() -> usize {
    DEFAULT_SAMPLE_STEPS
}

impl Default for EvalPlan {
    fn default() -> Self {
        Self {
            sample_steps: DEFAULT_SAMPLE_STEPS,
            max_frames: None,
            perceptual_proxy: false,
        }
    }
}

fn default_ratios() -> Vec<String> {
    RATIO_LABELS.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanKind {
    /// Baseline trained on real data, then fine-tuned on synthetic data.
    Finetune { finetune: StagePlan },
    /// One model per synthetic-to-real ratio, each trained from scratch.
    RatioScale {
        #[serde(default = "default_ratios")]
        ratios: Vec<String>,
    },
    /// Real data plus `n` synthetic videos picked by each strategy.
    TargetedSelect { selection: SelectionPlan },
}

impl PlanKind {
    pub fn name(&self) -> &'static str {
        match self {
            PlanKind::Finetune { .. } => "finetune",
            PlanKind::RatioScale { .. } => "ratio_scale",
            PlanKind::TargetedSelect { .. } => "targeted_select",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub schema: u32,
    pub name: String,
    pub seed: u64,
    /// Output directory; relative paths resolve against the output root.
    pub output: PathBuf,
    #[serde(flatten)]
    pub kind: PlanKind,
    pub data: PlanData,
    #[serde(default)]
    pub model: ModelSpec,
    pub stage1: StagePlan,
    pub stage2: StagePlan,
    #[serde(default)]
    pub eval: EvalPlan,
}

/// Parses `"syn:real"`.
pub fn parse_ratio(label: &str) -> Result<(u32, u32)> {
    let bad = || Error::Plan(format!("ratio `{label}` is not of the form syn:real"));
    let (s, r) = label.split_once(':').ok_or_else(bad)?;
    let s: u32 = s.trim().parse().map_err(|_| bad())?;
    let r: u32 = r.trim().parse().map_err(|_| bad())?;
    if r == 0 {
        return Err(bad());
    }
    Ok((s, r))
}

impl ExperimentPlan {
    pub fn from_json(text: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(text).map_err(|e| Error::Plan(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != PLAN_SCHEMA {
            return Err(Error::Plan(format!("schema {} (expected {PLAN_SCHEMA})", self.schema)));
        }
        if self.name.is_empty() {
            return Err(Error::Plan("plan name is empty".into()));
        }
        for (role, src, domain) in [
            ("real", &self.data.real, Domain::Real),
            ("synthetic", &self.data.synthetic, Domain::Synthetic),
            ("eval", &self.data.eval, Domain::Real),
        ] {
            if let DataSource::Toy { spec, .. } = src {
                spec.validate()?;
                if spec.domain != domain {
                    return Err(Error::Plan(format!("the {role} toy spec renders {:?} videos", spec.domain)));
                }
            }
        }
        if self.eval.sample_steps == 0 {
            return Err(Error::Plan("eval.sample_steps must be positive".into()));
        }
        self.stage1.config(1, &self.model, 0)?;
        self.stage2.config(2, &self.model, 0)?;
        match &self.kind {
            PlanKind::Finetune { finetune } => {
                finetune.config(2, &self.model, 0)?;
            }
            PlanKind::RatioScale { ratios } => {
                if ratios.is_empty() {
                    return Err(Error::Plan("ratio_scale needs at least one ratio".into()));
                }
                let mut seen = std::collections::HashSet::new();
                for r in ratios {
                    parse_ratio(r)?;
                    if !seen.insert(r) {
                        return Err(Error::Plan(format!("ratio `{r}` listed twice")));
                    }
                }
            }
            PlanKind::TargetedSelect { selection } => {
                if selection.n == 0 {
                    return Err(Error::Plan("selection.n must be positive".into()));
                }
                if let Some(ids) = &selection.manual_ids {
                    if ids.len() != selection.n {
                        return Err(Error::Plan(format!(
                            "{} manual ids given for n = {}",
                            ids.len(),
                            selection.n
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A stable per-purpose seed: the first eight bytes of
/// `sha256("{base}/{purpose}")`.
pub fn derive_seed(base: u64, purpose: &str) -> u64 {
    let d = Sha256::digest(format!("{base}/{purpose}").as_bytes());
    u64::from_le_bytes(d[..8].try_into().unwrap())
}
