#![allow(dead_code)]

use std::path::{Path, PathBuf};

use simreal::curation::{generate_toy_dataset, ControlLocators, Domain, Manifest, ManifestEntry, ToySpec, MANIFEST_SCHEMA};
use simreal::denoiser::NetworkConfig;
use simreal::experiments::{DataSource, EvalPlan, ExperimentPlan, PlanData, PlanKind, StagePlan, PLAN_SCHEMA};
use simreal::training::ModelSpec;

pub fn plans_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../plans")
}

pub fn toy_spec(count: usize, domain: Domain, frames: usize) -> ToySpec {
    ToySpec {
        frames,
        ..ToySpec::new(count, domain)
    }
}

pub fn toy_manifest(dir: &Path, count: usize, domain: Domain, frames: usize, seed: u64) -> Manifest {
    generate_toy_dataset(&toy_spec(count, domain, frames), seed, dir).unwrap()
}

/// An entry whose media do not exist; enough for selection and mixing.
pub fn fake_entry(id: &str, domain: Domain, embedding: Option<Vec<f64>>) -> ManifestEntry {
    let p = |s: &str| PathBuf::from(format!("/nonexistent/{id}/{s}"));
    ManifestEntry {
        schema: MANIFEST_SCHEMA,
        id: id.into(),
        domain,
        locator: p("frames"),
        frame_count: 16,
        height: 32,
        width: 32,
        controls: ControlLocators {
            body: p("body"),
            face: p("face"),
            normal: p("normal"),
            mask: p("mask"),
            background: p("background.png"),
        },
        identity: None,
        motion: None,
        embedding,
    }
}

pub fn tiny_model() -> ModelSpec {
    ModelSpec {
        network: NetworkConfig::tiny(),
        ..ModelSpec::default()
    }
}

fn toy_source(count: usize, domain: Domain, prefix: Option<&str>) -> DataSource {
    let mut spec = toy_spec(count, domain, 4);
    spec.id_prefix = prefix.map(str::to_string);
    DataSource::Toy { spec, seed: None }
}

/// A plan that runs in seconds: tiny network, a handful of steps, short clips.
pub fn tiny_plan(kind: PlanKind, output: &Path) -> ExperimentPlan {
    let syn = match &kind {
        PlanKind::RatioScale { .. } => 16,
        _ => 6,
    };
    ExperimentPlan {
        schema: PLAN_SCHEMA,
        name: "tiny".into(),
        seed: 5,
        output: output.to_path_buf(),
        kind,
        data: PlanData {
            real: toy_source(2, Domain::Real, None),
            synthetic: toy_source(syn, Domain::Synthetic, None),
            eval: toy_source(2, Domain::Real, Some("eval")),
        },
        model: tiny_model(),
        stage1: StagePlan {
            steps: 3,
            batch_size: Some(2),
            ..StagePlan::default()
        },
        stage2: StagePlan {
            steps: 2,
            clip_length: Some(4),
            ..StagePlan::default()
        },
        eval: EvalPlan {
            sample_steps: 3,
            max_frames: None,
            perceptual_proxy: true,
        },
    }
}
