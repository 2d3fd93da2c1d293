mod common;

use simreal::curation::{Domain, Manifest};
use simreal::denoiser::{Checkpoint, ParamGroup, Trainable};
use simreal::diffusion::make_schedule;
use simreal::training::{
    finetune, inputs_from_video, sample, sample_with, train_stage1, train_stage2, train_stage2_observed,
    training_step, BatchSampler, LatentCodec, NoObserver, OraclePredictor, SampleInfo, TrainConfig,
};
use simreal::Error;

use common::{tiny_model, toy_manifest};

fn stage1(steps: usize, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::stage1();
    c.model = tiny_model();
    c.steps = steps;
    c.batch_size = 2;
    c.seed = seed;
    c
}

fn stage2(steps: usize, clip: usize) -> TrainConfig {
    let mut c = TrainConfig::stage2();
    c.model = tiny_model();
    c.steps = steps;
    c.clip_length = clip;
    c
}

struct Fixture {
    _dir: tempfile::TempDir,
    real: Manifest,
    synthetic: Manifest,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let real = toy_manifest(&dir.path().join("real"), 2, Domain::Real, 8, 1);
    let synthetic = toy_manifest(&dir.path().join("syn"), 2, Domain::Synthetic, 8, 2);
    Fixture {
        _dir: dir,
        real,
        synthetic,
    }
}

#[test]
fn loss_matches_recomputation_from_traces() {
    let f = fixture();
    let config = stage2(1, 4);
    let model = simreal::denoiser::Model::new(config.model.network.clone()).unwrap();
    let codec = LatentCodec::new(0, config.model.latent_scale);
    let schedule = config.model.schedule.build().unwrap();
    let mut sampler = BatchSampler::new(&config, &f.real, model.config(), &codec, schedule).unwrap();
    let batch = sampler.draw_batch(0, 3, &mut NoObserver).unwrap();
    let out = training_step(&model, &batch, Trainable::All).unwrap();
    let mut total = 0.0;
    for (s, tr) in batch.iter().zip(&out.traces) {
        let d = tr.v_pred.zip_map(&s.v_target, |a, b| (a - b) * (a - b)).unwrap();
        let mse = d.sum() / d.len() as f64;
        assert!((mse - tr.mse).abs() < 1e-12);
        assert_eq!(tr.weight, s.weight);
        total += s.weight * mse;
    }
    assert!((out.loss - total / batch.len() as f64).abs() < 1e-12);
    // every parameter receives a gradient of its own shape
    for (name, p) in model.params().iter() {
        assert_eq!(out.grads[name].shape(), p.value.shape(), "{name}");
    }
}

#[test]
fn zero_snr_samples_carry_no_loss() {
    let f = fixture();
    let config = stage1(1, 0);
    let model = simreal::denoiser::Model::new(config.model.network.clone()).unwrap();
    let codec = LatentCodec::new(0, config.model.latent_scale);
    let schedule = config.model.schedule.build().unwrap();
    let mut sampler = BatchSampler::new(&config, &f.real, model.config(), &codec, schedule).unwrap();
    let mut s = sampler.draw(0, &mut NoObserver).unwrap();
    s.weight = 0.0;
    let out = training_step(&model, &[s], Trainable::All).unwrap();
    assert_eq!(out.loss, 0.0);
    assert!(out.grads.values().all(|g| g.max_abs() == 0.0));
}

#[test]
fn training_is_deterministic() {
    let f = fixture();
    let a = train_stage1(&stage1(4, 3), &f.real).unwrap();
    let b = train_stage1(&stage1(4, 3), &f.real).unwrap();
    assert_eq!(a.checkpoint, b.checkpoint);
    assert_eq!(a.record.losses(), b.record.losses());
    let c = train_stage1(&stage1(4, 4), &f.real).unwrap();
    assert_ne!(a.record.losses(), c.record.losses());
    assert_eq!(a.checkpoint.meta.stage, 1);
    assert_eq!(a.checkpoint.meta.step, 4);
}

#[test]
fn stage_two_freezes_spatial_parameters() {
    let f = fixture();
    let s1 = train_stage1(&stage1(2, 0), &f.real).unwrap();
    let s2 = train_stage2(&stage2(3, 4), &s1.checkpoint, &f.real).unwrap();
    for (name, p) in s1.checkpoint.params.iter() {
        let q = s2.checkpoint.params.get(name).unwrap();
        if p.group == ParamGroup::Spatial {
            assert_eq!(p.value, q.value, "{name} moved");
        }
    }
    assert_eq!(s2.checkpoint.meta.stage, 2);
    assert_eq!(s2.checkpoint.meta.step, 5);
    let fresh = Checkpoint::init(tiny_model().network, tiny_model().schedule, 0).unwrap();
    assert!(matches!(train_stage2(&stage2(1, 4), &fresh, &f.real), Err(Error::Checkpoint(_))));
}

#[test]
fn shuffle_applies_only_in_stage_two() {
    let f = fixture();
    let s1 = train_stage1(&stage1(1, 0), &f.real).unwrap();
    let mut c = stage2(6, 8);
    c.shuffle_p = 1.0;
    let mut seen: Vec<SampleInfo> = Vec::new();
    train_stage2_observed(&c, &s1.checkpoint, &f.real, &mut seen).unwrap();
    assert_eq!(seen.len(), 6);
    for info in &seen {
        let mut sorted = info.control_order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..8).collect::<Vec<_>>());
        assert!(info.dropped.is_empty(), "stage-2 dropout is off by default");
    }
    assert!(seen.iter().any(|i| i.control_order != (0..8).collect::<Vec<_>>()));

    c.shuffle_p = 0.0;
    let mut seen: Vec<SampleInfo> = Vec::new();
    train_stage2_observed(&c, &s1.checkpoint, &f.real, &mut seen).unwrap();
    assert!(seen.iter().all(|i| i.control_order == (0..8).collect::<Vec<_>>()));
}

#[test]
fn stage_one_draws_single_frames_and_drops_controls() {
    let f = fixture();
    let mut c = stage1(3, 0);
    c.dropout_p = 1.0;
    c.shuffle_p = 1.0;
    let model = simreal::denoiser::Model::new(c.model.network.clone()).unwrap();
    let codec = LatentCodec::new(0, c.model.latent_scale);
    let mut sampler =
        BatchSampler::new(&c, &f.real, model.config(), &codec, c.model.schedule.build().unwrap()).unwrap();
    let mut seen: Vec<SampleInfo> = Vec::new();
    for step in 0..4 {
        sampler.draw(step, &mut seen).unwrap();
    }
    for info in &seen {
        assert_eq!(info.frames.len(), 1);
        assert_eq!(info.ref_frame, info.frames[0]);
        assert_eq!(info.dropped.len(), 3);
        assert_eq!(info.control_order, [0]);
        assert!((1..=1000).contains(&info.t));
    }
}

#[test]
fn stage_two_clips_follow_the_frame_rate() {
    let f = fixture();
    let s1 = train_stage1(&stage1(1, 0), &f.real).unwrap();
    let mut c = stage2(4, 3);
    c.frame_rate = 4.0;
    let mut seen: Vec<SampleInfo> = Vec::new();
    train_stage2_observed(&c, &s1.checkpoint, &f.real, &mut seen).unwrap();
    for info in &seen {
        assert_eq!(info.frames.len(), 3);
        assert!(info.frames.windows(2).all(|w| w[1] - w[0] == 2));
        assert!(info.frames.contains(&info.ref_frame));
    }
}

#[test]
fn finetune_contract() {
    let f = fixture();
    let s1 = train_stage1(&stage1(2, 0), &f.real).unwrap();
    let s2 = train_stage2(&stage2(1, 4), &s1.checkpoint, &f.real).unwrap();
    let mut c = stage2(0, 4);
    let same = finetune(&s2.checkpoint, &f.synthetic, &c).unwrap();
    assert_eq!(same.checkpoint, s2.checkpoint);

    assert!(matches!(finetune(&s2.checkpoint, &f.real, &c), Err(Error::Manifest(_))));

    c.steps = 2;
    let tuned = finetune(&s2.checkpoint, &f.synthetic, &c).unwrap();
    assert_eq!(tuned.checkpoint.meta.tag.as_deref(), Some("finetune"));
    assert_eq!(tuned.checkpoint.meta.stage, 2);
    // a stage-2 checkpoint keeps its spatial weights under fine-tuning
    for (name, p) in s2.checkpoint.params.iter() {
        if p.group == ParamGroup::Spatial {
            assert_eq!(&p.value, &tuned.checkpoint.params.get(name).unwrap().value);
        }
    }
}

#[test]
fn sampling_is_seeded_and_survives_a_checkpoint_round_trip() {
    let f = fixture();
    let s1 = train_stage1(&stage1(2, 0), &f.real).unwrap();
    let video = f.real.entries[0].load().unwrap().slice(0, 4).unwrap();
    let inputs = inputs_from_video(&video, 0).unwrap();
    let a = sample(&s1.checkpoint, &inputs, 3, 7).unwrap();
    let b = sample(&s1.checkpoint, &inputs, 3, 7).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.shape(), video.frames.shape());
    assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_ne!(a, sample(&s1.checkpoint, &inputs, 3, 8).unwrap());
    sample(&s1.checkpoint, &inputs, 1, 7).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    s1.checkpoint.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(sample(&back, &inputs, 3, 7).unwrap(), a);
}

#[test]
fn oracle_sampler_recovers_the_planted_video() {
    let f = fixture();
    let schedule = make_schedule(1000, 1e-4, 0.02, true).unwrap();
    let codec = LatentCodec::new(3, 0.25);
    let frames = f.real.entries[1].load().unwrap().frames;
    let x0 = codec.encode_video(&frames).unwrap();
    let oracle = OraclePredictor {
        x0: x0.clone(),
        schedule: &schedule,
    };
    for steps in [1, 10, 50] {
        let video = sample_with(&oracle, &schedule, &codec, x0.shape(), steps, 1).unwrap();
        let truth = codec.decode_video(&x0).unwrap().map(|v| v.clamp(0.0, 1.0));
        assert!(video.max_abs_diff(&truth) < 1e-9, "{steps} steps");
    }
}
