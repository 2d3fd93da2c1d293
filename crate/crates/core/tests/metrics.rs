mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simreal::curation::{render_toy_video, Domain, MotionFamily, ToyVideoEmbedder};
use simreal::diffusion::make_schedule;
use simreal::metrics::{
    csim, evaluate, frechet_distance, psnr, ssim, EvalOptions, Evaluators, IdentityEmbedder, OracleGenerator,
    ToyIdentityEmbedder, PSNR_CAP,
};
use simreal::training::LatentCodec;
use simreal::Tensor;

use common::{toy_manifest, toy_spec};

/// Plain single-channel SSIM: BT.601 luma, 11-tap Gaussian (sigma 1.5),
/// mean over every fully contained window.
fn reference_ssim(a: &Tensor, b: &Tensor) -> f64 {
    let (h, w) = (a.shape()[1], a.shape()[2]);
    let luma = |t: &Tensor, y: usize, x: usize| {
        let d = t.data();
        0.299 * d[y * w + x] + 0.587 * d[h * w + y * w + x] + 0.114 * d[2 * h * w + y * w + x]
    };
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let gs: f64 = g.iter().sum::<f64>().powi(2);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut n = 0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..11 {
                for dx in 0..11 {
                    let k = g[dy] * g[dx] / gs;
                    let (p, q) = (luma(a, y0 + dy, x0 + dx), luma(b, y0 + dy, x0 + dx));
                    ma += k * p;
                    mb += k * q;
                    saa += k * p * p;
                    sbb += k * q * q;
                    sab += k * p * q;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            n += 1;
        }
    }
    total / n as f64
}

fn checkerboard(h: usize, w: usize, cell: usize) -> Tensor {
    Tensor::from_fn(&[3, h, w], |i| {
        let (y, x) = ((i / w) % h, i % w);
        if (y / cell + x / cell) % 2 == 0 {
            0.9
        } else {
            0.1
        }
    })
}

#[test]
fn ssim_matches_a_direct_implementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = Tensor::from_fn(&[3, 24, 20], |_| rng.random_range(0.0..1.0));
    let b = a.map(|v| (v + 0.1).min(1.0));
    assert!((ssim(&a, &b).unwrap() - reference_ssim(&a, &b)).abs() < 1e-10);

    let board = checkerboard(32, 32, 4);
    let flat = Tensor::full(&[3, 32, 32], 0.5);
    let blend = board.lincomb(0.5, &flat, 0.5).unwrap();
    let s = ssim(&board, &blend).unwrap();
    assert!((s - reference_ssim(&board, &blend)).abs() < 1e-10);
    assert!(s < 1.0 && s > 0.0);
    assert!((ssim(&board, &board).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn ssim_of_videos_is_the_frame_mean() {
    let a = checkerboard(16, 16, 2).reshape(&[1, 3, 16, 16]).unwrap();
    let b = Tensor::full(&[1, 3, 16, 16], 0.4);
    let video_a = Tensor::concat(&[&a, &a], 0).unwrap();
    let video_b = Tensor::concat(&[&a, &b], 0).unwrap();
    let frame = ssim(&a.clone().reshape(&[3, 16, 16]).unwrap(), &b.reshape(&[3, 16, 16]).unwrap()).unwrap();
    assert!((ssim(&video_a, &video_b).unwrap() - (1.0 + frame) / 2.0).abs() < 1e-12);
}

#[test]
fn psnr_decreases_with_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let clean = Tensor::from_fn(&[3, 16, 16], |_| rng.random_range(0.2..0.8));
    let noise = Tensor::randn(&[3, 16, 16], &mut rng);
    let mut last = f64::INFINITY;
    for sigma in [0.001, 0.01, 0.05, 0.1] {
        let p = psnr(&clean, &clean.lincomb(1.0, &noise, sigma).unwrap()).unwrap();
        assert!(p < last);
        last = p;
    }
    assert_eq!(psnr(&clean, &clean).unwrap(), PSNR_CAP);
}

#[test]
fn frechet_one_dimensional_closed_form() {
    // N(m1, s1^2) vs N(m2, s2^2): (m1 - m2)^2 + (s1 - s2)^2
    let a: Vec<Vec<f64>> = [-1.0, 1.0].iter().map(|&x| vec![x]).collect();
    let b: Vec<Vec<f64>> = [1.0, 5.0].iter().map(|&x| vec![x]).collect();
    let (sa, sb) = (2f64.sqrt(), 8f64.sqrt());
    let want = 9.0 + (sa - sb).powi(2);
    let got = frechet_distance(&a, &b).unwrap();
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    assert!((frechet_distance(&b, &a).unwrap() - got).abs() < 1e-9);
}

#[test]
fn frechet_is_non_negative_for_small_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let set = |rng: &mut ChaCha8Rng| (0..3).map(|_| Tensor::randn(&[6], rng).into_data()).collect::<Vec<_>>();
        let d = frechet_distance(&set(&mut rng), &set(&mut rng)).unwrap();
        assert!(d >= 0.0 && d.is_finite());
    }
}

#[test]
fn identity_similarity_separates_identities() {
    let mut spec = toy_spec(1, Domain::Real, 8);
    let mut embed = |identity: u32, motion: MotionFamily, seed: u64| {
        spec.identity_offset = identity;
        spec.motion = Some(motion);
        let v = render_toy_video(&spec, seed, 0).unwrap();
        ToyIdentityEmbedder.embed(&v.frames, &v.face).unwrap()
    };
    let a = embed(0, MotionFamily::Wave, 1);
    let same = embed(0, MotionFamily::Talk, 2);
    let other = embed(2, MotionFamily::Wave, 1);
    let close = csim(&a, &same).unwrap();
    let far = csim(&a, &other).unwrap();
    assert!(close > far, "{close} vs {far}");
    assert!((csim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn oracle_generator_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let eval = toy_manifest(dir.path(), 3, Domain::Real, 4, 9);
    let generator = OracleGenerator {
        codec: LatentCodec::new(0, 0.25),
        schedule: make_schedule(1000, 1e-4, 0.02, true).unwrap(),
        steps: 10,
        seed: 0,
    };
    let video = ToyVideoEmbedder::default();
    let evaluators = Evaluators {
        video: &video,
        identity: &ToyIdentityEmbedder,
        perceptual: None,
    };
    let r = evaluate(&generator, &eval, &evaluators, EvalOptions::default()).unwrap();
    assert_eq!(r.videos.len(), 3);
    assert!(r.aggregate.psnr > 80.0, "{}", r.aggregate.psnr);
    assert!((r.aggregate.ssim - 1.0).abs() < 1e-6);
    assert!((r.aggregate.csim - 1.0).abs() < 1e-6);
    assert!(r.aggregate.fvd.abs() < 1e-6);
    assert!(r.aggregate.lpips.is_none());
    let mean = r.videos.iter().map(|v| v.psnr).sum::<f64>() / 3.0;
    assert!((mean - r.aggregate.psnr).abs() < 1e-9);

    let short = evaluate(&generator, &eval, &evaluators, EvalOptions { max_frames: Some(2) }).unwrap();
    assert_eq!(short.videos.len(), 3);

    let one = simreal::curation::Manifest::new(eval.entries[..1].to_vec()).unwrap();
    assert!(evaluate(&generator, &one, &evaluators, EvalOptions::default()).is_err());
}
