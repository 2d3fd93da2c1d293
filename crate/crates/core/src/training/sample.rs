use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{appearance_embedder, frame, LatentCodec};
use crate::conditioning::{project_appearance, reference_write, ControlBundle, GuidanceSignals, ImageEmbedder, MemoryBank};
use crate::denoiser::{assemble_input, denoise, Checkpoint, DenoiseMode, Model};
use crate::diffusion::{ddim_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_SAMPLE_STEPS: usize = 50;

/// Everything a generation is conditioned on.
#[derive(Clone, Debug)]
pub struct SampleInputs {
    /// `[3, H, W]`.
    pub reference_image: Tensor,
    pub controls: ControlBundle,
    /// `[3, H, W]` background plate.
    pub background: Tensor,
    /// `[F, 3, H, W]` foreground masks.
    pub mask: Tensor,
}

/// Anything that predicts a velocity for a noisy latent video.
pub trait VelocityPredictor {
    fn predict(&self, z_t: &Tensor, t: usize) -> Result<Tensor>;
}

/// The conditional denoiser with its conditioning precomputed.
pub struct ModelPredictor<'a> {
    model: &'a Model,
    bank: MemoryBank,
    c_proj: Tensor,
    signals: GuidanceSignals,
    z_bg: Tensor,
    z_fg: Tensor,
    mode: DenoiseMode,
}

impl<'a> ModelPredictor<'a> {
    pub fn new(model: &'a Model, stage: u8, codec: &LatentCodec, inputs: &SampleInputs) -> Result<Self> {
        let f = inputs.controls.frames();
        let (h, w) = (inputs.controls.height(), inputs.controls.width());
        inputs.reference_image.ensure_shape(&[3, h, w])?;
        inputs.background.ensure_shape(&[3, h, w])?;
        inputs.mask.ensure_shape(&[f, 3, h, w])?;
        let cfg = model.config();
        if f > cfg.max_frames {
            return Err(Error::TooManyFrames {
                frames: f,
                max: cfg.max_frames,
            });
        }
        let bank = reference_write(model, &codec.encode(&inputs.reference_image)?)?;
        let c_clip = appearance_embedder(cfg)?.embed(&inputs.reference_image)?;
        let c_proj = project_appearance(model, &c_clip)?;
        let signals = GuidanceSignals::compute(model, &inputs.controls)?;
        let bg = codec.encode(&inputs.background)?;
        let z_bg = Tensor::concat(&vec![&bg; f], 0)?.reshape(&[f, 4, h / 8, w / 8])?;
        let z_fg = codec.encode_video(&inputs.mask)?;
        Ok(Self {
            model,
            bank,
            c_proj,
            signals,
            z_bg,
            z_fg,
            mode: if stage >= 2 {
                DenoiseMode::ThreeD
            } else {
                DenoiseMode::TwoD
            },
        })
    }
}

impl VelocityPredictor for ModelPredictor<'_> {
    fn predict(&self, z_t: &Tensor, t: usize) -> Result<Tensor> {
        if self.mode == DenoiseMode::ThreeD {
            let input = assemble_input(z_t, &self.z_bg, &self.z_fg)?;
            return Ok(denoise(self.model, &input, &self.bank, &self.c_proj, &self.signals, t, self.mode)?.into_tensor());
        }
        // frame-wise
        let f = z_t.dim(0);
        let mut out = Vec::with_capacity(f);
        for i in 0..f {
            let input = assemble_input(&z_t.narrow(0, i, 1)?, &self.z_bg.narrow(0, i, 1)?, &self.z_fg.narrow(0, i, 1)?)?;
            let signals = GuidanceSignals {
                p_body: self.signals.p_body.narrow(0, i, 1)?,
                p_normal: self.signals.p_normal.narrow(0, i, 1)?,
            };
            out.push(denoise(self.model, &input, &self.bank, &self.c_proj, &signals, t, self.mode)?.into_tensor());
        }
        Tensor::concat(&out.iter().collect::<Vec<_>>(), 0)
    }
}

/// Seeded `N(0, I)` starting latent.
pub fn initial_noise(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Deterministic DDIM from seeded noise; returns the clean latent.
pub fn sample_latent(
    predictor: &dyn VelocityPredictor,
    schedule: &NoiseSchedule,
    shape: &[usize],
    steps: usize,
    seed: u64,
) -> Result<Tensor> {
    ddim_sample(&initial_noise(shape, seed), schedule, steps, |z, t| predictor.predict(z, t))
}

/// Latent sample decoded to `[F, 3, H, W]` and clamped to `[0, 1]`.
pub fn sample_with(
    predictor: &dyn VelocityPredictor,
    schedule: &NoiseSchedule,
    codec: &LatentCodec,
    shape: &[usize],
    steps: usize,
    seed: u64,
) -> Result<Tensor> {
    let z0 = sample_latent(predictor, schedule, shape, steps, seed)?;
    Ok(codec.decode_video(&z0)?.map(|v| v.clamp(0.0, 1.0)))
}

/// Generates a video with a checkpoint.
pub fn sample(checkpoint: &Checkpoint, inputs: &SampleInputs, steps: usize, seed: u64) -> Result<Tensor> {
    let model = checkpoint.model()?;
    let codec = LatentCodec::new(checkpoint.meta.codec_seed, checkpoint.meta.latent_scale);
    let schedule = checkpoint.meta.schedule.build()?;
    let predictor = ModelPredictor::new(&model, checkpoint.meta.stage, &codec, inputs)?;
    let c = &inputs.controls;
    let shape = [c.frames(), 4, c.height() / 8, c.width() / 8];
    sample_with(&predictor, &schedule, &codec, &shape, steps, seed)
}

/// Returns the exact velocity towards a planted clean latent.
pub struct OraclePredictor<'a> {
    pub x0: Tensor,
    pub schedule: &'a NoiseSchedule,
}

impl VelocityPredictor for OraclePredictor<'_> {
    fn predict(&self, z_t: &Tensor, t: usize) -> Result<Tensor> {
        let ab = self.schedule.alpha_bar(t)?;
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        // eps = (z - a x0) / s; v = a eps - s x0
        let eps = z_t.lincomb(1.0 / s, &self.x0, -a / s)?;
        eps.lincomb(a, &self.x0, -s)
    }
}

/// Reference frame, controls, background and masks of a loaded video.
pub fn inputs_from_video(video: &crate::curation::VideoSample, ref_frame: usize) -> Result<SampleInputs> {
    Ok(SampleInputs {
        reference_image: frame(&video.frames, ref_frame),
        controls: ControlBundle::new(video.body.clone(), video.face.clone(), video.normal.clone())?,
        background: video.background.clone(),
        mask: video.mask.clone(),
    })
}
