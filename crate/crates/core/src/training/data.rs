use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::TrainConfig;
use crate::conditioning::{drop_controls, ControlBundle, GridColorEmbedder, ImageEmbedder, Modality};
use crate::curation::{Manifest, VideoSample};
use crate::denoiser::{assemble_input, CompositeInput, DenoiseMode, NetworkConfig, ToyCodec};
use crate::diffusion::{add_noise, loss_weight, snr, v_target, NoiseSchedule, WeightConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The appearance embedder matching a network's `clip_dim`.
pub fn appearance_embedder(cfg: &NetworkConfig) -> Result<GridColorEmbedder> {
    let grid = ((cfg.clip_dim / 3) as f64).sqrt().round() as usize;
    if grid == 0 || 3 * grid * grid != cfg.clip_dim {
        return Err(Error::invalid(format!(
            "clip_dim {} is not 3 * g^2 for any grid g",
            cfg.clip_dim
        )));
    }
    Ok(GridColorEmbedder { grid })
}

/// Codec latents multiplied by `scale`.
#[derive(Clone, Debug)]
pub struct LatentCodec {
    pub codec: ToyCodec,
    pub scale: f64,
}

impl LatentCodec {
    pub fn new(seed: u64, scale: f64) -> Self {
        Self {
            codec: ToyCodec::new(seed),
            scale,
        }
    }

    pub fn encode(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.codec.encode(image)?.scale(self.scale))
    }

    pub fn encode_video(&self, video: &Tensor) -> Result<Tensor> {
        Ok(self.codec.encode_video(video)?.scale(self.scale))
    }

    pub fn decode_video(&self, latent: &Tensor) -> Result<Tensor> {
        self.codec.decode_video(&latent.scale(1.0 / self.scale))
    }
}

/// One training example, fully materialised.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub input: CompositeInput,
    /// `[4, h, w]`.
    pub ref_latent: Tensor,
    /// `[clip_dim]`.
    pub c_clip: Tensor,
    pub controls: ControlBundle,
    pub t: usize,
    pub v_target: Tensor,
    pub weight: f64,
    pub mode: DenoiseMode,
}

/// What the sampler drew for one example.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleInfo {
    pub step: usize,
    pub entry_id: String,
    /// Source frame indices of the clip.
    pub frames: Vec<usize>,
    pub ref_frame: usize,
    pub t: usize,
    /// Output control frame `i` is clip frame `control_order[i]`.
    pub control_order: Vec<usize>,
    pub dropped: Vec<Modality>,
}

/// Instrumentation hook called once per drawn example.
pub trait TrainObserver {
    fn on_sample(&mut self, info: &SampleInfo);
}

pub struct NoObserver;

impl TrainObserver for NoObserver {
    fn on_sample(&mut self, _: &SampleInfo) {}
}

impl TrainObserver for Vec<SampleInfo> {
    fn on_sample(&mut self, info: &SampleInfo) {
        self.push(info.clone());
    }
}

/// Latents and embeddings of one video; control maps kept as 8-bit codes.
struct CachedVideo {
    id: String,
    frames: usize,
    height: usize,
    width: usize,
    latents: Tensor,
    bg_latent: Tensor,
    fg_latents: Tensor,
    clips: Vec<Tensor>,
    controls: [Vec<u8>; 3],
}

fn to_codes(t: &Tensor) -> Vec<u8> {
    t.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

impl CachedVideo {
    fn build(id: &str, v: &VideoSample, codec: &LatentCodec, embedder: &dyn ImageEmbedder) -> Result<Self> {
        let f = v.frame_count();
        let clips = (0..f)
            .map(|i| embedder.embed(&frame(&v.frames, i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            id: id.to_string(),
            frames: f,
            height: v.frames.dim(2),
            width: v.frames.dim(3),
            latents: codec.encode_video(&v.frames)?,
            bg_latent: codec.encode(&v.background)?,
            fg_latents: codec.encode_video(&v.mask)?,
            clips,
            controls: [to_codes(&v.body), to_codes(&v.face), to_codes(&v.normal)],
        })
    }

    fn controls(&self, frames: &[usize]) -> Result<ControlBundle> {
        let per = 3 * self.height * self.width;
        let map = |codes: &[u8]| {
            let mut data = Vec::with_capacity(frames.len() * per);
            for &f in frames {
                data.extend(codes[f * per..(f + 1) * per].iter().map(|&c| c as f64 / 255.0));
            }
            Tensor::new(vec![frames.len(), 3, self.height, self.width], data)
        };
        ControlBundle::new(map(&self.controls[0])?, map(&self.controls[1])?, map(&self.controls[2])?)
    }
}

/// Frame `i` of `[F, C, H, W]` as `[C, H, W]`.
pub(crate) fn frame(video: &Tensor, i: usize) -> Tensor {
    let s = video.shape();
    video
        .narrow(0, i, 1)
        .and_then(|t| t.reshape(&s[1..]))
        .expect("frame index in range")
}

/// Seeded stream of training examples drawn from a manifest.
///
/// Entries are visited in a fresh seeded permutation each epoch; every
/// random choice comes from one generator, so the stream is a pure
/// function of the config, the manifest and the seed.
pub struct BatchSampler {
    videos: Vec<CachedVideo>,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
    schedule: NoiseSchedule,
    weight: WeightConfig,
    stage: u8,
    clip_length: usize,
    stride: usize,
    dropout_p: f64,
    shuffle_p: f64,
}

impl BatchSampler {
    pub fn new(config: &TrainConfig, manifest: &Manifest, network: &NetworkConfig, codec: &LatentCodec, schedule: NoiseSchedule) -> Result<Self> {
        if manifest.is_empty() {
            return Err(Error::Manifest("training manifest is empty".into()));
        }
        let embedder = appearance_embedder(network)?;
        let videos = manifest
            .entries
            .iter()
            .map(|e| CachedVideo::build(&e.id, &e.load()?, codec, &embedder))
            .collect::<Result<Vec<_>>>()?;
        let dropout_p = if config.stage == 1 || config.stage2_dropout {
            config.dropout_p
        } else {
            0.0
        };
        Ok(Self {
            order: Vec::new(),
            cursor: 0,
            rng: rand::SeedableRng::seed_from_u64(config.seed),
            schedule,
            weight: config.weight,
            stage: config.stage,
            clip_length: config.clip_length,
            stride: config.frame_stride(),
            dropout_p,
            shuffle_p: if config.stage == 2 { config.shuffle_p } else { 0.0 },
            videos,
        })
    }

    fn next_video(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order = (0..self.videos.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    /// Draws one example; `observer` sees what was drawn.
    pub fn draw(&mut self, step: usize, observer: &mut dyn TrainObserver) -> Result<PreparedSample> {
        let vi = self.next_video();
        let rng = &mut self.rng;
        let v = &self.videos[vi];
        let frames: Vec<usize> = if self.stage == 1 {
            vec![rng.random_range(0..v.frames)]
        } else {
            let span = |len: usize| (len - 1) * self.stride + 1;
            let mut len = self.clip_length.min(v.frames);
            while span(len) > v.frames {
                len -= 1;
            }
            let start = rng.random_range(0..=v.frames - span(len));
            (0..len).map(|i| start + i * self.stride).collect()
        };
        let ref_frame = frames[rng.random_range(0..frames.len())];
        let t = rng.random_range(1..=self.schedule.steps());

        let x0 = v.latents.select_rows(&frames);
        let eps = Tensor::from_fn(x0.shape(), |_| rng.sample(StandardNormal));
        let z_t = add_noise(&x0, &eps, &self.schedule, t)?;
        let target = v_target(&x0, &eps, &self.schedule, t)?;
        let bg = Tensor::concat(&vec![&v.bg_latent; frames.len()], 0)?.reshape(x0.shape())?;
        let fg = v.fg_latents.select_rows(&frames);
        let input = assemble_input(&z_t, &bg, &fg)?;

        let mut controls = v.controls(&frames)?;
        let before = controls.clone();
        controls = drop_controls(&controls, rng, self.dropout_p)?;
        let dropped = Modality::ALL.into_iter().filter(|&m| before.present(m) && !controls.present(m)).collect();
        let mut control_order: Vec<usize> = (0..frames.len()).collect();
        if self.shuffle_p > 0.0 {
            let u: f64 = rng.random();
            if u < self.shuffle_p {
                control_order.shuffle(rng);
                controls = controls.reorder_frames(&control_order)?;
            }
        }

        observer.on_sample(&SampleInfo {
            step,
            entry_id: v.id.clone(),
            frames: frames.clone(),
            ref_frame,
            t,
            control_order,
            dropped,
        });
        let weight = loss_weight(snr(&self.schedule, t)?, &self.weight)?;
        Ok(PreparedSample {
            input,
            ref_latent: frame(&v.latents, ref_frame),
            c_clip: v.clips[ref_frame].clone(),
            controls,
            t,
            v_target: target,
            weight,
            mode: if self.stage == 1 {
                DenoiseMode::TwoD
            } else {
                DenoiseMode::ThreeD
            },
        })
    }

    pub fn draw_batch(&mut self, step: usize, size: usize, observer: &mut dyn TrainObserver) -> Result<Vec<PreparedSample>> {
        (0..size).map(|_| self.draw(step, observer)).collect()
    }
}
