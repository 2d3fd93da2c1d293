use super::frechet::frechet_distance;
use super::identity::{csim, IdentityEmbedder, PerceptualDistance};
use super::quality::{psnr, ssim};
use super::report::{Aggregate, MetricReport, VideoMetrics, REPORT_SCHEMA};
use crate::curation::{Manifest, VideoEmbedder, VideoSample};
use crate::denoiser::Checkpoint;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::training::{inputs_from_video, sample, LatentCodec, OraclePredictor, sample_with};

/// Produces a video for an evaluation clip.
pub trait VideoGenerator {
    fn label(&self) -> String;
    /// `index` is the clip's position in the evaluation set.
    fn generate(&self, index: usize, clip: &VideoSample) -> Result<Tensor>;
    /// The target a perfect generator would reproduce.
    fn ground_truth(&self, clip: &VideoSample) -> Result<Tensor> {
        Ok(clip.frames.clone())
    }
}

/// Samples a checkpoint, conditioned on the clip's first frame.
pub struct CheckpointGenerator<'a> {
    pub label: String,
    pub checkpoint: &'a Checkpoint,
    pub steps: usize,
    pub seed: u64,
}

fn codec_of(ck: &Checkpoint) -> LatentCodec {
    LatentCodec::new(ck.meta.codec_seed, ck.meta.latent_scale)
}

/// Frames passed through the codec round trip and clamped to `[0, 1]`:
/// the best any latent-space generator can do.
pub fn codec_ground_truth(codec: &LatentCodec, frames: &Tensor) -> Result<Tensor> {
    Ok(codec.codec.project_video(frames)?.map(|v| v.clamp(0.0, 1.0)))
}

impl VideoGenerator for CheckpointGenerator<'_> {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn generate(&self, index: usize, clip: &VideoSample) -> Result<Tensor> {
        let inputs = inputs_from_video(clip, 0)?;
        sample(self.checkpoint, &inputs, self.steps, self.seed.wrapping_add(index as u64))
    }

    fn ground_truth(&self, clip: &VideoSample) -> Result<Tensor> {
        codec_ground_truth(&codec_of(self.checkpoint), &clip.frames)
    }
}

/// Runs the sampler with the exact velocity towards each clip's own latent.
pub struct OracleGenerator {
    pub codec: LatentCodec,
    pub schedule: NoiseSchedule,
    pub steps: usize,
    pub seed: u64,
}

impl VideoGenerator for OracleGenerator {
    fn label(&self) -> String {
        "Oracle".into()
    }

    fn generate(&self, index: usize, clip: &VideoSample) -> Result<Tensor> {
        let x0 = self.codec.encode_video(&clip.frames)?;
        let oracle = OraclePredictor {
            x0: x0.clone(),
            schedule: &self.schedule,
        };
        sample_with(&oracle, &self.schedule, &self.codec, x0.shape(), self.steps, self.seed.wrapping_add(index as u64))
    }

    fn ground_truth(&self, clip: &VideoSample) -> Result<Tensor> {
        codec_ground_truth(&self.codec, &clip.frames)
    }
}

/// Feature extractors behind the set-level and identity metrics.
pub struct Evaluators<'a> {
    pub video: &'a dyn VideoEmbedder,
    pub identity: &'a dyn IdentityEmbedder,
    pub perceptual: Option<&'a dyn PerceptualDistance>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalOptions {
    /// Evaluate only the leading frames of each video.
    pub max_frames: Option<usize>,
}

/// Generates every entry of `eval` and scores it against its ground truth.
pub fn evaluate(
    generator: &dyn VideoGenerator,
    eval: &Manifest,
    evaluators: &Evaluators,
    options: EvalOptions,
) -> Result<MetricReport> {
    if eval.is_empty() {
        return Err(Error::Manifest("evaluation manifest is empty".into()));
    }
    if eval.len() < 2 {
        return Err(Error::Manifest("the Fréchet distance needs at least two evaluation videos".into()));
    }
    let mut videos = Vec::with_capacity(eval.len());
    let mut feats_gen = Vec::with_capacity(eval.len());
    let mut feats_gt = Vec::with_capacity(eval.len());
    for (i, entry) in eval.entries.iter().enumerate() {
        let full = entry.load()?;
        let len = options.max_frames.map_or(full.frame_count(), |m| m.min(full.frame_count()));
        let clip = full.slice(0, len)?;
        let truth = generator.ground_truth(&clip)?;
        let gen = generator.generate(i, &clip)?;
        gen.ensure_same_shape(&truth)?;
        let lpips = evaluators.perceptual.map(|p| p.distance(&gen, &truth)).transpose()?;
        let id_gen = evaluators.identity.embed(&gen, &clip.face)?;
        let id_gt = evaluators.identity.embed(&truth, &clip.face)?;
        videos.push(VideoMetrics {
            id: entry.id.clone(),
            psnr: psnr(&gen, &truth)?,
            ssim: ssim(&gen, &truth)?,
            lpips,
            csim: csim(&id_gen, &id_gt)?,
        });
        feats_gen.push(evaluators.video.embed(&gen)?.into_data());
        feats_gt.push(evaluators.video.embed(&truth)?.into_data());
        log::debug!("evaluated {} ({}/{})", entry.id, i + 1, eval.len());
    }
    let n = videos.len() as f64;
    let mean = |f: fn(&VideoMetrics) -> f64| videos.iter().map(f).sum::<f64>() / n;
    let lpips = videos
        .iter()
        .map(|v| v.lpips)
        .collect::<Option<Vec<f64>>>()
        .map(|l| l.iter().sum::<f64>() / n);
    let fvd = frechet_distance(&feats_gen, &feats_gt)?;
    let aggregate = Aggregate {
        psnr: mean(|v| v.psnr),
        ssim: mean(|v| v.ssim),
        lpips,
        fvd,
        csim: mean(|v| v.csim),
    };
    Ok(MetricReport {
        schema: REPORT_SCHEMA,
        label: generator.label(),
        fvd_embedder: evaluators.video.name().to_string(),
        identity_embedder: evaluators.identity.name().to_string(),
        perceptual: evaluators.perceptual.map(|p| p.name().to_string()),
        videos,
        aggregate,
    })
}
