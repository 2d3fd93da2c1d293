use super::manifest::{Manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pluggable video-level embedder.
pub trait VideoEmbedder: Send + Sync {
    /// Label carried into reports next to embedding-based metrics.
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// `[F, 3, H, W]` video to a `[dim]` vector.
    fn embed(&self, video: &Tensor) -> Result<Tensor>;
}

/// Joint colour histogram plus frame-difference energy, mean-pooled over
/// a symmetric sample of frames.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyVideoEmbedder {
    /// Bins per colour channel.
    pub bins: usize,
    pub sampled_frames: usize,
    /// Multiplier on the motion-energy coordinate.
    pub motion_weight: f64,
}

impl Default for ToyVideoEmbedder {
    fn default() -> Self {
        Self {
            bins: 4,
            sampled_frames: 8,
            motion_weight: 10.0,
        }
    }
}

/// `k` frame indices spread over `0..frames`, mirror-symmetric so a
/// reversed video samples the same frames.
pub fn sample_frame_indices(frames: usize, k: usize) -> Vec<usize> {
    if frames <= k {
        return (0..frames).collect();
    }
    let mut idx = vec![0; k];
    for j in 0..k.div_ceil(2) {
        idx[j] = j * (frames - 1) / (k - 1);
        idx[k - 1 - j] = frames - 1 - idx[j];
    }
    idx
}

impl VideoEmbedder for ToyVideoEmbedder {
    fn name(&self) -> &str {
        "toy-histogram-motion"
    }

    fn dim(&self) -> usize {
        self.bins.pow(3) + 1
    }

    fn embed(&self, video: &Tensor) -> Result<Tensor> {
        let (f, c, h, w) = video.dims4()?;
        if c != 3 || f == 0 || h == 0 || w == 0 {
            return Err(Error::invalid(format!("cannot embed video of shape {:?}", video.shape())));
        }
        let plane = h * w;
        let frame = |i: usize| &video.data()[i * 3 * plane..(i + 1) * 3 * plane];
        let picks = sample_frame_indices(f, self.sampled_frames);
        let b = self.bins;
        let bin = |v: f64| ((v.clamp(0.0, 1.0) * b as f64) as usize).min(b - 1);
        let mut counts = vec![0u64; b * b * b];
        for &i in &picks {
            let d = frame(i);
            for p in 0..plane {
                counts[(bin(d[p]) * b + bin(d[plane + p])) * b + bin(d[2 * plane + p])] += 1;
            }
        }
        let total = (picks.len() * plane) as f64;
        let mut out: Vec<f64> = counts.iter().map(|&n| n as f64 / total).collect();
        let mut energies: Vec<f64> = picks
            .windows(2)
            .map(|p| {
                let (a, b) = (frame(p[0]), frame(p[1]));
                a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
            })
            .collect();
        // order-independent reduction keeps reversed videos bit-identical
        energies.sort_by(f64::total_cmp);
        let energy = if energies.is_empty() {
            0.0
        } else {
            energies.iter().sum::<f64>() / energies.len() as f64
        };
        out.push(self.motion_weight * energy);
        Tensor::new(vec![out.len()], out)
    }
}

pub fn embed_video(entry: &ManifestEntry, embedder: &dyn VideoEmbedder) -> Result<Vec<f64>> {
    let sample = entry.load()?;
    Ok(embedder.embed(&sample.frames)?.into_data())
}

/// Copy of `manifest` with every entry's embedding filled in.
pub fn embed_manifest(manifest: &Manifest, embedder: &dyn VideoEmbedder) -> Result<Manifest> {
    let mut out = manifest.clone();
    for e in &mut out.entries {
        e.embedding = Some(embed_video(e, embedder)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::manifest::Domain;
    use crate::curation::toy::{render_toy_video, ToySpec};

    #[test]
    fn frame_sample_is_symmetric() {
        for f in 1..40 {
            let idx = sample_frame_indices(f, 8);
            assert_eq!(idx.len(), f.min(8));
            for (j, &i) in idx.iter().enumerate() {
                assert_eq!(i, f - 1 - idx[idx.len() - 1 - j]);
            }
            assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn black_video() {
        let e = ToyVideoEmbedder::default();
        let v = e.embed(&Tensor::zeros(&[5, 3, 8, 8])).unwrap();
        assert_eq!(v.len(), e.dim());
        assert_eq!(v.data()[0], 1.0);
        assert_eq!(v.data()[1..].iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn reversal_invariant_and_deterministic() {
        let e = ToyVideoEmbedder::default();
        let v = render_toy_video(&ToySpec::new(1, Domain::Real), 3, 0).unwrap().frames;
        let order: Vec<usize> = (0..v.dim(0)).rev().collect();
        let rev = v.select_rows(&order);
        assert_eq!(e.embed(&v).unwrap(), e.embed(&rev).unwrap());
        let again = render_toy_video(&ToySpec::new(1, Domain::Real), 3, 0).unwrap().frames;
        assert_eq!(e.embed(&v).unwrap(), e.embed(&again).unwrap());
        assert!(e.embed(&v).unwrap().data()[e.dim() - 1] > 0.0);
    }
}
