use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Subject-identity embedding of a video (the slot a face-recognition
/// network would fill).
pub trait IdentityEmbedder: Send + Sync {
    fn name(&self) -> &str;
    /// `video` and `face_map` are `[F, 3, H, W]`.
    fn embed(&self, video: &Tensor, face_map: &Tensor) -> Result<Vec<f64>>;
}

/// Mean colour of the face region, and of its upper and lower halves,
/// centred on mid-grey (9 values).
///
/// The region is wherever the face map is non-zero; its blue channel
/// encodes the vertical face coordinate, which splits the halves.
#[derive(Clone, Copy, Debug, Default)]
pub struct ToyIdentityEmbedder;

impl IdentityEmbedder for ToyIdentityEmbedder {
    fn name(&self) -> &str {
        "toy-face-colour"
    }

    fn embed(&self, video: &Tensor, face_map: &Tensor) -> Result<Vec<f64>> {
        video.ensure_same_shape(face_map)?;
        let (f, c, h, w) = video.dims4()?;
        if c != 3 {
            return Err(Error::invalid(format!("identity embedder needs RGB frames, got {c} channels")));
        }
        let plane = h * w;
        let (v, m) = (video.data(), face_map.data());
        let mut sums = [[0.0; 3]; 3];
        let mut counts = [0usize; 3];
        for fi in 0..f {
            let base = fi * 3 * plane;
            for p in 0..plane {
                let fm = [m[base + p], m[base + plane + p], m[base + 2 * plane + p]];
                if fm.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let half = if fm[2] < 0.5 { 1 } else { 2 };
                for region in [0, half] {
                    counts[region] += 1;
                    for ch in 0..3 {
                        sums[region][ch] += v[base + ch * plane + p];
                    }
                }
            }
        }
        if counts[0] == 0 {
            return Err(Error::invalid("face map marks no face pixels"));
        }
        let mut out = Vec::with_capacity(9);
        for r in 0..3 {
            for ch in 0..3 {
                out.push(if counts[r] == 0 {
                    0.0
                } else {
                    sums[r][ch] / counts[r] as f64 - 0.5
                });
            }
        }
        Ok(out)
    }
}

/// Cosine similarity of two identity embeddings.
pub fn csim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![a.len()],
            actual: vec![b.len()],
        });
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("csim of a zero embedding"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Distance between two videos in a perceptual feature space (the slot a
/// learned perceptual metric would fill). No default implementation ships.
pub trait PerceptualDistance: Send + Sync {
    fn name(&self) -> &str;
    /// Mean per-frame distance between two `[F, 3, H, W]` videos.
    fn distance(&self, a: &Tensor, b: &Tensor) -> Result<f64>;
}

/// Per-frame squared distance between unit-normalised embeddings from any
/// image embedder, averaged over frames.
pub struct EmbeddingDistance<E> {
    pub name: String,
    pub embedder: E,
}

impl<E: crate::conditioning::ImageEmbedder> PerceptualDistance for EmbeddingDistance<E> {
    fn name(&self) -> &str {
        &self.name
    }

    fn distance(&self, a: &Tensor, b: &Tensor) -> Result<f64> {
        a.ensure_same_shape(b)?;
        let f = a.dims4()?.0;
        let unit = |t: Tensor| {
            let n = t.norm();
            if n == 0.0 {
                t
            } else {
                t.scale(1.0 / n)
            }
        };
        let mut total = 0.0;
        for i in 0..f {
            let fa = crate::training::frame(a, i);
            let fb = crate::training::frame(b, i);
            let ea = unit(self.embedder.embed(&fa)?);
            let eb = unit(self.embedder.embed(&fb)?);
            total += ea.zip_map(&eb, |x, y| (x - y) * (x - y))?.sum();
        }
        Ok(total / f.max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csim_cases() {
        assert!((csim(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(csim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(csim(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn face_region_means() {
        // one frame, 2x2: top-left is a face pixel in the upper half,
        // bottom-right a face pixel in the lower half
        let mut face = Tensor::zeros(&[1, 3, 2, 2]);
        let mut video = Tensor::full(&[1, 3, 2, 2], 0.5);
        let d = face.data_mut();
        d[0] = 1.0;
        d[8] = 0.2;
        d[3] = 1.0;
        d[11] = 0.9;
        video.data_mut()[0] = 1.0;
        let e = ToyIdentityEmbedder.embed(&video, &face).unwrap();
        assert_eq!(e.len(), 9);
        assert!((e[0] - 0.25).abs() < 1e-15);
        assert!((e[3] - 0.5).abs() < 1e-15);
        assert_eq!(e[6], 0.0);
        assert!(ToyIdentityEmbedder.embed(&video, &Tensor::zeros(&[1, 3, 2, 2])).is_err());
    }
}
