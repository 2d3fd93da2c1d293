//! Deterministic stand-in for the image autoencoder.
//!
//! Every 8x8 RGB patch (192 values) maps to 4 latent channels through a
//! fixed matrix with orthonormal rows; decoding applies the transpose. Rows
//! 0..3 average one colour channel over the patch, row 3 is a seeded random
//! texture direction orthogonal to them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PATCH: usize = 8;
const PATCH_LEN: usize = 3 * PATCH * PATCH;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyCodec {
    seed: u64,
    basis: [[f64; PATCH_LEN]; 4],
}

impl ToyCodec {
    pub fn new(seed: u64) -> Self {
        let mut basis = [[0.0; PATCH_LEN]; 4];
        let px = PATCH * PATCH;
        let norm = 1.0 / (px as f64).sqrt();
        for (c, row) in basis.iter_mut().take(3).enumerate() {
            row[c * px..(c + 1) * px].fill(norm);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Tensor::randn(&[PATCH_LEN], &mut rng);
        let mut r = [0.0; PATCH_LEN];
        r.copy_from_slice(noise.data());
        for c in 0..3 {
            let mean = r[c * px..(c + 1) * px].iter().sum::<f64>() / px as f64;
            r[c * px..(c + 1) * px].iter_mut().for_each(|v| *v -= mean);
        }
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        r.iter_mut().for_each(|v| *v /= n);
        basis[3] = r;
        Self { seed, basis }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Largest deviation of `B B^T` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..4 {
            for j in 0..4 {
                let d: f64 = self.basis[i].iter().zip(&self.basis[j]).map(|(a, b)| a * b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((d - target).abs());
            }
        }
        worst
    }

    /// `[3, H, W]` image to `[4, H/8, W/8]` latent.
    pub fn encode(&self, image: &Tensor) -> Result<Tensor> {
        let (h, w) = match image.shape() {
            [3, h, w] => (*h, *w),
            s => {
                return Err(Error::ShapeMismatch {
                    expected: vec![3, 0, 0],
                    actual: s.to_vec(),
                })
            }
        };
        if h % PATCH != 0 || w % PATCH != 0 || h == 0 || w == 0 {
            return Err(Error::invalid(format!(
                "image extent {h}x{w} is not a positive multiple of {PATCH}"
            )));
        }
        let (lh, lw) = (h / PATCH, w / PATCH);
        let src = image.data();
        let mut out = vec![0.0; 4 * lh * lw];
        for gy in 0..lh {
            for gx in 0..lw {
                let mut acc = [0.0; 4];
                for c in 0..3 {
                    for py in 0..PATCH {
                        let row = &src[(c * h + gy * PATCH + py) * w + gx * PATCH..][..PATCH];
                        for (px, &v) in row.iter().enumerate() {
                            let k = (c * PATCH + py) * PATCH + px;
                            for (a, b) in acc.iter_mut().zip(&self.basis) {
                                *a += b[k] * v;
                            }
                        }
                    }
                }
                for (ch, a) in acc.iter().enumerate() {
                    out[(ch * lh + gy) * lw + gx] = *a;
                }
            }
        }
        Tensor::new(vec![4, lh, lw], out)
    }

    /// `[4, h, w]` latent to `[3, 8h, 8w]` image.
    pub fn decode(&self, latent: &Tensor) -> Result<Tensor> {
        let (lh, lw) = match latent.shape() {
            [4, h, w] => (*h, *w),
            s => {
                return Err(Error::ShapeMismatch {
                    expected: vec![4, 0, 0],
                    actual: s.to_vec(),
                })
            }
        };
        let (h, w) = (lh * PATCH, lw * PATCH);
        let src = latent.data();
        let mut out = vec![0.0; 3 * h * w];
        for gy in 0..lh {
            for gx in 0..lw {
                let z: Vec<f64> = (0..4).map(|ch| src[(ch * lh + gy) * lw + gx]).collect();
                for c in 0..3 {
                    for py in 0..PATCH {
                        for px in 0..PATCH {
                            let k = (c * PATCH + py) * PATCH + px;
                            let v: f64 = (0..4).map(|ch| self.basis[ch][k] * z[ch]).sum();
                            out[(c * h + gy * PATCH + py) * w + gx * PATCH + px] = v;
                        }
                    }
                }
            }
        }
        Tensor::new(vec![3, h, w], out)
    }

    /// Frame-wise encode of `[F, 3, H, W]`.
    pub fn encode_video(&self, video: &Tensor) -> Result<Tensor> {
        self.map_frames(video, 3, |f| self.encode(f))
    }

    /// Frame-wise decode of `[F, 4, h, w]`.
    pub fn decode_video(&self, latent: &Tensor) -> Result<Tensor> {
        self.map_frames(latent, 4, |f| self.decode(f))
    }

    /// Projects a video onto the codec's range (`decode . encode`).
    pub fn project_video(&self, video: &Tensor) -> Result<Tensor> {
        self.decode_video(&self.encode_video(video)?)
    }

    fn map_frames(&self, video: &Tensor, channels: usize, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
        let (n, c, h, w) = video.dims4()?;
        if c != channels {
            return Err(Error::ShapeMismatch {
                expected: vec![n, channels, h, w],
                actual: video.shape().to_vec(),
            });
        }
        let frames: Vec<Tensor> = (0..n)
            .map(|i| {
                let frame = video.narrow(0, i, 1)?.reshape(&[c, h, w])?;
                f(&frame)
            })
            .collect::<Result<_>>()?;
        let s = frames[0].shape().to_vec();
        let mut data = Vec::with_capacity(n * frames[0].len());
        for fr in frames {
            data.extend(fr.into_data());
        }
        Tensor::new(vec![n, s[0], s[1], s[2]], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_is_orthonormal() {
        assert!(ToyCodec::new(11).orthonormality_error() < 1e-12);
    }

    #[test]
    fn zero_image_round_trip() {
        let codec = ToyCodec::new(0);
        let z = codec.encode(&Tensor::zeros(&[3, 16, 24])).unwrap();
        assert_eq!(z.shape(), &[4, 2, 3]);
        assert_eq!(z.max_abs(), 0.0);
        assert_eq!(codec.decode(&z).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn encode_inverts_decode_on_range() {
        let codec = ToyCodec::new(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = Tensor::randn(&[4, 8, 8], &mut rng);
        let img = codec.decode(&z).unwrap();
        assert_eq!(img.shape(), &[3, 64, 64]);
        let back = codec.encode(&img).unwrap();
        assert!(back.max_abs_diff(&z) < 1e-6);
        assert_eq!(codec.encode(&Tensor::zeros(&[3, 64, 64])).unwrap().shape(), &[4, 8, 8]);
    }

    #[test]
    fn constant_colour_survives_projection() {
        let codec = ToyCodec::new(2);
        let img = Tensor::from_fn(&[3, 8, 16], |i| [0.2, 0.5, 0.9][i / 128]);
        let back = codec.decode(&codec.encode(&img).unwrap()).unwrap();
        assert!(back.max_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn indivisible_extent_rejected() {
        let codec = ToyCodec::new(0);
        assert!(codec.encode(&Tensor::zeros(&[3, 12, 16])).is_err());
        assert!(codec.encode(&Tensor::zeros(&[4, 16, 16])).is_err());
    }
}
