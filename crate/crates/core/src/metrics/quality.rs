use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// PSNR reported for identical inputs.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// `10 log10(1 / MSE)` for signals in `[0, 1]`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if a.is_empty() {
        return Err(Error::invalid("psnr of empty tensors"));
    }
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Views `[3, H, W]` or `[F, 3, H, W]` as `(F, H, W)`.
fn frames_of(t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [3, h, w] => Ok((1, *h, *w)),
        [f, 3, h, w] => Ok((*f, *h, *w)),
        s => Err(Error::ShapeMismatch {
            expected: vec![0, 3, 0, 0],
            actual: s.to_vec(),
        }),
    }
}

/// ITU-R BT.601 luma of each frame, `F` planes of `H * W`.
pub fn luma(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    let (f, h, w) = frames_of(t)?;
    let plane = h * w;
    Ok((0..f)
        .map(|i| {
            let base = i * 3 * plane;
            let d = t.data();
            (0..plane)
                .map(|p| 0.299 * d[base + p] + 0.587 * d[base + plane + p] + 0.114 * d[base + 2 * plane + p])
                .collect()
        })
        .collect())
}

/// Normalised `size x size` Gaussian window, row-major.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            out.push(g[y] * g[x] / (s * s));
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, win: &[f64]) -> f64 {
    let k = SSIM_WINDOW;
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mut total = 0.0;
    for y in 0..=h - k {
        for x in 0..=w - k {
            let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..k {
                for dx in 0..k {
                    let g = win[dy * k + dx];
                    let p = (y + dy) * w + x + dx;
                    ma += g * a[p];
                    mb += g * b[p];
                    aa += g * a[p] * a[p];
                    bb += g * b[p] * b[p];
                    ab += g * a[p] * b[p];
                }
            }
            let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    total / ((h - k + 1) * (w - k + 1)) as f64
}

/// Mean SSIM over valid 11x11 Gaussian windows of the luma, averaged over
/// frames. Takes `[3, H, W]` images or `[F, 3, H, W]` videos in `[0, 1]`.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (f, h, w) = frames_of(a)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "frames of {h}x{w} are smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    if f == 0 {
        return Err(Error::invalid("ssim of an empty video"));
    }
    let win = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let (la, lb) = (luma(a)?, luma(b)?);
    Ok(la.iter().zip(&lb).map(|(x, y)| ssim_plane(x, y, h, w, &win)).sum::<f64>() / f as f64)
}
