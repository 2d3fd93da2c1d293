//! 8-bit RGB PNG frames and frame directories.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("{index:04}.png"))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `[3, H, W]` image with values in `[0, 1]`.
pub fn write_png(path: &Path, image: &Tensor) -> Result<()> {
    let (h, w) = match image.shape() {
        [3, h, w] => (*h, *w),
        s => {
            return Err(Error::ShapeMismatch {
                expected: vec![3, 0, 0],
                actual: s.to_vec(),
            })
        }
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut bytes = Vec::with_capacity(3 * h * w);
    let d = image.data();
    for p in 0..h * w {
        for c in 0..3 {
            bytes.push(to_u8(d[c * h * w + p]));
        }
    }
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    writer
        .finish()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Reads an 8-bit RGB or grayscale PNG as `[3, H, W]` in `[0, 1]`.
pub fn read_png(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let img_err = |e: png::DecodingError| Error::Image(format!("{}: {e}", path.display()));
    let mut reader = png::Decoder::new(BufReader::new(file)).read_info().map_err(img_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Image(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(img_err)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Image(format!("{}: only 8-bit images are supported", path.display())));
    }
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        other => return Err(Error::Image(format!("{}: unsupported colour type {other:?}", path.display()))),
    };
    let (h, w) = (info.height as usize, info.width as usize);
    let mut data = vec![0.0; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            let src = if channels == 1 { 0 } else { c };
            data[c * h * w + p] = buf[p * channels + src] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Writes `[F, 3, H, W]` as numbered frames in `dir`.
pub fn write_frames(dir: &Path, video: &Tensor) -> Result<()> {
    let (f, c, h, w) = video.dims4()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for i in 0..f {
        let frame = video.narrow(0, i, 1)?.reshape(&[c, h, w])?;
        write_png(&frame_path(dir, i), &frame)?;
    }
    Ok(())
}

/// Reads `frames` numbered frames from `dir` as `[F, 3, H, W]`.
pub fn read_frames(dir: &Path, frames: usize) -> Result<Tensor> {
    let imgs = (0..frames)
        .map(|i| read_png(&frame_path(dir, i)))
        .collect::<Result<Vec<_>>>()?;
    let first = imgs
        .first()
        .ok_or_else(|| Error::invalid(format!("no frames requested from {}", dir.display())))?;
    let (h, w) = (first.dim(1), first.dim(2));
    let refs: Vec<Tensor> = imgs
        .into_iter()
        .map(|t| t.reshape(&[1, 3, h, w]))
        .collect::<Result<_>>()?;
    Tensor::concat(&refs.iter().collect::<Vec<_>>(), 0)
}

/// Rounds values to the 8-bit grid that [`write_png`] stores.
pub fn quantize(t: &Tensor) -> Tensor {
    t.map(|v| to_u8(v) as f64 / 255.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_quantized_identity() {
        let dir = tempfile::tempdir().unwrap();
        let img = Tensor::from_fn(&[3, 5, 7], |i| (i % 11) as f64 / 10.0);
        let p = dir.path().join("a.png");
        write_png(&p, &img).unwrap();
        assert_eq!(read_png(&p).unwrap(), quantize(&img));
    }

    #[test]
    fn frames_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = quantize(&Tensor::from_fn(&[3, 3, 4, 4], |i| (i % 13) as f64 / 12.0));
        write_frames(dir.path(), &v).unwrap();
        assert_eq!(read_frames(dir.path(), 3).unwrap(), v);
        assert!(read_frames(dir.path(), 4).is_err());
    }
}
