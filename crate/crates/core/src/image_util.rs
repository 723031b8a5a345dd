//! Frame I/O, hashing and conversion between 8-bit frames and model tensors.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|e| Error::image(path, e))?
        .to_rgb8())
}

pub fn read_gray(path: &Path) -> Result<GrayImage> {
    Ok(image::open(path)
        .map_err(|e| Error::image(path, e))?
        .to_luma8())
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    img.save(path).map_err(|e| Error::image(path, e))
}

pub fn write_gray(path: &Path, img: &GrayImage) -> Result<()> {
    img.save(path).map_err(|e| Error::image(path, e))
}

/// `%06d.png` name of a frame index.
pub fn frame_name(index: usize) -> String {
    format!("{index:06}.png")
}

/// Sorted PNG files of a frame directory.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    Ok(out)
}

pub fn read_rgb_dir(dir: &Path) -> Result<Vec<RgbImage>> {
    list_frames(dir)?.iter().map(|p| read_rgb(p)).collect()
}

pub fn read_gray_dir(dir: &Path) -> Result<Vec<GrayImage>> {
    list_frames(dir)?.iter().map(|p| read_gray(p)).collect()
}

pub fn write_rgb_dir(dir: &Path, frames: &[RgbImage]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        write_rgb(&dir.join(frame_name(i)), f)?;
    }
    Ok(())
}

pub fn write_gray_dir(dir: &Path, frames: &[GrayImage]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        write_gray(&dir.join(frame_name(i)), f)?;
    }
    Ok(())
}

/// SHA-256 over the dimensions and raw pixels of a frame sequence.
pub fn frames_hash(frames: &[RgbImage]) -> String {
    let mut h = Sha256::new();
    for f in frames {
        h.update(f.width().to_le_bytes());
        h.update(f.height().to_le_bytes());
        h.update(f.as_raw());
    }
    hex::encode(h.finalize())
}

/// Mean luminance (Rec. 601 weights) of a frame, in [0, 255].
pub fn mean_luminance(frame: &RgbImage) -> f64 {
    let n = (frame.width() * frame.height()).max(1) as f64;
    frame
        .pixels()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .sum::<f64>()
        / n
}

/// Stacks frames into one `[1, 3N, H, W]` sample normalized to [-1, 1].
pub fn frames_to_stack<T: Scalar>(frames: &[&RgbImage]) -> Result<Tensor<T>> {
    let (w, h) = frames
        .first()
        .map(|f| f.dimensions())
        .ok_or_else(|| Error::ShapeMismatch("empty frame stack".into()))?;
    let (w, h) = (w as usize, h as usize);
    let plane = w * h;
    let mut data = vec![T::zero(); frames.len() * 3 * plane];
    for (k, f) in frames.iter().enumerate() {
        if f.dimensions() != (w as u32, h as u32) {
            return Err(Error::ShapeMismatch(format!(
                "frame {k} is {:?}, expected {w}x{h}",
                f.dimensions()
            )));
        }
        for (i, p) in f.pixels().enumerate() {
            for c in 0..3 {
                data[(3 * k + c) * plane + i] = T::lit(p[c] as f64 / 127.5 - 1.0);
            }
        }
    }
    Tensor::from_vec([1, 3 * frames.len(), h, w], data)
}

/// Splits sample `n` of a `[B, 3N, H, W]` tensor back into N 8-bit frames.
pub fn stack_to_frames<T: Scalar>(t: &Tensor<T>, n: usize) -> Vec<RgbImage> {
    let [_, c, h, w] = t.shape();
    let plane = h * w;
    let s = t.sample(n);
    (0..c / 3)
        .map(|k| {
            RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let i = y as usize * w + x as usize;
                image::Rgb([0, 1, 2].map(|ch| to_u8(s[(3 * k + ch) * plane + i].as_f64())))
            })
        })
        .collect()
}

fn to_u8(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_roundtrips_every_level() {
        let f = RgbImage::from_fn(16, 16, |x, y| {
            image::Rgb([(x * 16 + y) as u8, 255 - (x * 16 + y) as u8, 7])
        });
        let t: Tensor<f32> = frames_to_stack(&[&f, &f]).unwrap();
        assert_eq!(t.shape(), [1, 6, 16, 16]);
        assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let back = stack_to_frames(&t, 0);
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], f);
    }

    #[test]
    fn png_dir_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<_> = (0..3)
            .map(|i| RgbImage::from_pixel(4, 4, image::Rgb([i * 40, 1, 2])))
            .collect();
        write_rgb_dir(dir.path(), &frames).unwrap();
        assert_eq!(read_rgb_dir(dir.path()).unwrap(), frames);
        assert_eq!(
            frames_hash(&frames),
            frames_hash(&read_rgb_dir(dir.path()).unwrap())
        );
    }

    #[test]
    fn luminance_extremes() {
        assert_eq!(mean_luminance(&RgbImage::new(3, 3)), 0.0);
        assert!(
            (mean_luminance(&RgbImage::from_pixel(3, 3, image::Rgb([255; 3]))) - 255.0).abs()
                < 1e-9
        );
    }
}
