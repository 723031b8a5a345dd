//! Photometric error reports and the per-frame latency benchmark.

use std::fs;
use std::path::Path;
use std::time::Instant;

use image::{GrayImage, Luma, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_util;
use crate::inference::{synthesize_with_generator, InferenceOptions};
use crate::model::{Generator, GeneratorConfig};

/// Largest possible per-pixel RGB distance, `sqrt(3) * 255`.
pub const MAX_PIXEL_ERROR: f64 = 441.672_955_930_063_7;
/// Per-frame budget for real-time (25 fps) operation.
pub const REAL_TIME_BUDGET_MS: f64 = 40.0;

fn check_dims(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::ShapeMismatch(format!(
            "frames {:?} and {:?}",
            a.dimensions(),
            b.dimensions()
        )));
    }
    Ok(())
}

/// Per-pixel RGB Euclidean distance map, row-major.
pub fn error_map(pred: &RgbImage, gt: &RgbImage) -> Result<Vec<f64>> {
    check_dims(pred, gt)?;
    Ok(pred
        .pixels()
        .zip(gt.pixels())
        .map(|(p, g)| {
            (0..3)
                .map(|c| {
                    let d = p[c] as f64 - g[c] as f64;
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// Mean over pixels of the RGB Euclidean distance (0..=441.67).
pub fn photometric_error(pred: &RgbImage, gt: &RgbImage) -> Result<f64> {
    let m = error_map(pred, gt)?;
    Ok(m.iter().sum::<f64>() / m.len().max(1) as f64)
}

/// Arithmetic mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotometricReport {
    pub per_frame_error: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over frames.
    pub std: f64,
    /// Per-pixel error averaged over frames, row-major.
    #[serde(skip)]
    pub heatmap: Vec<f64>,
    pub width: u32,
    pub height: u32,
    pub meta: serde_json::Value,
}

pub fn sequence_report(pred: &[RgbImage], gt: &[RgbImage]) -> Result<PhotometricReport> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    let (width, height) = gt.first().map(|f| f.dimensions()).unwrap_or((0, 0));
    let mut heatmap = vec![0.0; (width * height) as usize];
    let mut per_frame_error = Vec::with_capacity(pred.len());
    for (p, g) in pred.iter().zip(gt) {
        let m = error_map(p, g)?;
        if m.len() != heatmap.len() {
            return Err(Error::ShapeMismatch(format!(
                "frame of {} pixels, expected {}",
                m.len(),
                heatmap.len()
            )));
        }
        per_frame_error.push(m.iter().sum::<f64>() / m.len().max(1) as f64);
        heatmap.iter_mut().zip(&m).for_each(|(h, v)| *h += v);
    }
    let k = pred.len().max(1) as f64;
    heatmap.iter_mut().for_each(|h| *h /= k);
    let (mean, std) = mean_std(&per_frame_error);
    Ok(PhotometricReport {
        per_frame_error,
        mean,
        std,
        heatmap,
        width,
        height,
        meta: serde_json::Value::Null,
    })
}

impl PhotometricReport {
    /// Linear grayscale heat map: 0 is black, the maximum possible error is white.
    pub fn heatmap_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            let v = self.heatmap[(y * self.width + x) as usize];
            Luma([(v / MAX_PIXEL_ERROR * 255.0).round().clamp(0.0, 255.0) as u8])
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,error\n");
        for (i, e) in self.per_frame_error.iter().enumerate() {
            s.push_str(&format!("{i},{e}\n"));
        }
        s
    }

    /// Writes `errors.csv`, `heatmap.png` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("errors.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        image_util::write_gray(&dir.join("heatmap.png"), &self.heatmap_image())?;
        let summary = dir.join("summary.json");
        fs::write(&summary, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&summary, e))
    }
}

/// Bounding box `(x0, y0, x1, y1)` (exclusive max) of non-black pixels.
pub fn foreground_box(frame: &RgbImage, min_value: u8) -> Option<(u32, u32, u32, u32)> {
    let mut b: Option<(u32, u32, u32, u32)> = None;
    for (x, y, p) in frame.enumerate_pixels() {
        if p.0.iter().any(|&c| c > min_value) {
            b = Some(match b {
                None => (x, y, x + 1, y + 1),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
            });
        }
    }
    b
}

/// Fraction of dark-red (open mouth interior) pixels inside a box.
pub fn mouth_openness(frame: &RgbImage, region: (u32, u32, u32, u32)) -> f64 {
    let (x0, y0, w, h) = region;
    let mut hits = 0usize;
    let mut total = 0usize;
    for y in y0..(y0 + h).min(frame.height()) {
        for x in x0..(x0 + w).min(frame.width()) {
            let p = frame.get_pixel(x, y).0;
            total += 1;
            if p[0] < 130 && p[0] as u16 > p[1] as u16 + 25 && p[1] < 70 {
                hits += 1;
            }
        }
    }
    hits as f64 / total.max(1) as f64
}

/// Pearson correlation of two equally long series.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, sa) = mean_std(a);
    let (mb, sb) = mean_std(b);
    if sa == 0.0 || sb == 0.0 {
        return 0.0;
    }
    let cov = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / a.len() as f64;
    cov / (sa * sb)
}

/// Benchmark setup. Timing does not depend on weight values, so generators are
/// freshly initialized at each resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyConfig {
    pub resolutions: Vec<usize>,
    pub frames: usize,
    pub repeats: usize,
    pub sequences: usize,
    pub window: usize,
    pub width_divisor: usize,
    pub seed: u64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self {
            resolutions: vec![128, 256],
            frames: 50,
            repeats: 5,
            sequences: 3,
            window: 11,
            width_divisor: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub resolution: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub std_ms: f64,
    pub real_time: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyTable {
    pub rows: Vec<LatencyRow>,
    pub budget_ms: f64,
    pub config: LatencyConfig,
}

impl LatencyTable {
    pub fn row(&self, resolution: usize) -> Option<&LatencyRow> {
        self.rows.iter().find(|r| r.resolution == resolution)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from(
            "| resolution | mean ms/frame | median ms/frame | std ms | real-time (<= 40 ms) |\n",
        );
        s.push_str("|---|---|---|---|---|\n");
        for r in &self.rows {
            s.push_str(&format!(
                "| {0}x{0} | {1:.2} | {2:.2} | {3:.2} | {4} |\n",
                r.resolution,
                r.mean_ms,
                r.median_ms,
                r.std_ms,
                if r.real_time { "yes" } else { "no" }
            ));
        }
        s
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn synthetic_frames(n: usize, res: u32, seed: u64) -> Vec<RgbImage> {
    (0..n)
        .map(|i| {
            RgbImage::from_fn(res, res, |x, y| {
                let v = (x as u64 * 7 + y as u64 * 13 + i as u64 * 5 + seed * 31) % 256;
                image::Rgb([v as u8, (255 - v) as u8, (v / 2) as u8])
            })
        })
        .collect()
}

/// Per-frame wall time of reading inputs, sliding-window synthesis and writing
/// outputs, for each resolution.
pub fn benchmark_latency(config: &LatencyConfig, workdir: &Path) -> Result<LatencyTable> {
    if config.frames < 50 || config.repeats == 0 || config.sequences == 0 {
        return Err(Error::InvalidConfig(
            "latency benchmark needs >= 50 frames and nonzero repeats".into(),
        ));
    }
    let mut rows = Vec::new();
    for &res in &config.resolutions {
        let gc =
            GeneratorConfig::for_resolution(res, config.window)?.narrowed(config.width_divisor);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let g = Generator::<f32>::new(gc, &mut rng)?;
        let options = InferenceOptions::default();
        let mut per_frame_ms = Vec::new();
        for s in 0..config.sequences {
            let seq_dir = workdir.join(format!("{res}")).join(format!("seq{s}"));
            let (ego_dir, cond_dir, out_dir) = (
                seq_dir.join("ego"),
                seq_dir.join("cond"),
                seq_dir.join("out"),
            );
            image_util::write_rgb_dir(
                &ego_dir,
                &synthetic_frames(config.frames, res as u32, s as u64),
            )?;
            image_util::write_rgb_dir(
                &cond_dir,
                &synthetic_frames(config.frames, res as u32, 100 + s as u64),
            )?;
            for _ in 0..config.repeats {
                let t0 = Instant::now();
                let ego = image_util::read_rgb_dir(&ego_dir)?;
                let cond = image_util::read_rgb_dir(&cond_dir)?;
                let out = synthesize_with_generator(&ego, &cond, &g, &options)?;
                image_util::write_rgb_dir(&out_dir, &out)?;
                per_frame_ms.push(t0.elapsed().as_secs_f64() * 1e3 / config.frames as f64);
            }
        }
        let (mean_ms, std_ms) = mean_std(&per_frame_ms);
        let median_ms = median(&mut per_frame_ms);
        rows.push(LatencyRow {
            resolution: res,
            mean_ms,
            median_ms,
            std_ms,
            real_time: mean_ms <= REAL_TIME_BUDGET_MS,
        });
    }
    Ok(LatencyTable {
        rows,
        budget_ms: REAL_TIME_BUDGET_MS,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;

    fn random_frame(w: u32, h: u32, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| {
            image::Rgb([rng.random(), rng.random(), rng.random()])
        })
    }

    #[test]
    fn closed_forms() {
        let black = RgbImage::new(8, 8);
        let white = RgbImage::from_pixel(8, 8, image::Rgb([255; 3]));
        assert_eq!(photometric_error(&black, &black).unwrap(), 0.0);
        assert!((photometric_error(&black, &white).unwrap() - 441.6730).abs() < 1e-4);
        assert!((MAX_PIXEL_ERROR - 3f64.sqrt() * 255.0).abs() < 1e-12);
        assert!(photometric_error(&black, &RgbImage::new(4, 8)).is_err());
    }

    #[test]
    fn report_statistics() {
        let f = random_frame(6, 6, 1);
        let r = sequence_report(&[f.clone(), f.clone()], &[f.clone(), f.clone()]).unwrap();
        assert_eq!((r.mean, r.std), (0.0, 0.0));
        assert!(r.heatmap_image().pixels().all(|p| p[0] == 0));

        let black = RgbImage::new(4, 4);
        let gray = RgbImage::from_pixel(4, 4, image::Rgb([30, 40, 0]));
        let c = 50.0;
        let constant = sequence_report(&vec![gray.clone(); 3], &vec![black.clone(); 3]).unwrap();
        assert!((constant.mean - c).abs() < 1e-12 && constant.std.abs() < 1e-12);
        let alternating = sequence_report(
            &[black.clone(), gray.clone(), black.clone(), gray],
            &[black.clone(), black.clone(), black.clone(), black],
        )
        .unwrap();
        assert!((alternating.mean - c / 2.0).abs() < 1e-12);
        assert!((alternating.std - c / 2.0).abs() < 1e-12);
        assert!(matches!(
            sequence_report(&[f.clone()], &[]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn heatmap_mean_equals_report_mean() {
        let pred: Vec<_> = (0..4).map(|i| random_frame(5, 7, i)).collect();
        let gt: Vec<_> = (0..4).map(|i| random_frame(5, 7, 10 + i)).collect();
        let r = sequence_report(&pred, &gt).unwrap();
        let hm = r.heatmap.iter().sum::<f64>() / r.heatmap.len() as f64;
        assert!((hm - r.mean).abs() < 1e-6);
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path()).unwrap();
        assert!(dir.path().join("heatmap.png").is_file());
        assert_eq!(
            fs::read_to_string(dir.path().join("errors.csv"))
                .unwrap()
                .lines()
                .count(),
            5
        );
    }

    #[test]
    fn probes() {
        let mut f = RgbImage::new(10, 10);
        f.put_pixel(3, 4, image::Rgb([200, 0, 0]));
        f.put_pixel(6, 2, image::Rgb([200, 0, 0]));
        assert_eq!(foreground_box(&f, 0), Some((3, 2, 7, 5)));
        assert_eq!(foreground_box(&RgbImage::new(3, 3), 0), None);
        let mut m = RgbImage::from_pixel(4, 4, image::Rgb([215, 165, 135]));
        m.put_pixel(1, 1, image::Rgb([70, 18, 24]));
        assert!((mouth_openness(&m, (0, 0, 4, 4)) - 1.0 / 16.0).abs() < 1e-12);
        assert!((correlation(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_latency_table_schema() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = LatencyConfig {
            resolutions: vec![64, 128],
            frames: 50,
            repeats: 1,
            sequences: 1,
            window: 2,
            width_divisor: 32,
            seed: 0,
        };
        let t = benchmark_latency(&cfg, dir.path()).unwrap();
        assert_eq!(t.rows.len(), 2);
        for r in &t.rows {
            assert!(r.mean_ms > 0.0 && r.median_ms > 0.0 && r.std_ms >= 0.0);
        }
        assert!(t.to_markdown().contains("128x128"));
        assert!(benchmark_latency(&LatencyConfig { frames: 10, ..cfg }, dir.path()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn metric_is_symmetric_and_satisfies_triangle(a in 0u64..1000, b in 0u64..1000, c in 0u64..1000) {
            let (fa, fb, fc) = (random_frame(4, 4, a), random_frame(4, 4, b), random_frame(4, 4, c));
            let ab = photometric_error(&fa, &fb).unwrap();
            prop_assert!((ab - photometric_error(&fb, &fa).unwrap()).abs() < 1e-12);
            prop_assert!(ab <= photometric_error(&fa, &fc).unwrap() + photometric_error(&fc, &fb).unwrap() + 1e-6);
            prop_assert!((0.0..=MAX_PIXEL_ERROR).contains(&ab));
        }
    }
}
