//! Temporal alignment of two recordings on a shared flash (white) frame.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::ops::Range;

use image::RgbImage;
use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_util::mean_luminance;

pub const DEFAULT_THRESHOLD: f64 = 0.8;
/// A transient must be this many times brighter than the running median.
pub const MEDIAN_RATIO: f64 = 3.0;

/// Frame offset between two streams: frame `i` of `a` shows the same instant as
/// frame `i - offset_frames` of `b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncOffset {
    pub offset_frames: i64,
    pub confidence: f64,
}

#[derive(Default)]
struct RunningMedian {
    low: BinaryHeap<OrderedFloat<f64>>,
    high: BinaryHeap<Reverse<OrderedFloat<f64>>>,
}

impl RunningMedian {
    fn push(&mut self, v: f64) {
        let v = OrderedFloat(v);
        if self.low.peek().is_none_or(|top| v <= *top) {
            self.low.push(v);
        } else {
            self.high.push(Reverse(v));
        }
        if self.low.len() > self.high.len() + 1 {
            let x = self.low.pop().expect("nonempty");
            self.high.push(Reverse(x));
        } else if self.high.len() > self.low.len() {
            let Reverse(x) = self.high.pop().expect("nonempty");
            self.low.push(x);
        }
    }

    fn median(&self) -> Option<f64> {
        let lo = self.low.peek()?.0;
        if self.low.len() > self.high.len() {
            Some(lo)
        } else {
            Some(0.5 * (lo + self.high.peek()?.0 .0))
        }
    }
}

/// Index and confidence of the first transient in a mean-luminance track.
fn find_transient(luma: &[f64], threshold: f64) -> Result<(usize, f64)> {
    if luma.is_empty() || !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "transient detection needs frames and a threshold in (0, 1), got {} frames and {threshold}",
            luma.len()
        )));
    }
    let level = threshold * 255.0;
    let mut median = RunningMedian::default();
    for (i, &l) in luma.iter().enumerate() {
        if let Some(m) = median.median() {
            let bar = level.max(MEDIAN_RATIO * m);
            if l > bar {
                let confidence = ((l - bar) / l.max(1e-9)).clamp(0.0, 1.0);
                return Ok((i, confidence));
            }
        }
        median.push(l);
    }
    Err(Error::NoTransientFound { threshold })
}

/// First frame whose mean luminance exceeds `threshold * 255` and three times the
/// median of all earlier frames. Frame 0 has no history and is never reported.
pub fn detect_transient(luma: &[f64], threshold: f64) -> Result<usize> {
    find_transient(luma, threshold).map(|(i, _)| i)
}

pub fn luminance_track(frames: &[RgbImage]) -> Vec<f64> {
    frames.iter().map(mean_luminance).collect()
}

/// Offset between the transients of two luminance tracks.
pub fn align(a: &[f64], b: &[f64], threshold: f64) -> Result<SyncOffset> {
    let (ia, ca) = find_transient(a, threshold)?;
    let (ib, cb) = find_transient(b, threshold)?;
    Ok(SyncOffset {
        offset_frames: ia as i64 - ib as i64,
        confidence: ca.min(cb),
    })
}

/// Index ranges of `a` and `b` covering their common time span.
pub fn common_range(
    len_a: usize,
    len_b: usize,
    offset: i64,
) -> Result<(Range<usize>, Range<usize>)> {
    let start_a = offset.max(0) as usize;
    let start_b = (-offset).max(0) as usize;
    if start_a >= len_a || start_b >= len_b {
        return Err(Error::NoOverlap {
            offset,
            len_a,
            len_b,
        });
    }
    let n = (len_a - start_a).min(len_b - start_b);
    Ok((start_a..start_a + n, start_b..start_b + n))
}

/// Aligns two recordings and trims both to their common span.
pub fn align_frames(
    a: &[RgbImage],
    b: &[RgbImage],
    threshold: f64,
) -> Result<(SyncOffset, Vec<RgbImage>, Vec<RgbImage>)> {
    let off = align(&luminance_track(a), &luminance_track(b), threshold)?;
    let (ra, rb) = common_range(a.len(), b.len(), off.offset_frames)?;
    Ok((off, a[ra].to_vec(), b[rb].to_vec()))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn flash_track(len: usize, at: usize) -> Vec<f64> {
        let mut v = vec![0.0; len];
        v[at] = 255.0;
        v
    }

    #[test]
    fn black_track_with_one_white_frame() {
        assert_eq!(detect_transient(&flash_track(100, 42), 0.8).unwrap(), 42);
        assert!(matches!(
            detect_transient(&[0.0; 50], 0.8),
            Err(Error::NoTransientFound { .. })
        ));
    }

    #[test]
    fn noisy_gray_track_matches_brightest_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut v: Vec<f64> = (0..300)
            .map(|_| 60.0 + rng.random_range(-15.0..15.0))
            .collect();
        v[171] = 250.0;
        let brute = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(detect_transient(&v, 0.8).unwrap(), brute);
    }

    #[test]
    fn bright_scene_is_not_a_transient() {
        assert!(detect_transient(&[230.0; 40], 0.8).is_err());
    }

    #[test]
    fn running_median_matches_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = RunningMedian::default();
        let mut seen = Vec::new();
        for _ in 0..101 {
            let x: f64 = rng.random_range(0.0..10.0);
            m.push(x);
            seen.push(x);
            let mut s = seen.clone();
            s.sort_by(f64::total_cmp);
            let k = s.len();
            let want = if k % 2 == 1 {
                s[k / 2]
            } else {
                0.5 * (s[k / 2 - 1] + s[k / 2])
            };
            assert_eq!(m.median().unwrap(), want);
        }
    }

    #[test]
    fn constructed_delay() {
        let a = flash_track(80, 10);
        assert_eq!(align(&a, &a, 0.8).unwrap().offset_frames, 0);
        let b = flash_track(80, 17);
        assert_eq!(align(&a, &b, 0.8).unwrap().offset_frames, -7);
        assert!(align(&a, &[0.0; 80], 0.8).is_err());
    }

    #[test]
    fn trimmed_streams_share_event_index() {
        let mk = |len: usize, at: usize| -> Vec<RgbImage> {
            (0..len)
                .map(|i| {
                    RgbImage::from_pixel(2, 2, image::Rgb([if i == at { 255 } else { 10 }; 3]))
                })
                .collect()
        };
        let (off, a, b) = align_frames(&mk(60, 30), &mk(50, 12), 0.8).unwrap();
        assert_eq!(off.offset_frames, 18);
        assert_eq!(a.len(), b.len());
        let ta = detect_transient(&luminance_track(&a), 0.8).unwrap();
        assert_eq!(ta, detect_transient(&luminance_track(&b), 0.8).unwrap());
        assert!(off.confidence > 0.0 && off.confidence <= 1.0);
    }

    #[test]
    fn disjoint_streams_have_no_overlap() {
        assert!(matches!(
            common_range(10, 10, 10),
            Err(Error::NoOverlap { .. })
        ));
        assert!(matches!(
            common_range(10, 10, -12),
            Err(Error::NoOverlap { .. })
        ));
    }

    proptest! {
        #[test]
        fn offset_is_antisymmetric(ia in 1usize..60, ib in 1usize..60) {
            let a = flash_track(64, ia);
            let b = flash_track(64, ib);
            let ab = align(&a, &b, 0.8).unwrap().offset_frames;
            prop_assert_eq!(ab, -align(&b, &a, 0.8).unwrap().offset_frames);
            prop_assert_eq!(ab, ia as i64 - ib as i64);
            let (ra, rb) = common_range(64, 64, ab).unwrap();
            prop_assert_eq!(detect_transient(&a[ra], 0.8).ok(), detect_transient(&b[rb], 0.8).ok());
        }
    }
}
