//! Paired recordings: loading, split bookkeeping, background masks, cropping and
//! N-frame sliding windows.

use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use image::{imageops, GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidPose;
use crate::image_util::{self, frames_to_stack};
use crate::tensor::{Scalar, Tensor};

pub const PAPER_TRAIN_END: usize = 7500;
pub const PAPER_VAL_END: usize = 10000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split `{other}`"))),
        }
    }
}

/// Split boundaries: train is `[0, train_end)`, validation `[train_end, val_end)`,
/// test the rest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train_end: usize,
    pub val_end: usize,
}

impl Splits {
    pub fn new(train_end: usize, val_end: usize) -> Self {
        Self { train_end, val_end }
    }

    /// 7500/2500/rest when the recording is long enough, 60/20/20 percent otherwise.
    pub fn default_for(length: usize) -> Self {
        if length > PAPER_VAL_END {
            Self::new(PAPER_TRAIN_END, PAPER_VAL_END)
        } else {
            Self::new(length * 3 / 5, length * 4 / 5)
        }
    }

    pub fn validate(&self, length: usize) -> Result<()> {
        if self.train_end > self.val_end || self.val_end > length {
            return Err(Error::InvalidData(format!(
                "splits ({}, {}) not ordered within length {length}",
                self.train_end, self.val_end
            )));
        }
        Ok(())
    }

    pub fn range(&self, split: Split, length: usize) -> Range<usize> {
        match split {
            Split::Train => 0..self.train_end,
            Split::Val => self.train_end..self.val_end,
            Split::Test => self.val_end..length,
        }
    }
}

/// Number of stride-1 windows of size `n` over `len` frames.
pub fn window_count(split: Split, len: usize, n: usize) -> Result<usize> {
    if n == 0 || len < n {
        return Err(Error::SplitTooShort {
            split: split.to_string(),
            length: len,
            window: n,
        });
    }
    Ok(len - n + 1)
}

/// Synchronized egocentric and frontal frame streams with masks and poses.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSequence {
    pub ego_frames: Vec<RgbImage>,
    pub front_frames: Vec<RgbImage>,
    /// Single egocentric mask shared by all frames.
    pub ego_mask: Option<GrayImage>,
    pub front_masks: Option<Vec<GrayImage>>,
    pub poses: Vec<RigidPose>,
    pub splits: Splits,
    /// Egocentric mouth bounding box `(x, y, w, h)`, when known.
    pub ego_mouth_box: Option<(u32, u32, u32, u32)>,
}

impl PairedSequence {
    pub fn len(&self) -> usize {
        self.ego_frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ego_frames.is_empty()
    }

    pub fn resolution(&self) -> (u32, u32) {
        self.ego_frames
            .first()
            .map(|f| f.dimensions())
            .unwrap_or((0, 0))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let mut lens = vec![
            ("front_frames", self.front_frames.len()),
            ("poses", self.poses.len()),
        ];
        if let Some(m) = &self.front_masks {
            lens.push(("front_masks", m.len()));
        }
        for (name, l) in lens {
            if l != n {
                return Err(Error::InvalidData(format!(
                    "{name} has {l} entries, ego_frames has {n}"
                )));
            }
        }
        self.splits.validate(n)?;
        let dims = self.resolution();
        let frames = self
            .ego_frames
            .iter()
            .chain(&self.front_frames)
            .map(|f| f.dimensions());
        let masks = self
            .front_masks
            .iter()
            .flatten()
            .chain(&self.ego_mask)
            .map(|m| m.dimensions());
        if let Some(d) = frames.chain(masks).find(|d| *d != dims) {
            return Err(Error::InvalidData(format!(
                "frame or mask of size {d:?}, expected {dims:?}"
            )));
        }
        Ok(())
    }

    pub fn split_range(&self, split: Split) -> Range<usize> {
        self.splits.range(split, self.len())
    }

    /// Start indices (global) of all windows of size `n` inside `split`.
    pub fn window_starts(&self, split: Split, n: usize) -> Result<Range<usize>> {
        let r = self.split_range(split);
        let count = window_count(split, r.len(), n)?;
        Ok(r.start..r.start + count)
    }

    /// Replaces the egocentric mask (e.g. a manually adjusted one), keeping the
    /// mouth box visible.
    pub fn with_ego_mask(mut self, mask: GrayImage) -> Self {
        self.ego_mask = Some(mask);
        self.ensure_mouth_visible();
        self
    }

    /// Sets the ego mask to foreground over the known mouth box.
    pub fn ensure_mouth_visible(&mut self) {
        if let (Some(mask), Some((x, y, w, h))) = (self.ego_mask.as_mut(), self.ego_mouth_box) {
            for yy in y..(y + h).min(mask.height()) {
                for xx in x..(x + w).min(mask.width()) {
                    mask.put_pixel(xx, yy, Luma([255]));
                }
            }
        }
    }

    /// Zeroes frontal background per frame and, if requested, egocentric background
    /// with the shared mask. Pure and idempotent.
    pub fn apply_masks(&self, remove_ego_bg: bool) -> Result<PairedSequence> {
        let front_masks = self
            .front_masks
            .as_ref()
            .ok_or_else(|| Error::MaskMissing("front".into()))?;
        let mut out = self.clone();
        for (f, m) in out.front_frames.iter_mut().zip(front_masks) {
            mask_frame(f, m);
        }
        if remove_ego_bg {
            let m = self
                .ego_mask
                .as_ref()
                .ok_or_else(|| Error::MaskMissing("ego".into()))?;
            for f in &mut out.ego_frames {
                mask_frame(f, m);
            }
        }
        Ok(out)
    }

    /// Takes `count` frames starting at `start`, with splits rebased to the slice.
    pub fn slice(&self, start: usize, count: usize, splits: Splits) -> Result<PairedSequence> {
        let end = start + count;
        if end > self.len() {
            return Err(Error::IndexOutOfRange {
                index: end,
                length: self.len(),
            });
        }
        let out = PairedSequence {
            ego_frames: self.ego_frames[start..end].to_vec(),
            front_frames: self.front_frames[start..end].to_vec(),
            ego_mask: self.ego_mask.clone(),
            front_masks: self.front_masks.as_ref().map(|m| m[start..end].to_vec()),
            poses: self.poses[start..end].to_vec(),
            splits,
            ego_mouth_box: self.ego_mouth_box,
        };
        out.validate()?;
        Ok(out)
    }

    /// Loads the on-disk layout: `ego/`, `front/`, `masks/{ego,front}/`, `poses.csv`
    /// and (optionally) `manifest.json` for splits and the mouth box.
    pub fn load(dir: &Path, ego_mask_override: Option<&Path>) -> Result<PairedSequence> {
        let ego_frames = image_util::read_rgb_dir(&dir.join("ego"))?;
        let front_frames = image_util::read_rgb_dir(&dir.join("front"))?;
        let front_mask_dir = dir.join("masks").join("front");
        let front_masks = if front_mask_dir.is_dir() {
            Some(image_util::read_gray_dir(&front_mask_dir)?)
        } else {
            None
        };
        let ego_mask = match ego_mask_override {
            Some(p) => Some(image_util::read_gray(p)?),
            None => {
                let first = dir
                    .join("masks")
                    .join("ego")
                    .join(image_util::frame_name(0));
                if first.is_file() {
                    Some(image_util::read_gray(&first)?)
                } else {
                    None
                }
            }
        };
        let poses = read_poses(&dir.join("poses.csv"))?;
        let manifest_path = dir.join("manifest.json");
        let (splits, ego_mouth_box) = if manifest_path.is_file() {
            let text =
                fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
            let v: serde_json::Value = serde_json::from_str(&text)?;
            let splits = match v.get("splits") {
                Some(s) => serde_json::from_value(s.clone())?,
                None => Splits::default_for(ego_frames.len()),
            };
            let mouth = match v.get("ego_mouth_box") {
                Some(b) => serde_json::from_value(b.clone())?,
                None => None,
            };
            (splits, mouth)
        } else {
            (Splits::default_for(ego_frames.len()), None)
        };
        let mut seq = PairedSequence {
            ego_frames,
            front_frames,
            ego_mask,
            front_masks,
            poses,
            splits,
            ego_mouth_box,
        };
        seq.ensure_mouth_visible();
        seq.validate()?;
        Ok(seq)
    }
}

fn mask_frame(frame: &mut RgbImage, mask: &GrayImage) {
    for (p, m) in frame.pixels_mut().zip(mask.pixels()) {
        if m[0] == 0 {
            p.0 = [0, 0, 0];
        }
    }
}

/// Writes frames, masks and `poses.csv` of a sequence under `dir`.
pub fn write_sequence(dir: &Path, seq: &PairedSequence) -> Result<()> {
    image_util::write_rgb_dir(&dir.join("ego"), &seq.ego_frames)?;
    image_util::write_rgb_dir(&dir.join("front"), &seq.front_frames)?;
    if let Some(m) = &seq.front_masks {
        image_util::write_gray_dir(&dir.join("masks").join("front"), m)?;
    }
    if let Some(m) = &seq.ego_mask {
        image_util::write_gray_dir(&dir.join("masks").join("ego"), &vec![m.clone(); seq.len()])?;
    }
    write_poses(&dir.join("poses.csv"), &seq.poses)
}

pub fn write_poses(path: &Path, poses: &[RigidPose]) -> Result<()> {
    let mut csv = String::from("frame,yaw,pitch,roll,tx,ty,tz\n");
    for (i, p) in poses.iter().enumerate() {
        let [y, pi, r] = p.rotation;
        let [tx, ty, tz] = p.translation;
        csv.push_str(&format!("{i},{y},{pi},{r},{tx},{ty},{tz}\n"));
    }
    fs::write(path, csv).map_err(|e| Error::io(path, e))
}

pub fn read_poses(path: &Path) -> Result<Vec<RigidPose>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut poses = Vec::new();
    for (line_no, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .skip(1)
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidData(format!("{}:{}: {e}", path.display(), line_no + 1)))?;
        if vals.len() != 6 {
            return Err(Error::InvalidData(format!(
                "{}:{}: expected 7 columns",
                path.display(),
                line_no + 1
            )));
        }
        poses.push(RigidPose::new(
            vals[0],
            vals[1],
            vals[2],
            [vals[3], vals[4], vals[5]],
        ));
    }
    Ok(poses)
}

/// One N-frame sample: `[1, 3N, H, W]` stacks normalized to [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct FrameWindow<T> {
    pub ego_stack: Tensor<T>,
    pub cond_stack: Tensor<T>,
    pub target_stack: Tensor<T>,
    pub start_index: usize,
}

impl<T: Scalar> FrameWindow<T> {
    /// Builds the window `[start, start + n)` from global-index frame stores.
    pub fn assemble(
        ego: &[RgbImage],
        cond: &[RgbImage],
        target: &[RgbImage],
        start: usize,
        n: usize,
    ) -> Result<FrameWindow<T>> {
        let end = start + n;
        let max = ego.len().min(cond.len()).min(target.len());
        if end > max {
            return Err(Error::IndexOutOfRange {
                index: end - 1,
                length: max,
            });
        }
        let stack = |v: &[RgbImage]| frames_to_stack(&v[start..end].iter().collect::<Vec<_>>());
        Ok(FrameWindow {
            ego_stack: stack(ego)?,
            cond_stack: stack(cond)?,
            target_stack: stack(target)?,
            start_index: start,
        })
    }

    /// Generator input: egocentric stack followed by the conditioning stack.
    pub fn generator_input(&self) -> Tensor<T> {
        Tensor::cat_channels(&self.ego_stack, &self.cond_stack)
    }
}

/// All windows of `split` in temporal order. `cond` holds one conditioning frame per
/// sequence frame.
pub fn windows<'a, T: Scalar>(
    seq: &'a PairedSequence,
    cond: &'a [RgbImage],
    split: Split,
    n: usize,
) -> Result<impl Iterator<Item = Result<FrameWindow<T>>> + 'a> {
    let starts = seq.window_starts(split, n)?;
    Ok(starts.map(move |s| FrameWindow::assemble(&seq.ego_frames, cond, &seq.front_frames, s, n)))
}

/// Black bands `(left/right, top/bottom)` that center-pad a `w x h` box to a square.
pub fn square_padding(w: u32, h: u32) -> (u32, u32) {
    let side = w.max(h);
    ((side - w) / 2, (side - h) / 2)
}

/// Crops `(x, y, w, h)`, center-pads to a square and resizes to `out_res`.
pub fn crop_resize(frame: &RgbImage, crop: (u32, u32, u32, u32), out_res: u32) -> Result<RgbImage> {
    let (x, y, w, h) = crop;
    let (fw, fh) = frame.dimensions();
    if w == 0
        || h == 0
        || x.checked_add(w).is_none_or(|e| e > fw)
        || y.checked_add(h).is_none_or(|e| e > fh)
    {
        return Err(Error::CropOutOfBounds {
            crop,
            width: fw,
            height: fh,
        });
    }
    if out_res == 0 {
        return Err(Error::InvalidConfig(
            "output resolution must be positive".into(),
        ));
    }
    if (x, y, w, h) == (0, 0, fw, fh) && w == h && w == out_res {
        return Ok(frame.clone());
    }
    let cropped = imageops::crop_imm(frame, x, y, w, h).to_image();
    let side = w.max(h);
    let (px, py) = square_padding(w, h);
    let mut square = RgbImage::new(side, side);
    imageops::replace(&mut square, &cropped, px as i64, py as i64);
    if side == out_res {
        return Ok(square);
    }
    Ok(imageops::resize(
        &square,
        out_res,
        out_res,
        imageops::FilterType::Triangle,
    ))
}
