//! Sliding-window synthesis of frontal video from egocentric frames.

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::conditioning::{render_pose, resample_pose_track};
use crate::dataset::PairedSequence;
use crate::error::{Error, Result};
use crate::geometry::RigidPose;
use crate::image_util::stack_to_frames;
use crate::model::{Generator, ModelCheckpoint};
use crate::tensor::Tensor;
use crate::trainer::{FrameStore, RunMetadata};

/// Which frame of each predicted window is kept.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Frame `t` is the last frame of window `[t - N + 1, t]`.
    #[default]
    Last,
    /// Frame `t` is the center frame of window `[t - N/2, t + N - 1 - N/2]`.
    Middle,
}

impl Selection {
    fn offset(&self, n: usize) -> usize {
        match self {
            Selection::Last => n - 1,
            Selection::Middle => n / 2,
        }
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Selection::Last => "last",
            Selection::Middle => "middle",
        })
    }
}

impl FromStr for Selection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(Selection::Last),
            "middle" => Ok(Selection::Middle),
            other => Err(Error::InvalidConfig(format!(
                "unknown frame selection `{other}`"
            ))),
        }
    }
}

/// Window start used for output frame `t` of a length-`len` sequence.
pub fn window_start(t: usize, len: usize, n: usize, selection: Selection) -> usize {
    t.saturating_sub(selection.offset(n)).min(len - n)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceOptions {
    /// Window size the caller expects; must match the checkpoint.
    pub window: Option<usize>,
    pub selection: Selection,
    /// Windows per generator call.
    pub batch: usize,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            window: None,
            selection: Selection::Last,
            batch: 8,
        }
    }
}

/// Runs the generator over every needed window and assembles one output frame per
/// input frame.
pub fn synthesize_with_generator(
    ego: &[RgbImage],
    cond: &[RgbImage],
    generator: &Generator<f32>,
    options: &InferenceOptions,
) -> Result<Vec<RgbImage>> {
    let n = generator.config().window;
    if let Some(w) = options.window {
        if w != n {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint window is {n}, runtime asked for {w}"
            )));
        }
    }
    let len = ego.len();
    if len < n {
        return Err(Error::SequenceTooShort {
            length: len,
            window: n,
        });
    }
    if cond.len() != len {
        return Err(Error::LengthMismatch {
            left: len,
            right: cond.len(),
        });
    }
    let ego_store = FrameStore::new(ego);
    let cond_store = FrameStore::new(cond);
    let starts: Vec<usize> = (0..len)
        .map(|t| window_start(t, len, n, options.selection))
        .collect();
    let mut unique = starts.clone();
    unique.dedup();

    let mut windows: Vec<Vec<RgbImage>> = Vec::with_capacity(unique.len());
    for chunk in unique.chunks(options.batch.max(1)) {
        let input = Tensor::cat_channels(&ego_store.batch(chunk, n), &cond_store.batch(chunk, n));
        let out = generator.forward(&input)?;
        for b in 0..chunk.len() {
            windows.push(stack_to_frames(&out, b));
        }
    }
    Ok(starts
        .iter()
        .enumerate()
        .map(|(t, &s)| {
            let w = unique.binary_search(&s).expect("start recorded");
            windows[w][t - s].clone()
        })
        .collect())
}

/// Synthesizes with a checkpoint. `cond` of `None` feeds black conditioning.
pub fn synthesize(
    ego: &[RgbImage],
    cond: Option<&[RgbImage]>,
    checkpoint: &ModelCheckpoint,
    options: &InferenceOptions,
) -> Result<Vec<RgbImage>> {
    match cond {
        Some(c) => synthesize_with_generator(ego, c, &checkpoint.generator, options),
        None => {
            let black: Vec<RgbImage> = ego
                .iter()
                .map(|f| RgbImage::new(f.width(), f.height()))
                .collect();
            synthesize_with_generator(ego, &black, &checkpoint.generator, options)
        }
    }
}

/// Conditioning frames for a pose track, rendered the way the checkpoint was trained.
pub fn conditioning_for(
    checkpoint: &ModelCheckpoint,
    poses: &[RigidPose],
) -> Result<Vec<RgbImage>> {
    let meta = RunMetadata::from_checkpoint(checkpoint)?;
    let res = checkpoint.generator.config().resolution as u32;
    Ok(poses
        .iter()
        .map(|p| render_pose(meta.train_config.conditioning, &meta.scene, p, res))
        .collect())
}

/// Egocentric frames with the background handling the checkpoint was trained with.
pub fn prepare_ego(checkpoint: &ModelCheckpoint, seq: &PairedSequence) -> Result<Vec<RgbImage>> {
    let meta = RunMetadata::from_checkpoint(checkpoint)?;
    if !meta.train_config.remove_ego_bg {
        return Ok(seq.ego_frames.clone());
    }
    let mask = seq
        .ego_mask
        .as_ref()
        .ok_or_else(|| Error::MaskMissing("ego".into()))?;
    Ok(seq
        .ego_frames
        .iter()
        .map(|f| {
            let mut f = f.clone();
            for (p, m) in f.pixels_mut().zip(mask.pixels()) {
                if m[0] == 0 {
                    p.0 = [0; 3];
                }
            }
            f
        })
        .collect())
}

/// Synthesizes with the pose track taken from the training poses starting at
/// `start_frame`, so expression follows the egocentric input and head pose follows
/// the resampled track.
pub fn synthesize_with_resampled_pose(
    ego: &[RgbImage],
    training_poses: &[RigidPose],
    start_frame: usize,
    checkpoint: &ModelCheckpoint,
    options: &InferenceOptions,
) -> Result<Vec<RgbImage>> {
    let track = resample_pose_track(training_poses, start_frame, ego.len())?;
    let cond = conditioning_for(checkpoint, &track)?;
    synthesize(ego, Some(&cond), checkpoint, options)
}
