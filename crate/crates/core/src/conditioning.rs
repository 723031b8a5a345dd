//! Per-frame pose conditioning images rendered from a rigid pose track.
//!
//! The conditioning never sees expression: every mode renders the neutral head.

use std::fmt;
use std::str::FromStr;

use image::{GrayImage, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidPose;
use crate::synthgen::camera::Projection;
use crate::synthgen::face::FaceState;
use crate::synthgen::render::{front_to_head, render_view, Background, SceneConfig, Shading};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningMode {
    /// Unlit albedo of the neutral head.
    #[default]
    NeutralHead,
    /// 68 head-anchored keypoints drawn as 3x3 dots.
    Landmarks,
    /// Head silhouette outline.
    Contours,
    /// All-zero images.
    None,
}

impl ConditioningMode {
    pub const ALL: [ConditioningMode; 4] = [
        ConditioningMode::NeutralHead,
        ConditioningMode::Landmarks,
        ConditioningMode::Contours,
        ConditioningMode::None,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ConditioningMode::NeutralHead => "neutral_head",
            ConditioningMode::Landmarks => "landmarks",
            ConditioningMode::Contours => "contours",
            ConditioningMode::None => "none",
        }
    }
}

impl fmt::Display for ConditioningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditioningMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown conditioning mode `{s}`")))
    }
}

/// What to render and along which pose track. `scene` supplies the head model
/// and frontal camera geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningSpec {
    pub mode: ConditioningMode,
    pub scene: SceneConfig,
    pub pose_track: Vec<RigidPose>,
}

const MARK: Rgb<u8> = Rgb([255, 255, 255]);

impl ConditioningSpec {
    pub fn new(mode: ConditioningMode, scene: SceneConfig, pose_track: Vec<RigidPose>) -> Self {
        Self {
            mode,
            scene,
            pose_track,
        }
    }

    pub fn len(&self) -> usize {
        self.pose_track.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pose_track.is_empty()
    }

    /// Conditioning image of frame `index`.
    pub fn render(&self, index: usize, resolution: u32) -> Result<RgbImage> {
        let pose = self.pose_track.get(index).ok_or(Error::IndexOutOfRange {
            index,
            length: self.pose_track.len(),
        })?;
        Ok(render_pose(self.mode, &self.scene, pose, resolution))
    }

    /// Conditioning images for the whole track.
    pub fn render_track(&self, resolution: u32) -> Vec<RgbImage> {
        self.pose_track
            .iter()
            .map(|p| render_pose(self.mode, &self.scene, p, resolution))
            .collect()
    }
}

pub fn render_conditioning(
    spec: &ConditioningSpec,
    frame_index: usize,
    resolution: u32,
) -> Result<RgbImage> {
    spec.render(frame_index, resolution)
}

fn silhouette(scene: &SceneConfig, pose: &RigidPose, resolution: u32) -> (RgbImage, GrayImage) {
    let cam = scene.front_camera(resolution);
    let frame = scene.head.frame(pose, &scene.rest_center());
    let (rot, origin) = front_to_head(&cam, &frame);
    render_view(
        &cam,
        (&rot, &origin),
        &frame.rotation,
        &scene.head,
        &FaceState::neutral(*pose),
        resolution,
        Background::Black,
        Shading::Albedo,
    )
}

/// Renders one conditioning image for a rigid pose.
pub fn render_pose(
    mode: ConditioningMode,
    scene: &SceneConfig,
    pose: &RigidPose,
    resolution: u32,
) -> RgbImage {
    match mode {
        ConditioningMode::None => RgbImage::new(resolution, resolution),
        ConditioningMode::NeutralHead => silhouette(scene, pose, resolution).0,
        ConditioningMode::Contours => {
            let (_, mask) = silhouette(scene, pose, resolution);
            let inside = |x: i64, y: i64| {
                x >= 0
                    && y >= 0
                    && x < resolution as i64
                    && y < resolution as i64
                    && mask.get_pixel(x as u32, y as u32)[0] > 0
            };
            RgbImage::from_fn(resolution, resolution, |x, y| {
                let (xi, yi) = (x as i64, y as i64);
                let edge = inside(xi, yi)
                    && [(1, 0), (-1, 0), (0, 1), (0, -1)]
                        .iter()
                        .any(|(dx, dy)| !inside(xi + dx, yi + dy));
                if edge {
                    MARK
                } else {
                    Rgb([0, 0, 0])
                }
            })
        }
        ConditioningMode::Landmarks => {
            let cam = scene.front_camera(resolution);
            let frame = scene.head.frame(pose, &scene.rest_center());
            let cam_pos = cam.pose.translation_vector();
            let mut img = RgbImage::new(resolution, resolution);
            for (u, v) in scene.head.landmarks() {
                let local = scene.head.surface_point(u, v);
                let world = frame.to_world(&local);
                let normal = frame.dir_to_world(
                    &local.component_div(
                        &scene
                            .head
                            .radii_vector()
                            .component_mul(&scene.head.radii_vector()),
                    ),
                );
                if normal.dot(&(cam_pos - world)) <= 0.0 {
                    continue;
                }
                let cam_point = cam.pose.apply_inverse(&world);
                let Ok([px, py]) = cam.project(&cam_point) else {
                    continue;
                };
                let (cx, cy) = (px.floor() as i64, py.floor() as i64);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (x, y) = (cx + dx, cy + dy);
                        if x >= 0 && y >= 0 && x < resolution as i64 && y < resolution as i64 {
                            img.put_pixel(x as u32, y as u32, MARK);
                        }
                    }
                }
            }
            img
        }
    }
}

/// `length` consecutive training poses from `start`, reflecting at the end of
/// the pose set.
pub fn resample_pose_track(
    training_poses: &[RigidPose],
    start_frame: usize,
    length: usize,
) -> Result<Vec<RigidPose>> {
    let n = training_poses.len();
    if n == 0 {
        return Err(Error::EmptyPoseSet);
    }
    if n == 1 {
        return Ok(vec![training_poses[0]; length]);
    }
    let period = 2 * (n - 1);
    Ok((0..length)
        .map(|k| {
            let m = (start_frame + k) % period;
            training_poses[if m < n { m } else { period - m }]
        })
        .collect())
}

/// A track holding one pose.
pub fn static_pose_track(pose: RigidPose, length: usize) -> Vec<RigidPose> {
    vec![pose; length]
}
