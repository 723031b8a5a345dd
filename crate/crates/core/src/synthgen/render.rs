use std::f64::consts::PI;

use image::{GrayImage, Luma, Rgb, RgbImage};
use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};

use super::camera::{FisheyeCamera, PinholeCamera, Projection};
use super::face::{FaceState, HeadFrame, HeadModel};
use crate::error::{Error, Result};
use crate::geometry::{RigidPose, Vec3};

pub const SUPPORTED_RESOLUTIONS: [u32; 3] = [64, 128, 256];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    #[default]
    Black,
    /// World-fixed checker pattern; moves in the egocentric view when the head turns.
    Textured,
}

/// Scene layout shared by all frames of a synthetic sequence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub resolution: u32,
    pub head: HeadModel,
    /// Distance from the frontal camera to the head's rest center.
    pub head_distance: f64,
    /// Frontal focal length as a multiple of the resolution.
    pub frontal_focal_scale: f64,
    pub ego_fov: f64,
    /// Ego camera position, head-local.
    pub ego_position: [f64; 3],
    /// Point the uncalibrated ego camera looks at, head-local.
    pub ego_target: [f64; 3],
    /// Fraction of the face surface that must fall outside the ego frame.
    pub occlusion: f64,
    pub background: Background,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            head: HeadModel::default(),
            head_distance: 4.0,
            frontal_focal_scale: 1.3,
            ego_fov: PI,
            ego_position: [0.5, 0.76, -1.27],
            ego_target: [0.0, 0.2, -0.6],
            occlusion: 0.4,
            background: Background::Black,
        }
    }
}

/// The two cameras observing the subject.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneCameras {
    pub ego: FisheyeCamera,
    pub front: PinholeCamera,
}

/// Frames and exact masks of one rendered state.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedPair {
    pub ego: RgbImage,
    pub front: RgbImage,
    pub ego_mask: GrayImage,
    pub front_mask: GrayImage,
}

/// Face-surface sample points (chart coordinates) used to measure ego occlusion.
fn face_samples(head: &HeadModel) -> Vec<Vec3> {
    let mut pts = Vec::with_capacity(41 * 41);
    for i in 0..=40 {
        for j in 0..=40 {
            let u = -1.1 + 2.2 * i as f64 / 40.0;
            let v = -0.6 + 1.3 * j as f64 / 40.0;
            pts.push(head.surface_point(u, v));
        }
    }
    pts
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_RESOLUTIONS.contains(&self.resolution) {
            return Err(Error::InvalidConfig(format!(
                "resolution {} not in {:?}",
                self.resolution, SUPPORTED_RESOLUTIONS
            )));
        }
        if !(0.0..0.95).contains(&self.occlusion) {
            return Err(Error::InvalidConfig(format!(
                "occlusion {} must be in [0, 0.95)",
                self.occlusion
            )));
        }
        Ok(())
    }

    pub fn rest_center(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.head_distance)
    }

    fn ego_mount(&self, tilt: f64) -> RigidPose {
        let pos = Vec3::from(self.ego_position);
        let base = (Vec3::from(self.ego_target) - pos).normalize();
        let axis = base.cross(&Vec3::y());
        let dir = if axis.norm() < 1e-9 || tilt == 0.0 {
            base
        } else {
            Rotation3::new(axis.normalize() * tilt) * base
        };
        RigidPose::look_along(pos, dir)
    }

    /// Fraction of face sample points that the ego camera does not image.
    pub fn ego_occlusion(&self, cam: &FisheyeCamera) -> f64 {
        let samples = face_samples(&self.head);
        let size = self.resolution as f64;
        let outside = samples
            .iter()
            .filter(|p| {
                let local = cam.mount_offset.apply_inverse(p);
                match cam.project(&local) {
                    Ok([x, y]) => !(0.0..size).contains(&x) || !(0.0..size).contains(&y),
                    Err(_) => true,
                }
            })
            .count();
        outside as f64 / samples.len() as f64
    }

    /// Builds both cameras; the ego camera is tilted away from the face until the
    /// configured occlusion fraction is reached.
    pub fn cameras(&self) -> Result<SceneCameras> {
        self.validate()?;
        let make = |tilt: f64| {
            FisheyeCamera::spanning(self.resolution, self.ego_fov, self.ego_mount(tilt))
        };
        let mut ego = make(0.0);
        if self.ego_occlusion(&ego) < self.occlusion {
            let (mut lo, mut hi) = (0.0, 1.4);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if self.ego_occlusion(&make(mid)) < self.occlusion {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            ego = make(hi);
        }
        ego.validate()?;
        Ok(SceneCameras {
            ego,
            front: self.front_camera(self.resolution),
        })
    }

    /// The fixed frontal camera at the world origin, looking down +z.
    pub fn front_camera(&self, resolution: u32) -> PinholeCamera {
        let half = resolution as f64 / 2.0;
        PinholeCamera {
            focal: self.frontal_focal_scale * resolution as f64,
            principal_point: [half, half],
            pose: RigidPose::IDENTITY,
        }
    }

    /// Bounding box `(x, y, w, h)` of the mouth region in the ego image.
    pub fn ego_mouth_box(&self, cams: &SceneCameras) -> Option<(u32, u32, u32, u32)> {
        let (mu, mv) = self.head.mouth_center();
        let size = self.resolution as f64;
        let mut pts = Vec::new();
        for i in 0..=8 {
            for j in 0..=8 {
                let u = mu - 0.28 + 0.56 * i as f64 / 8.0;
                let v = mv - 0.21 + 0.42 * j as f64 / 8.0;
                let local = cams
                    .ego
                    .mount_offset
                    .apply_inverse(&self.head.surface_point(u, v));
                if let Ok(p) = cams.ego.project(&local) {
                    pts.push(p);
                }
            }
        }
        let inside: Vec<_> = pts
            .into_iter()
            .filter(|p| (0.0..size).contains(&p[0]) && (0.0..size).contains(&p[1]))
            .collect();
        if inside.is_empty() {
            return None;
        }
        let x0 = inside
            .iter()
            .map(|p| p[0])
            .fold(f64::INFINITY, f64::min)
            .floor() as u32;
        let y0 = inside
            .iter()
            .map(|p| p[1])
            .fold(f64::INFINITY, f64::min)
            .floor() as u32;
        let x1 = inside
            .iter()
            .map(|p| p[0])
            .fold(0.0, f64::max)
            .ceil()
            .min(size) as u32;
        let y1 = inside
            .iter()
            .map(|p| p[1])
            .fold(0.0, f64::max)
            .ceil()
            .min(size) as u32;
        Some((x0, y0, (x1 - x0).max(1), (y1 - y0).max(1)))
    }
}

fn background_color(background: Background, world_dir: &Vec3) -> [u8; 3] {
    match background {
        Background::Black => [0, 0, 0],
        Background::Textured => {
            let az = world_dir.x.atan2(world_dir.z);
            let el = world_dir.y.clamp(-1.0, 1.0).asin();
            let cell = (az * 5.0).floor() as i64 + (el * 5.0).floor() as i64;
            if cell.rem_euclid(2) == 0 {
                [90, 110, 70]
            } else {
                [40, 60, 95]
            }
        }
    }
}

/// How surfaces are colored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shading {
    /// Lit albedo.
    Lit,
    /// Unlit flat albedo.
    Albedo,
}

/// Renders one view. `camera_to_head` maps camera coordinates into head-local ones;
/// `head_to_world` orients background rays.
#[allow(clippy::too_many_arguments)]
pub(crate) fn render_view(
    projection: &dyn Projection,
    camera_to_head: (&nalgebra::Matrix3<f64>, &Vec3),
    head_to_world: &nalgebra::Matrix3<f64>,
    head: &HeadModel,
    state: &FaceState,
    resolution: u32,
    background: Background,
    shading: Shading,
) -> (RgbImage, GrayImage) {
    let (rot, local_origin) = camera_to_head;
    let mut img = RgbImage::new(resolution, resolution);
    let mut mask = GrayImage::new(resolution, resolution);
    for y in 0..resolution {
        for x in 0..resolution {
            let Some(dir_cam) = projection.unproject([x as f64 + 0.5, y as f64 + 0.5]) else {
                continue;
            };
            let dir_local = rot * dir_cam;
            match head.intersect(local_origin, &dir_local) {
                Some(hit) => {
                    let c = head.shade(&hit, state, shading == Shading::Lit);
                    img.put_pixel(x, y, Rgb(c));
                    mask.put_pixel(x, y, Luma([255]));
                }
                None => {
                    let dir_world = head_to_world * dir_local;
                    img.put_pixel(x, y, Rgb(background_color(background, &dir_world)));
                }
            }
        }
    }
    (img, mask)
}

/// Camera-to-head transform of the fixed frontal camera.
pub(crate) fn front_to_head(
    cam: &PinholeCamera,
    frame: &HeadFrame,
) -> (nalgebra::Matrix3<f64>, Vec3) {
    let rot = frame.rotation.transpose() * cam.pose.rotation_matrix();
    (rot, frame.to_local(&cam.pose.translation_vector()))
}

/// Renders the egocentric and frontal views of one state with exact head masks.
pub fn render_pair(
    state: &FaceState,
    cams: &SceneCameras,
    scene: &SceneConfig,
) -> Result<RenderedPair> {
    let res = scene.resolution;
    if !SUPPORTED_RESOLUTIONS.contains(&res) {
        return Err(Error::InvalidConfig(format!(
            "resolution {res} not in {SUPPORTED_RESOLUTIONS:?}"
        )));
    }
    let frame = scene.head.frame(&state.rigid_pose, &scene.rest_center());

    let (front_rot, front_origin) = front_to_head(&cams.front, &frame);
    let (front, front_mask) = render_view(
        &cams.front,
        (&front_rot, &front_origin),
        &frame.rotation,
        &scene.head,
        state,
        res,
        scene.background,
        Shading::Lit,
    );

    // The ego camera is head-mounted: its rays are fixed in the head frame.
    let mount = &cams.ego.mount_offset;
    let (ego, ego_mask) = render_view(
        &cams.ego,
        (&mount.rotation_matrix(), &mount.translation_vector()),
        &frame.rotation,
        &scene.head,
        state,
        res,
        scene.background,
        Shading::Lit,
    );
    Ok(RenderedPair {
        ego,
        front,
        ego_mask,
        front_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(res: u32) -> (SceneConfig, SceneCameras) {
        let s = SceneConfig {
            resolution: res,
            ..SceneConfig::default()
        };
        let c = s.cameras().unwrap();
        (s, c)
    }

    #[test]
    fn rendering_is_deterministic() {
        let (s, c) = scene(64);
        let st = FaceState {
            mouth_open: 0.4,
            gaze: [0.3, -0.2],
            ..FaceState::default()
        };
        assert_eq!(
            render_pair(&st, &c, &s).unwrap(),
            render_pair(&st, &c, &s).unwrap()
        );
    }

    #[test]
    fn mouth_opening_changes_mouth_region() {
        let (s, c) = scene(128);
        let closed = render_pair(&FaceState::default(), &c, &s).unwrap();
        let open = render_pair(
            &FaceState {
                mouth_open: 1.0,
                ..FaceState::default()
            },
            &c,
            &s,
        )
        .unwrap();
        // mouth region of the frontal view: project the chart box
        let frame = s.head.frame(&RigidPose::IDENTITY, &s.rest_center());
        let corners = [(-0.3, 0.2), (0.3, 0.2), (-0.3, 0.65), (0.3, 0.65)].map(|(u, v)| {
            c.front
                .project(&frame.to_world(&s.head.surface_point(u, v)))
                .unwrap()
        });
        let (x0, x1) = (
            corners.iter().map(|p| p[0]).fold(f64::MAX, f64::min),
            corners.iter().map(|p| p[0]).fold(0.0, f64::max),
        );
        let (y0, y1) = (
            corners.iter().map(|p| p[1]).fold(f64::MAX, f64::min),
            corners.iter().map(|p| p[1]).fold(0.0, f64::max),
        );
        let (mut total, mut diff) = (0, 0);
        for y in y0 as u32..=y1 as u32 {
            for x in x0 as u32..=x1 as u32 {
                total += 1;
                if open.front.get_pixel(x, y) != closed.front.get_pixel(x, y) {
                    diff += 1;
                }
            }
        }
        assert!(diff as f64 >= 0.01 * total as f64, "{diff}/{total}");
        assert_ne!(open.ego, closed.ego);
    }

    #[test]
    fn pixels_outside_masks_are_background() {
        let (s, c) = scene(64);
        let st = FaceState {
            rigid_pose: RigidPose::new(0.3, -0.1, 0.05, [0.1, 0.0, 0.0]),
            ..FaceState::default()
        };
        let r = render_pair(&st, &c, &s).unwrap();
        for (img, mask) in [(&r.front, &r.front_mask), (&r.ego, &r.ego_mask)] {
            let mut inside = 0;
            for (p, m) in img.pixels().zip(mask.pixels()) {
                assert!(m.0[0] == 0 || m.0[0] == 255);
                if m.0[0] == 0 {
                    assert_eq!(p.0, [0, 0, 0]);
                } else {
                    inside += 1;
                    assert_ne!(p.0, [0, 0, 0]);
                }
            }
            assert!(inside > 0);
        }
    }

    #[test]
    fn occlusion_calibration_hits_target() {
        for target in [0.2, 0.4, 0.6] {
            let s = SceneConfig {
                occlusion: target,
                ..SceneConfig::default()
            };
            let c = s.cameras().unwrap();
            let measured = s.ego_occlusion(&c.ego);
            assert!(
                (measured - target).abs() < 0.03,
                "target {target}, measured {measured}"
            );
        }
    }

    #[test]
    fn ego_mouth_is_in_view_and_inside_the_mask() {
        let (s, c) = scene(64);
        let b = s.ego_mouth_box(&c).expect("mouth visible");
        let r = render_pair(&FaceState::default(), &c, &s).unwrap();
        let cx = b.0 + b.2 / 2;
        let cy = b.1 + b.3 / 2;
        assert_eq!(r.ego_mask.get_pixel(cx.min(63), cy.min(63)).0[0], 255);
    }

    #[test]
    fn head_pixels_roundtrip_through_fisheye() {
        let (s, c) = scene(64);
        let r = render_pair(&FaceState::default(), &c, &s).unwrap();
        let mut checked = 0;
        for y in (0..64).step_by(4) {
            for x in (0..64).step_by(4) {
                if r.ego_mask.get_pixel(x, y).0[0] == 0 {
                    continue;
                }
                let px = [x as f64 + 0.5, y as f64 + 0.5];
                let ray = c.ego.unproject(px).unwrap();
                let back = c.ego.project(&(ray * 1.7)).unwrap();
                assert!((back[0] - px[0]).abs() <= 0.5 && (back[1] - px[1]).abs() <= 0.5);
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn textured_background_moves_with_head_in_ego_view() {
        let s = SceneConfig {
            background: Background::Textured,
            ..SceneConfig::default()
        };
        let c = s.cameras().unwrap();
        let a = render_pair(&FaceState::default(), &c, &s).unwrap();
        let b = render_pair(
            &FaceState::neutral(RigidPose::new(0.3, 0.0, 0.0, [0.0; 3])),
            &c,
            &s,
        )
        .unwrap();
        assert_ne!(a.ego, b.ego);
        assert_eq!(a.ego_mask, b.ego_mask);
    }

    #[test]
    fn ego_view_ignores_rigid_pose_on_black_background() {
        let (s, c) = scene(64);
        let a = render_pair(&FaceState::default(), &c, &s).unwrap();
        let b = render_pair(
            &FaceState::neutral(RigidPose::new(0.3, -0.2, 0.1, [0.1, 0.1, 0.0])),
            &c,
            &s,
        )
        .unwrap();
        assert_eq!(a.ego, b.ego);
        assert_ne!(a.front, b.front);
    }
}
