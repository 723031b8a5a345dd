//! Parametric head: an ellipsoid with painted, articulated facial features.
//!
//! Features live in a spherical (u, v) chart of the head surface: `u` is the
//! horizontal angle from the face front, `v` the elevation (positive downwards).

use serde::{Deserialize, Serialize};

use crate::geometry::{intersect_ellipsoid, RigidPose, Vec3};

/// Expression and pose of the synthetic subject for one frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FaceState {
    pub mouth_open: f64,
    pub blink_left: f64,
    pub blink_right: f64,
    pub gaze: [f64; 2],
    pub brow_raise: f64,
    pub rigid_pose: RigidPose,
}

impl FaceState {
    /// Zero expression at the given pose.
    pub fn neutral(rigid_pose: RigidPose) -> Self {
        Self {
            rigid_pose,
            ..Self::default()
        }
    }

    pub fn clamped(mut self) -> Self {
        self.mouth_open = self.mouth_open.clamp(0.0, 1.0);
        self.blink_left = self.blink_left.clamp(0.0, 1.0);
        self.blink_right = self.blink_right.clamp(0.0, 1.0);
        self.brow_raise = self.brow_raise.clamp(0.0, 1.0);
        self.gaze = [self.gaze[0].clamp(-1.0, 1.0), self.gaze[1].clamp(-1.0, 1.0)];
        self
    }

    /// Expression scalars in a fixed order.
    pub fn expression(&self) -> [f64; 6] {
        [
            self.mouth_open,
            self.blink_left,
            self.blink_right,
            self.gaze[0],
            self.gaze[1],
            self.brow_raise,
        ]
    }

    /// Largest absolute per-field change between two states (expression and pose).
    pub fn max_delta(&self, other: &FaceState) -> f64 {
        let e = self
            .expression()
            .into_iter()
            .zip(other.expression())
            .map(|(a, b)| (a - b).abs());
        let r = self
            .rigid_pose
            .rotation
            .iter()
            .zip(&other.rigid_pose.rotation)
            .map(|(a, b)| (a - b).abs());
        let t = self
            .rigid_pose
            .translation
            .iter()
            .zip(&other.rigid_pose.translation)
            .map(|(a, b)| (a - b).abs());
        e.chain(r).chain(t).fold(0.0, f64::max)
    }
}

pub type Rgb = [u8; 3];

const SKIN: [f64; 3] = [215.0, 165.0, 135.0];
const HAIR: Rgb = [70, 45, 30];
const BROW: Rgb = [60, 38, 25];
const SCLERA: Rgb = [240, 240, 235];
const IRIS: Rgb = [60, 100, 150];
const PUPIL: Rgb = [20, 20, 30];
const LIPS: Rgb = [170, 60, 65];
const MOUTH_INSIDE: Rgb = [70, 18, 24];
const TEETH: Rgb = [235, 232, 220];

/// Head geometry in head-local coordinates (x right, y down, face towards -z).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadModel {
    pub radii: [f64; 3],
    /// Rotation pivot (neck), head-local.
    pub pivot: [f64; 3],
    /// Head-local direction towards the light.
    pub light: [f64; 3],
}

impl Default for HeadModel {
    fn default() -> Self {
        Self {
            radii: [0.78, 1.0, 0.9],
            pivot: [0.0, 0.9, 0.35],
            light: [-0.3, -0.5, -1.0],
        }
    }
}

/// Surface hit in head-local coordinates.
#[derive(Clone, Copy, Debug)]
pub struct SurfaceHit {
    pub point: Vec3,
    pub normal: Vec3,
}

/// Head-local to world transform for a given rigid pose.
#[derive(Clone, Copy, Debug)]
pub struct HeadFrame {
    pub rotation: nalgebra::Matrix3<f64>,
    pub origin: Vec3,
}

impl HeadFrame {
    pub fn to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.origin
    }

    pub fn dir_to_world(&self, d: &Vec3) -> Vec3 {
        self.rotation * d
    }

    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.origin)
    }

    pub fn dir_to_local(&self, d: &Vec3) -> Vec3 {
        self.rotation.transpose() * d
    }
}

impl HeadModel {
    pub fn radii_vector(&self) -> Vec3 {
        Vec3::from(self.radii)
    }

    /// Frame of a head whose rest center is `rest_center` (world), rotated about the
    /// pivot and translated by `pose`.
    pub fn frame(&self, pose: &RigidPose, rest_center: &Vec3) -> HeadFrame {
        let r = pose.rotation_matrix();
        let pivot = Vec3::from(self.pivot);
        HeadFrame {
            rotation: r,
            origin: rest_center + pose.translation_vector() + pivot - r * pivot,
        }
    }

    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<SurfaceHit> {
        let radii = self.radii_vector();
        let t = intersect_ellipsoid(origin, dir, &radii)?;
        let point = origin + dir * t;
        let normal = point
            .component_div(&radii.component_mul(&radii))
            .normalize();
        Some(SurfaceHit { point, normal })
    }

    /// Surface chart coordinates of a head-local point.
    pub fn chart(&self, p: &Vec3) -> (f64, f64) {
        let q = p.component_div(&self.radii_vector());
        (q.x.atan2(-q.z), q.y.clamp(-1.0, 1.0).asin())
    }

    /// Head-local surface point at chart coordinates.
    pub fn surface_point(&self, u: f64, v: f64) -> Vec3 {
        let q = Vec3::new(u.sin() * v.cos(), v.sin(), -u.cos() * v.cos());
        q.component_mul(&self.radii_vector())
    }

    /// Chart position of the mouth center.
    pub fn mouth_center(&self) -> (f64, f64) {
        (0.0, 0.42)
    }

    /// Albedo at a surface point for the given expression.
    pub fn albedo(&self, p: &Vec3, state: &FaceState) -> [f64; 3] {
        let (u, v) = self.chart(p);
        let feature = paint_features(u, v, state);
        match feature {
            Some(c) => c.map(f64::from),
            None => {
                if v < -0.62 || u.abs() > 1.9 {
                    HAIR.map(f64::from)
                } else if in_ellipse(u, v, 0.0, 0.05, 0.08, 0.13) {
                    SKIN.map(|c| c * 0.86)
                } else {
                    SKIN
                }
            }
        }
    }

    /// Lambertian shading of the albedo with a head-fixed light.
    pub fn shade(&self, hit: &SurfaceHit, state: &FaceState, lit: bool) -> Rgb {
        let a = self.albedo(&hit.point, state);
        let k = if lit {
            let l = Vec3::from(self.light).normalize();
            0.35 + 0.65 * hit.normal.dot(&l).max(0.0)
        } else {
            1.0
        };
        a.map(|c| (c * k).round().clamp(1.0, 255.0) as u8)
    }

    /// 68 head-anchored keypoints (chart coordinates): jaw 17, brows 10, nose 9,
    /// eyes 12, mouth 20.
    pub fn landmarks(&self) -> Vec<(f64, f64)> {
        let mut pts = Vec::with_capacity(68);
        for i in 0..17 {
            let a = -1.2 + 2.4 * i as f64 / 16.0;
            pts.push((a, 0.15 + 0.45 * (1.0 - (a / 1.2).powi(2)).sqrt()));
        }
        for side in [-1.0, 1.0] {
            for i in 0..5 {
                pts.push((
                    side * (0.2 + 0.08 * i as f64),
                    -0.42 - 0.03 * (2.0 - (i as f64 - 2.0).abs()),
                ));
            }
        }
        for i in 0..4 {
            pts.push((0.0, -0.15 + 0.07 * i as f64));
        }
        for i in 0..5 {
            pts.push((-0.1 + 0.05 * i as f64, 0.17));
        }
        for side in [-1.0, 1.0] {
            let (cu, cv) = (side * 0.38, -0.22);
            for i in 0..6 {
                let t = std::f64::consts::TAU * i as f64 / 6.0;
                pts.push((cu + 0.15 * t.cos(), cv + 0.07 * t.sin()));
            }
        }
        let (mu, mv) = self.mouth_center();
        for i in 0..12 {
            let t = std::f64::consts::TAU * i as f64 / 12.0;
            pts.push((mu + 0.28 * t.cos(), mv + 0.07 * t.sin()));
        }
        for i in 0..8 {
            let t = std::f64::consts::TAU * i as f64 / 8.0;
            pts.push((mu + 0.2 * t.cos(), mv + 0.03 * t.sin()));
        }
        pts
    }
}

fn in_ellipse(u: f64, v: f64, cu: f64, cv: f64, ru: f64, rv: f64) -> bool {
    let du = (u - cu) / ru;
    let dv = (v - cv) / rv;
    du * du + dv * dv <= 1.0
}

fn paint_features(u: f64, v: f64, s: &FaceState) -> Option<Rgb> {
    // mouth
    let (mu, mv) = (0.0, 0.42);
    let inner_rv = 0.14 * s.mouth_open;
    if inner_rv > 0.004 && in_ellipse(u, v, mu, mv, 0.21, inner_rv) {
        return Some(if v < mv - 0.55 * inner_rv {
            TEETH
        } else {
            MOUTH_INSIDE
        });
    }
    if in_ellipse(u, v, mu, mv, 0.28, 0.05 + 0.16 * s.mouth_open) {
        return Some(LIPS);
    }
    // eyes: index 0 is the subject's right (image left in the frontal view)
    for (side, blink) in [(-1.0, s.blink_right), (1.0, s.blink_left)] {
        let (cu, cv) = (side * 0.38, -0.22);
        let open = 0.09 * (1.0 - blink);
        if open > 0.004 && in_ellipse(u, v, cu, cv, 0.16, open) {
            let (iu, iv) = (cu + 0.07 * s.gaze[0], cv + 0.035 * s.gaze[1]);
            let d2 = (u - iu).powi(2) + (v - iv).powi(2);
            return Some(if d2 < 0.025f64.powi(2) {
                PUPIL
            } else if d2 < 0.058f64.powi(2) {
                IRIS
            } else {
                SCLERA
            });
        }
        // closed lid line
        if blink > 0.5 && in_ellipse(u, v, cu, cv, 0.16, 0.012) {
            return Some(BROW);
        }
        let (bu, bv) = (side * 0.38, -0.42 - 0.1 * s.brow_raise);
        if (u - bu).abs() < 0.2 && (v - bv).abs() < 0.035 {
            return Some(BROW);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_inverts_surface_point() {
        let h = HeadModel::default();
        for (u, v) in [(0.0, 0.0), (0.4, -0.3), (-1.0, 0.6)] {
            let (u2, v2) = h.chart(&h.surface_point(u, v));
            assert!((u - u2).abs() < 1e-12 && (v - v2).abs() < 1e-12);
        }
    }

    #[test]
    fn sixty_eight_landmarks() {
        assert_eq!(HeadModel::default().landmarks().len(), 68);
    }

    #[test]
    fn frame_rotates_about_pivot() {
        let h = HeadModel::default();
        let rest = Vec3::new(0.0, 0.0, 4.0);
        let f = h.frame(&RigidPose::new(0.3, 0.1, 0.0, [0.0; 3]), &rest);
        let pivot_world = f.to_world(&Vec3::from(h.pivot));
        assert!((pivot_world - (rest + Vec3::from(h.pivot))).norm() < 1e-12);
    }

    #[test]
    fn clamping_bounds_all_scalars() {
        let s = FaceState {
            mouth_open: 1.5,
            blink_left: -0.2,
            gaze: [3.0, -3.0],
            ..FaceState::default()
        }
        .clamped();
        assert_eq!(s.mouth_open, 1.0);
        assert_eq!(s.blink_left, 0.0);
        assert_eq!(s.gaze, [1.0, -1.0]);
    }
}
