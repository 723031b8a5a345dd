use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Half extents of the box head translations must stay within (scene units).
pub const SCENE_HALF_EXTENT: [f64; 3] = [0.6, 0.6, 0.6];

/// Rigid transform given as yaw/pitch/roll Euler angles (radians) and a translation.
///
/// Rotation is `R = Ry(yaw) * Rx(pitch) * Rz(roll)` in a camera-style frame
/// (x right, y down, z forward).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

impl RigidPose {
    pub const IDENTITY: RigidPose = RigidPose {
        rotation: [0.0; 3],
        translation: [0.0; 3],
    };

    pub fn new(yaw: f64, pitch: f64, roll: f64, translation: [f64; 3]) -> Self {
        Self {
            rotation: [yaw, pitch, roll],
            translation,
        }
    }

    pub fn yaw(&self) -> f64 {
        self.rotation[0]
    }

    pub fn pitch(&self) -> f64 {
        self.rotation[1]
    }

    pub fn roll(&self) -> f64 {
        self.rotation[2]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), self.yaw());
        let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), self.pitch());
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), self.roll());
        (ry * rx * rz).into_inner()
    }

    pub fn translation_vector(&self) -> Vec3 {
        Vec3::from(self.translation)
    }

    /// Maps a point from the local frame into the parent frame.
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix() * p + self.translation_vector()
    }

    /// Maps a point from the parent frame into the local frame.
    pub fn apply_inverse(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix().transpose() * (p - self.translation_vector())
    }

    /// Orientation whose +z axis points along `direction` (no roll).
    pub fn look_along(position: Vec3, direction: Vec3) -> Self {
        let d = direction.normalize();
        let pitch = (-d.y).clamp(-1.0, 1.0).asin();
        let yaw = d.x.atan2(d.z);
        Self {
            rotation: [yaw, pitch, 0.0],
            translation: position.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .rotation
            .iter()
            .any(|a| !a.is_finite() || a.abs() > FRAC_PI_2)
        {
            return Err(Error::InvalidData(format!(
                "rotation {:?} exceeds +-pi/2",
                self.rotation
            )));
        }
        if self
            .translation
            .iter()
            .zip(SCENE_HALF_EXTENT)
            .any(|(t, e)| !t.is_finite() || t.abs() > e)
        {
            return Err(Error::InvalidData(format!(
                "translation {:?} outside scene box",
                self.translation
            )));
        }
        Ok(())
    }
}

/// Ray-ellipsoid intersection for an axis-aligned ellipsoid centered at the origin.
/// Returns the nearest positive ray parameter.
pub fn intersect_ellipsoid(origin: &Vec3, dir: &Vec3, radii: &Vec3) -> Option<f64> {
    let o = origin.component_div(radii);
    let d = dir.component_div(radii);
    let a = d.dot(&d);
    let b = 2.0 * o.dot(&d);
    let c = o.dot(&o) - 1.0;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = (-b - sq) / (2.0 * a);
    let t1 = (-b + sq) / (2.0 * a);
    if t0 > 1e-9 {
        Some(t0)
    } else if t1 > 1e-9 {
        Some(t1)
    } else {
        None
    }
}
