use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera with a normalized timestamp.
///
/// Camera space follows the usual vision convention: `+x` right, `+y` down,
/// `+z` forward. `rotation`/`translation` map world points into camera space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraFrame {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major world-to-camera rotation.
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// Normalized time in `[0, 1]`.
    pub time: f64,
    pub near: f64,
    pub far: f64,
}

impl CameraFrame {
    /// Camera at `eye` looking at `target`, with `up` roughly the world up
    /// direction. Focal length from the horizontal field of view in degrees.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fov_x_deg: f64,
        width: usize,
        height: usize,
        time: f64,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        let fx = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Self {
            fx,
            fy: fx,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
            rotation,
            translation,
            time,
            near: 0.01,
            far: 100.0,
        }
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Pixel coordinates of a world point (no clipping).
    pub fn project_point(&self, p: &Vector3<f64>) -> [f64; 2] {
        let c = self.world_to_camera(p);
        [self.fx * c[0] / c[2] + self.cx, self.fy * c[1] / c[2] + self.cy]
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if (r * r.transpose() - Matrix3::identity()).abs().max() > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::contract("camera rotation must be orthonormal with det +1"));
        }
        if !(self.near > 0.0) || !(self.far > self.near) {
            return Err(Error::contract("camera clip range needs 0 < near < far"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::contract("camera image size must be non-zero"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::contract("focal lengths must be positive"));
        }
        Ok(())
    }
}
