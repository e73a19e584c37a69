//! Pinhole projection of a conditional 3D Gaussian with the first-order
//! (EWA) covariance transform.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::{Real, Splat2D, ALPHA_MIN};
use crate::camera::CameraFrame;
use crate::error::{Error, Result};
use crate::slice::Sliced3D;

/// Low-pass dilation added to the screen-space covariance diagonal (px²).
pub const DILATION: f64 = 0.3;

/// Everything the backward pass needs from a projection.
#[derive(Clone, Debug)]
pub(crate) struct Projection {
    pub p_cam: Vector3<f64>,
    pub jacobian: Matrix2x3<f64>,
    pub sigma: Matrix3<f64>,
    pub mean: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub conic: Matrix2<f64>,
}

pub(crate) fn project(sliced: &Sliced3D, cam: &CameraFrame) -> Result<Projection> {
    let p_cam = cam.world_to_camera(&sliced.mu_cond);
    let (x, y, z) = (p_cam[0], p_cam[1], p_cam[2]);
    if !(z > cam.near) {
        return Err(Error::CulledBehindCamera);
    }
    let jacobian = Matrix2x3::new(cam.fx / z, 0.0, -cam.fx * x / (z * z), 0.0, cam.fy / z, -cam.fy * y / (z * z));
    let t = jacobian * cam.rotation;
    let cov = t * sliced.sigma_cond * t.transpose();
    let cov2d = (cov + cov.transpose()) * 0.5 + Matrix2::identity() * DILATION;
    let det = cov2d.determinant();
    if !(det > 0.0) {
        return Err(Error::contract("projected covariance is not positive definite"));
    }
    let conic = Matrix2::new(cov2d[(1, 1)], -cov2d[(0, 1)], -cov2d[(1, 0)], cov2d[(0, 0)]) / det;
    let mean = Vector2::new(cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy);
    Ok(Projection { p_cam, jacobian, sigma: sliced.sigma_cond, mean, cov2d, conic })
}

impl Projection {
    /// Pixel rectangle `[x0, x1) × [y0, y1)` that contains every pixel center
    /// where `alpha · exp(-½ Δᵀ Q Δ) ≥ 1/255`. Empty when none can.
    pub fn footprint(&self, alpha: f64, width: usize, height: usize) -> [usize; 4] {
        let empty = [0, 0, 0, 0];
        if !(alpha >= ALPHA_MIN) {
            return empty;
        }
        let (a, b, c) = (self.cov2d[(0, 0)], self.cov2d[(0, 1)], self.cov2d[(1, 1)]);
        let mid = 0.5 * (a + c);
        let lambda_max = mid + (mid * mid - (a * c - b * b)).max(0.1).sqrt();
        let reach = (2.0 * (alpha / ALPHA_MIN).ln().max(0.0) * lambda_max).sqrt();
        // one pixel of slack absorbs single-precision evaluation at the edge
        let x0 = (self.mean[0] - reach - 0.5).floor() - 1.0;
        let x1 = (self.mean[0] + reach - 0.5).ceil() + 2.0;
        let y0 = (self.mean[1] - reach - 0.5).floor() - 1.0;
        let y1 = (self.mean[1] + reach - 0.5).ceil() + 2.0;
        let clampx = |v: f64| v.max(0.0).min(width as f64) as usize;
        let clampy = |v: f64| v.max(0.0).min(height as f64) as usize;
        let rect = [clampx(x0), clampy(y0), clampx(x1), clampy(y1)];
        if rect[0] >= rect[2] || rect[1] >= rect[3] {
            empty
        } else {
            rect
        }
    }

    pub fn to_splat<F: Real>(&self, sliced: &Sliced3D, rgb: [f64; 3], source: usize, rect: [usize; 4]) -> Splat2D<F> {
        Splat2D {
            mean: [F::of(self.mean[0]), F::of(self.mean[1])],
            conic: [F::of(self.conic[(0, 0)]), F::of(self.conic[(0, 1)]), F::of(self.conic[(1, 1)])],
            cov2d: [self.cov2d[(0, 0)], self.cov2d[(0, 1)], self.cov2d[(1, 1)]],
            depth: self.p_cam[2],
            alpha: F::of(sliced.alpha_cond),
            rgb: rgb.map(F::of),
            source,
            rect,
        }
    }

    /// Backpropagates screen-space gradients (mean, conic entries `a, b, c`
    /// of `a dx² + 2b dx dy + c dy²`) to the world-space conditional mean and
    /// covariance.
    pub fn backward(
        &self,
        cam: &CameraFrame,
        grad_mean: &Vector2<f64>,
        grad_conic: &[f64; 3],
    ) -> (Vector3<f64>, Matrix3<f64>) {
        let q = &self.conic;
        let gq = Matrix2::new(grad_conic[0], 0.5 * grad_conic[1], 0.5 * grad_conic[1], grad_conic[2]);
        let gcov = -(q * gq * q);
        let t = self.jacobian * cam.rotation;
        let grad_sigma = t.transpose() * gcov * t;
        let grad_t = (gcov + gcov.transpose()) * t * self.sigma;
        let gj = grad_t * cam.rotation.transpose();

        let (x, y, z) = (self.p_cam[0], self.p_cam[1], self.p_cam[2]);
        let (fx, fy) = (cam.fx, cam.fy);
        let (z2, z3) = (z * z, z * z * z);
        let gx = grad_mean[0] * fx / z - gj[(0, 2)] * fx / z2;
        let gy = grad_mean[1] * fy / z - gj[(1, 2)] * fy / z2;
        let gz = -grad_mean[0] * fx * x / z2 - grad_mean[1] * fy * y / z2 - gj[(0, 0)] * fx / z2
            + gj[(0, 2)] * 2.0 * fx * x / z3
            - gj[(1, 1)] * fy / z2
            + gj[(1, 2)] * 2.0 * fy * y / z3;
        let grad_mu = cam.rotation.transpose() * Vector3::new(gx, gy, gz);
        (grad_mu, grad_sigma)
    }
}

/// Projects a conditional Gaussian to a screen-space splat. Color is left
/// black and the source index zero; the pipeline fills both in.
pub fn project_gaussian<F: Real>(sliced: &Sliced3D, cam: &CameraFrame) -> Result<Splat2D<F>> {
    let proj = project(sliced, cam)?;
    let rect = proj.footprint(sliced.alpha_cond, cam.width, cam.height);
    Ok(proj.to_splat(sliced, [0.0; 3], 0, rect))
}
