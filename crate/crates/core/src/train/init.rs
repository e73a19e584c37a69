use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::camera::CameraFrame;
use crate::gaussian::{logit, Gaussian7D};
use crate::shading::{ShadingMode, C0};

use super::config::InitConfig;

/// Where the cameras look and how large the scene is.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneBounds {
    /// Least-squares intersection of the optical axes.
    pub focus: Vector3<f64>,
    /// 1.1 × the largest distance of a camera center from their mean.
    pub extent: f64,
    pub bbox: [[f64; 3]; 2],
}

fn forward(cam: &CameraFrame) -> Vector3<f64> {
    cam.rotation.row(2).transpose()
}

pub fn scene_bounds(cameras: &[CameraFrame]) -> SceneBounds {
    let n = cameras.len().max(1) as f64;
    let centers: Vec<Vector3<f64>> = cameras.iter().map(|c| c.center()).collect();
    let mean = centers.iter().sum::<Vector3<f64>>() / n;
    let spread = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);

    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for (cam, c) in cameras.iter().zip(&centers) {
        let f = forward(cam);
        let proj = Matrix3::identity() - f * f.transpose();
        a += proj;
        b += proj * c;
    }
    let well_posed = a.symmetric_eigen().eigenvalues.min() > 1e-3 * n;
    let focus = match a.try_inverse() {
        Some(inv) if well_posed => inv * b,
        _ => {
            let f = cameras.iter().map(forward).sum::<Vector3<f64>>() / n;
            mean + f * (1.1 * spread).max(1.0)
        }
    };
    let extent = if spread > 1e-9 { 1.1 * spread } else { 1.1 * (focus - mean).norm() };

    let mut half = f64::INFINITY;
    for (cam, c) in cameras.iter().zip(&centers) {
        let dist = (focus - c).norm();
        half = half.min(0.75 * dist * (cam.cx / cam.fx).min(cam.cy / cam.fy));
    }
    if !half.is_finite() {
        half = extent;
    }
    let bbox = [[focus.x - half, focus.y - half, focus.z - half], [focus.x + half, focus.y + half, focus.z + half]];
    SceneBounds { focus, extent, bbox }
}

/// `√(mean squared distance to the 3 nearest neighbours)` per point.
pub fn nearest_neighbour_scales(points: &[Vector3<f64>]) -> Vec<f64> {
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = [f64::INFINITY; 3];
            for (j, q) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = (p - q).norm_squared();
                if d < best[2] {
                    best[2] = d;
                    best.sort_by(f64::total_cmp);
                }
            }
            let found: Vec<f64> = best.into_iter().filter(|d| d.is_finite()).collect();
            if found.is_empty() {
                return 1.0;
            }
            (found.iter().sum::<f64>() / found.len() as f64).sqrt().max(1e-7)
        })
        .collect()
}

fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Random initial cloud: positions uniform in the box, `μ_t` uniform in
/// `[0, 1]`, `μ_d` uniform on the sphere, a diagonal factor and a random color.
pub fn random_cloud<R: Rng>(cfg: &InitConfig, bbox: &[[f64; 3]; 2], shading: &ShadingMode, rng: &mut R) -> Vec<Gaussian7D> {
    let [lo, hi] = *bbox;
    let mut cloud = Vec::with_capacity(cfg.count);
    for _ in 0..cfg.count {
        let mu_p = [0, 1, 2].map(|k| if hi[k] > lo[k] { rng.random_range(lo[k]..hi[k]) } else { lo[k] });
        let mu_t = rng.random_range(0.0..=1.0);
        let mu_d: [f64; 3] = random_unit(rng).into();
        let color = [0, 1, 2].map(|_| rng.random_range(0.2..0.8));
        let mut g = Gaussian7D::isotropic(mu_p, mu_t, mu_d, 1.0, cfg.temporal_scale, cfg.directional_scale);
        g.opacity_logit = logit(cfg.opacity);
        match shading {
            ShadingMode::Static => {
                for c in 0..3 {
                    g.sh[c] = (color[c] - 0.5) / C0;
                }
            }
            ShadingMode::Fourier(f) => {
                g.sh_fourier = vec![0.0; f.weights_len()];
                for c in 0..3 {
                    g.sh_fourier[c * f.terms] = logit(color[c]) / C0;
                }
            }
        }
        cloud.push(g);
    }
    let points: Vec<Vector3<f64>> = cloud.iter().map(|g| Vector3::from(g.mu_p)).collect();
    for (g, s) in cloud.iter_mut().zip(nearest_neighbour_scales(&points)) {
        for k in 0..3 {
            g.chol_logdiag[k] = s.ln();
        }
    }
    cloud
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shading::FourierShConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orbit_focus_is_the_look_at_target() {
        let target = Vector3::new(0.3, -0.2, 0.1);
        let cams: Vec<CameraFrame> = (0..8)
            .map(|i| {
                let a = i as f64 * 0.3;
                let eye = target + Vector3::new(3.0 * a.cos(), 3.0 * a.sin(), 1.0);
                CameraFrame::look_at(eye, target, Vector3::z(), 50.0, 32, 32, 0.0)
            })
            .collect();
        let b = scene_bounds(&cams);
        assert!((b.focus - target).norm() < 1e-9);
        assert!(b.extent > 0.0);
        for k in 0..3 {
            assert!(b.bbox[0][k] < target[k] && b.bbox[1][k] > target[k]);
        }
    }

    #[test]
    fn single_camera_has_positive_extent() {
        let cam = CameraFrame::look_at(Vector3::new(0.0, -2.0, 0.0), Vector3::zeros(), Vector3::z(), 50.0, 16, 16, 0.0);
        let b = scene_bounds(&[cam]);
        assert!(b.extent > 0.5 && b.focus.y > -2.0);
    }

    #[test]
    fn nearest_neighbours_on_a_line() {
        let pts: Vec<Vector3<f64>> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let s = nearest_neighbour_scales(&pts);
        // point 0: neighbours at 1, 2, 3
        assert!((s[0] - ((1.0 + 4.0 + 9.0) / 3.0f64).sqrt()).abs() < 1e-12);
        // point 2: neighbours at 1, 1, 2
        assert!((s[2] - ((1.0 + 1.0 + 4.0) / 3.0f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn random_cloud_respects_the_box_and_shading() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = InitConfig { count: 50, ..InitConfig::default() };
        let bbox = [[-1.0, 0.0, 2.0], [1.0, 0.5, 3.0]];
        let cloud = random_cloud(&cfg, &bbox, &ShadingMode::Static, &mut rng);
        assert_eq!(cloud.len(), 50);
        for g in &cloud {
            for k in 0..3 {
                assert!(g.mu_p[k] >= bbox[0][k] && g.mu_p[k] <= bbox[1][k]);
            }
            assert!((0.0..=1.0).contains(&g.mu_t));
            assert!((Vector3::from(g.mu_d).norm() - 1.0).abs() < 1e-12);
            assert!((g.opacity() - 0.1).abs() < 1e-12);
            assert!(g.sh_fourier.is_empty());
        }
        let fourier = ShadingMode::Fourier(FourierShConfig { terms: 3, period: 1.0 });
        let cloud = random_cloud(&cfg, &bbox, &fourier, &mut rng);
        assert!(cloud.iter().all(|g| g.sh_fourier.len() == 144));
    }
}
