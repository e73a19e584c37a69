//! Synthetic dynamic, view-dependent scenes with known ground truth.
//!
//! Each hidden Gaussian follows a linear generative model: `t ~ N(μ_t, σ_t²)`,
//! `d ~ N(μ_d, σ_d² I)` and `p = μ_p + v (t − μ_t) + W (d − μ_d) + ε` with
//! `ε ~ N(0, S)`. Its joint covariance therefore has `Σ_pt = σ_t² v` and
//! `Σ_pd = σ_d² W`, so conditioning on time makes the blob drift with
//! velocity `v`, and the directional window makes it brightest when seen
//! along `μ_d`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::camera::CameraFrame;
use crate::error::{Error, Result};
use crate::gaussian::{logit, Gaussian7D, Matrix7};
use crate::image::Image;
use crate::render::{render, RenderSettings};
use crate::shading::C0;

use super::checkpoint::{save_checkpoint, Checkpoint};
use super::image_io::write_s7df;
use super::manifest::{save_manifest, FrameRecord, SceneDataset, Split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub num_gaussians: usize,
    pub num_frames: usize,
    pub width: usize,
    pub height: usize,
    /// Every `test_every`-th frame (the last of each group) is held out;
    /// 0 keeps all frames for training.
    pub test_every: usize,
    pub orbit_radius: f64,
    pub elevation_deg: f64,
    /// Total azimuth swept by the camera from first to last frame.
    pub orbit_degrees: f64,
    pub fov_deg: f64,
    /// Radius of the ball that holds the Gaussian centers.
    pub scene_radius: f64,
    /// Upper bound on `|v|`; speeds are drawn from `[0.5, 1] × drift_speed`.
    pub drift_speed: f64,
    /// Standard deviation of the entries of `W`.
    pub view_shift: f64,
    pub temporal_scale: f64,
    pub directional_scale: f64,
    /// Range of the standard deviations of `S`.
    pub spatial_scale: [f64; 2],
    pub opacity: [f64; 2],
    pub lambda_t: f64,
    pub lambda_d: f64,
    pub background: [f64; 3],
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            num_gaussians: 100,
            num_frames: 30,
            width: 64,
            height: 64,
            test_every: 10,
            orbit_radius: 3.5,
            elevation_deg: 20.0,
            orbit_degrees: 120.0,
            fov_deg: 50.0,
            scene_radius: 0.8,
            drift_speed: 0.4,
            view_shift: 0.05,
            temporal_scale: 0.25,
            directional_scale: 0.6,
            spatial_scale: [0.06, 0.16],
            opacity: [0.6, 0.95],
            lambda_t: 0.5,
            lambda_d: 0.5,
            background: [0.0; 3],
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_gaussians", self.num_gaussians as f64),
            ("num_frames", self.num_frames as f64),
            ("width", self.width as f64),
            ("height", self.height as f64),
            ("orbit_radius", self.orbit_radius),
            ("temporal_scale", self.temporal_scale),
            ("directional_scale", self.directional_scale),
            ("spatial_scale", self.spatial_scale[0]),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.spatial_scale[1] < self.spatial_scale[0] {
            return Err(Error::config("spatial_scale", "range must be ascending"));
        }
        if !(self.opacity[0] > 0.0 && self.opacity[1] < 1.0 && self.opacity[0] <= self.opacity[1]) {
            return Err(Error::config("opacity", "must be an ascending range inside (0, 1)"));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::config("fov_deg", "must lie in (0, 180)"));
        }
        if !(self.elevation_deg.abs() < 89.0) {
            return Err(Error::config("elevation_deg", "must lie in (-89, 89)"));
        }
        if !(self.scene_radius >= 0.0) || self.scene_radius + 4.0 * self.spatial_scale[1] >= self.orbit_radius {
            return Err(Error::config("scene_radius", "scene must fit well inside the orbit"));
        }
        for (name, v) in [("drift_speed", self.drift_speed), ("view_shift", self.view_shift), ("lambda_t", self.lambda_t), ("lambda_d", self.lambda_d)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        if self.test_every == 1 {
            return Err(Error::config("test_every", "would leave no training frames"));
        }
        Ok(())
    }

    pub fn render_settings(&self) -> RenderSettings {
        let mut s = RenderSettings { background: self.background, ..RenderSettings::default() };
        s.slice.lambda_t = self.lambda_t;
        s.slice.lambda_d = self.lambda_d;
        s
    }

    pub fn frame_time(&self, i: usize) -> f64 {
        if self.num_frames <= 1 {
            0.0
        } else {
            i as f64 / (self.num_frames - 1) as f64
        }
    }

    pub fn split(&self, i: usize) -> Split {
        if self.test_every > 1 && i % self.test_every == self.test_every - 1 {
            Split::Test
        } else {
            Split::Train
        }
    }

    fn orbit_center(&self, azimuth_deg: f64) -> Vector3<f64> {
        let (a, e) = (azimuth_deg.to_radians(), self.elevation_deg.to_radians());
        self.orbit_radius * Vector3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin())
    }

    /// Camera of frame `i`: on the orbit, looking at the origin, `+z` up.
    pub fn camera(&self, i: usize) -> CameraFrame {
        let t = self.frame_time(i);
        let eye = self.orbit_center(self.orbit_degrees * t);
        CameraFrame::look_at(eye, Vector3::zeros(), Vector3::z(), self.fov_deg, self.width, self.height, t)
    }
}

/// Ground truth produced by [`generate_synthetic`].
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub cloud: Vec<Gaussian7D>,
    pub settings: RenderSettings,
    pub cameras: Vec<CameraFrame>,
    pub images: Vec<Image>,
    pub splits: Vec<Split>,
}

fn normal3<R: Rng>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal))
}

fn random_rotation<R: Rng>(rng: &mut R) -> Matrix3<f64> {
    let q = Quaternion::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

fn hidden_gaussian<R: Rng>(spec: &GeneratorSpec, rng: &mut R) -> Result<Gaussian7D> {
    let mu_p = loop {
        let p = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if p.norm_squared() <= 1.0 {
            break p * spec.scene_radius;
        }
    };
    let mu_t = rng.random_range(0.0..=1.0);
    // Preferred direction: roughly the viewing ray from a random point of the sweep.
    let eye = spec.orbit_center(spec.orbit_degrees * rng.random_range(0.0..=1.0));
    let mu_d = ((mu_p - eye).normalize() + 0.3 * normal3(rng)).normalize();

    let speed = spec.drift_speed * rng.random_range(0.5..=1.0);
    let v = normal3(rng).normalize() * speed;
    let w = Matrix3::from_fn(|_, _| spec.view_shift * rng.sample::<f64, _>(StandardNormal));
    let rot = random_rotation(rng);
    let scales = Vector3::from_fn(|_, _| rng.random_range(spec.spatial_scale[0]..=spec.spatial_scale[1]));
    let s = rot * Matrix3::from_diagonal(&scales.map(|x| x * x)) * rot.transpose();

    let (st2, sd2) = (spec.temporal_scale.powi(2), spec.directional_scale.powi(2));
    let mut sigma = Matrix7::zeros();
    sigma.fixed_view_mut::<3, 3>(0, 0).copy_from(&(s + st2 * v * v.transpose() + sd2 * w * w.transpose()));
    sigma.fixed_view_mut::<3, 1>(0, 3).copy_from(&(st2 * v));
    sigma.fixed_view_mut::<1, 3>(3, 0).copy_from(&(st2 * v.transpose()));
    sigma.fixed_view_mut::<3, 3>(0, 4).copy_from(&(sd2 * w));
    sigma.fixed_view_mut::<3, 3>(4, 0).copy_from(&(sd2 * w.transpose()));
    sigma[(3, 3)] = st2;
    sigma.fixed_view_mut::<3, 3>(4, 4).copy_from(&(sd2 * Matrix3::identity()));

    let mut g = Gaussian7D { mu_p: mu_p.into(), mu_t, mu_d: mu_d.into(), ..Gaussian7D::default() };
    g.set_covariance(&sigma)?;
    g.opacity_logit = logit(rng.random_range(spec.opacity[0]..=spec.opacity[1]));
    for c in 0..3 {
        g.sh[c] = (rng.random_range(0.25..1.0) - 0.5) / C0;
        for k in 1..4 {
            g.sh[3 * k + c] = rng.random_range(-0.2..0.2);
        }
    }
    Ok(g)
}

/// Builds the hidden cloud and renders every frame with the `f64` path.
/// A pure function of `(spec, seed)`.
pub fn generate_synthetic(spec: &GeneratorSpec, seed: u64) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cloud = (0..spec.num_gaussians).map(|_| hidden_gaussian(spec, &mut rng)).collect::<Result<Vec<_>>>()?;
    let settings = spec.render_settings();
    let cameras: Vec<CameraFrame> = (0..spec.num_frames).map(|i| spec.camera(i)).collect();
    let images = cameras
        .iter()
        .map(|cam| render::<f64>(&cloud, None, cam, &settings).map(|fb| Image::from_frame(&fb)))
        .collect::<Result<Vec<_>>>()?;
    let splits = (0..spec.num_frames).map(|i| spec.split(i)).collect();
    Ok(SyntheticScene { cloud, settings, cameras, images, splits })
}

pub const MANIFEST_NAME: &str = "manifest.toml";
pub const HIDDEN_NAME: &str = "hidden.s7dc";

impl SyntheticScene {
    /// Writes `frames/NNNN.s7df`, `manifest.toml` and the hidden cloud as
    /// `hidden.s7dc` under `out_dir`.
    pub fn write(&self, out_dir: &Path) -> Result<SceneDataset> {
        let frames_dir = out_dir.join("frames");
        fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
        let mut frames = Vec::with_capacity(self.cameras.len());
        for (i, (cam, img)) in self.cameras.iter().zip(&self.images).enumerate() {
            let rel = PathBuf::from("frames").join(format!("{i:04}.s7df"));
            write_s7df(&out_dir.join(&rel), img)?;
            frames.push(FrameRecord { camera: cam.clone(), time: cam.time, image: rel, split: self.splits[i] });
        }
        let first = &self.cameras[0];
        let ds = SceneDataset { root: out_dir.to_path_buf(), width: first.width, height: first.height, time_span: (0.0, 1.0), frames };
        save_manifest(&out_dir.join(MANIFEST_NAME), &ds)?;
        let hidden = Checkpoint { iteration: 0, settings: self.settings.clone(), cloud: self.cloud.clone(), nets: None };
        save_checkpoint(&out_dir.join(HIDDEN_NAME), &hidden)?;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::partition;

    fn tiny() -> GeneratorSpec {
        GeneratorSpec { num_gaussians: 12, num_frames: 5, width: 24, height: 20, test_every: 5, ..GeneratorSpec::default() }
    }

    fn centroid(img: &Image) -> [f64; 2] {
        let (mut sx, mut sy, mut s) = (0.0, 0.0, 0.0);
        for y in 0..img.height {
            for x in 0..img.width {
                let v: f64 = img.pixel(x, y).iter().map(|c| *c as f64).sum();
                sx += v * x as f64;
                sy += v * y as f64;
                s += v;
            }
        }
        [sx / s, sy / s]
    }

    #[test]
    fn hidden_cloud_is_coupled() {
        let scene = generate_synthetic(&tiny(), 3).unwrap();
        for g in &scene.cloud {
            let b = partition(&crate::assemble_covariance(g).unwrap());
            assert!(b.sigma_pt.norm() > 1e-3);
            assert!(b.sigma_pd.norm() > 1e-4);
        }
        assert!(scene.images.iter().all(|img| img.data.iter().any(|v| *v > 0.05)));
    }

    #[test]
    fn static_isotropic_gaussian_gives_identical_frames() {
        let spec = GeneratorSpec {
            num_gaussians: 1,
            num_frames: 6,
            width: 16,
            height: 16,
            test_every: 0,
            orbit_degrees: 0.0,
            drift_speed: 0.0,
            view_shift: 0.0,
            spatial_scale: [0.2, 0.2],
            lambda_t: 0.0,
            ..GeneratorSpec::default()
        };
        let scene = generate_synthetic(&spec, 1).unwrap();
        assert!(scene.images[0].data.iter().any(|v| *v > 0.0));
        for img in &scene.images[1..] {
            assert_eq!(img, &scene.images[0]);
        }
    }

    #[test]
    fn temporal_drift_moves_the_centroid_monotonically() {
        let spec = GeneratorSpec {
            num_gaussians: 1,
            num_frames: 9,
            width: 48,
            height: 48,
            test_every: 0,
            orbit_degrees: 0.0,
            scene_radius: 0.0,
            drift_speed: 1.0,
            view_shift: 0.0,
            lambda_t: 0.0,
            ..GeneratorSpec::default()
        };
        let scene = generate_synthetic(&spec, 11).unwrap();
        let cs: Vec<[f64; 2]> = scene.images.iter().map(centroid).collect();
        let (first, last) = (cs[0], cs[cs.len() - 1]);
        let axis = [last[0] - first[0], last[1] - first[1]];
        assert!(axis[0].hypot(axis[1]) > 2.0, "drift too small on screen: {axis:?}");
        let along: Vec<f64> = cs.iter().map(|c| c[0] * axis[0] + c[1] * axis[1]).collect();
        assert!(along.windows(2).all(|w| w[1] > w[0]), "{cs:?}");
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate_synthetic(&tiny(), 9).unwrap();
        let b = generate_synthetic(&tiny(), 9).unwrap();
        assert_eq!(a.cloud, b.cloud);
        assert_eq!(a.images, b.images);
        let c = generate_synthetic(&tiny(), 10).unwrap();
        assert_ne!(a.cloud, c.cloud);
    }

    #[test]
    fn split_is_nine_to_one_by_default() {
        let spec = GeneratorSpec::default();
        let test = (0..spec.num_frames).filter(|i| spec.split(*i) == Split::Test).count();
        assert_eq!(test * 10, spec.num_frames);
    }

    #[test]
    fn written_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let scene = generate_synthetic(&tiny(), 4).unwrap();
        let ds = scene.write(dir.path()).unwrap();
        let loaded = super::super::load_dataset(&dir.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(loaded, ds);
        assert_eq!(loaded.load_image(2).unwrap(), scene.images[2]);
        assert_eq!(loaded.indices(Split::Test), vec![4]);
        let hidden = super::super::load_checkpoint(&dir.path().join(HIDDEN_NAME)).unwrap();
        assert_eq!(hidden.cloud, scene.cloud);
        let again = dir.path().join("again");
        scene.write(&again).unwrap();
        assert_eq!(fs::read(again.join(MANIFEST_NAME)).unwrap(), fs::read(dir.path().join(MANIFEST_NAME)).unwrap());
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let spec = GeneratorSpec { num_frames: 0, ..GeneratorSpec::default() };
        assert!(matches!(generate_synthetic(&spec, 0), Err(Error::Config { .. })));
    }
}
