//! Browser demo: a small synthetic 7D Gaussian scene rendered on the CPU.
//!
//! The page in `www/` drives three operations: render a frame at a time and
//! orbit angle, change the modulation sharpnesses, and sample one Gaussian's
//! temporal and directional modulation.

use nalgebra::Vector3;
use splat7d::io::synthetic::{generate_synthetic, GeneratorSpec};
use splat7d::io::image_io::linear_to_srgb;
use splat7d::slice::modulation;
use splat7d::{render, CameraFrame, Gaussian7D, RenderSettings};
use wasm_bindgen::prelude::*;

fn msg(e: splat7d::Error) -> String {
    e.to_string()
}

#[wasm_bindgen]
pub struct Viewer {
    cloud: Vec<Gaussian7D>,
    settings: RenderSettings,
    orbit_radius: f64,
}

impl Viewer {
    pub fn build(count: usize, seed: u64) -> Result<Viewer, String> {
        let spec = GeneratorSpec { num_gaussians: count, num_frames: 1, width: 8, height: 8, ..GeneratorSpec::default() };
        let scene = generate_synthetic(&spec, seed).map_err(msg)?;
        Ok(Viewer { cloud: scene.cloud, settings: scene.settings, orbit_radius: spec.orbit_radius })
    }

    pub fn sharpness(&mut self, lambda_t: f64, lambda_d: f64) -> Result<(), String> {
        if !(lambda_t >= 0.0 && lambda_d >= 0.0) {
            return Err("sharpness must be non-negative".into());
        }
        self.settings.slice.lambda_t = lambda_t;
        self.settings.slice.lambda_d = lambda_d;
        Ok(())
    }

    /// RGBA bytes for a `width × height` canvas, camera on an orbit around
    /// the origin (angles in degrees, z up).
    pub fn rgba(&self, time: f64, azimuth: f64, elevation: f64, width: usize, height: usize) -> Result<Vec<u8>, String> {
        let (az, el) = (azimuth.to_radians(), elevation.to_radians());
        let eye = self.orbit_radius * Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
        let cam = CameraFrame::look_at(eye, Vector3::zeros(), Vector3::z(), 50.0, width, height, time);
        cam.validate().map_err(msg)?;
        let fb = render::<f32>(&self.cloud, None, &cam, &self.settings).map_err(msg)?;
        let mut out = Vec::with_capacity(width * height * 4);
        for px in fb.color.chunks_exact(3) {
            for &c in px {
                out.push((linear_to_srgb(c.clamp(0.0, 1.0)) * 255.0).round() as u8);
            }
            out.push(255);
        }
        Ok(out)
    }

    /// `samples` rows of `(t, f_temp, f_dir, alpha)` over `t ∈ [0, 1]` for
    /// Gaussian `index` seen from the equator of the orbit at `azimuth`.
    pub fn curve(&self, index: usize, azimuth: f64, samples: usize) -> Result<Vec<f64>, String> {
        let g = self.cloud.get(index).ok_or_else(|| format!("no Gaussian {index}"))?;
        let az = azimuth.to_radians();
        let eye = self.orbit_radius * Vector3::new(az.cos(), az.sin(), 0.0);
        let d = (Vector3::from(g.mu_p) - eye).normalize();
        let mut out = Vec::with_capacity(samples * 4);
        for i in 0..samples {
            let t = if samples > 1 { i as f64 / (samples - 1) as f64 } else { g.mu_t };
            let m = modulation(g, t, &d, &self.settings.slice).map_err(msg)?;
            out.extend([t, m.f_temp, m.f_dir, m.alpha_cond]);
        }
        Ok(out)
    }
}

#[wasm_bindgen]
impl Viewer {
    /// A hidden scene from the synthetic generator with `count` Gaussians.
    #[wasm_bindgen(constructor)]
    pub fn new(count: usize, seed: u64) -> Result<Viewer, JsError> {
        Viewer::build(count, seed).map_err(|e| JsError::new(&e))
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    #[wasm_bindgen(js_name = setSharpness)]
    pub fn set_sharpness(&mut self, lambda_t: f64, lambda_d: f64) -> Result<(), JsError> {
        self.sharpness(lambda_t, lambda_d).map_err(|e| JsError::new(&e))
    }

    pub fn render(&self, time: f64, azimuth: f64, elevation: f64, width: usize, height: usize) -> Result<Vec<u8>, JsError> {
        self.rgba(time, azimuth, elevation, width, height).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = modulationCurve)]
    pub fn modulation_curve(&self, index: usize, azimuth: f64, samples: usize) -> Result<Vec<f64>, JsError> {
        self.curve(index, azimuth, samples).map_err(|e| JsError::new(&e))
    }
}
