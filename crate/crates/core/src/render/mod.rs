//! Differentiable tile-based splatting.
//!
//! Per-Gaussian work (refinement, slicing, projection, shading) always runs
//! in `f64`. Compositing is generic over [`Real`]: `f32` for production and
//! `f64` as the reference path.

mod project;
mod raster;

use std::fmt::Debug;
use std::hash::{Hash, Hasher};

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraFrame;
use crate::error::{Error, Result};
use crate::gaussian::{covariance_backward, Gaussian7D, NUM_OFFDIAG};
use crate::refine::{refine_backward, refine_taped, MlpRefiner, RefineTape};
use crate::shading::{shade, shade_backward, ShadeTape, ShadingMode};
use crate::slice::{slice_backward, slice_taped, SliceConfig, SliceTape};

pub use project::{project_gaussian, DILATION};
use project::Projection;
use raster::{rasterize, rasterize_backward, TileBins};

/// Splats fainter than this at a pixel are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const ALPHA_MAX: f64 = 0.99;
/// Compositing stops once transmittance would fall below this.
pub const T_MIN: f64 = 1e-4;

/// Gaussians handled per parallel work item. Fixed so that results do not
/// depend on the worker count.
const CHUNK: usize = 64;

/// Scalar type of the compositing stage.
pub trait Real: num_traits::Float + Send + Sync + Debug + Default + 'static {
    fn of(v: f64) -> Self;
    fn to64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn to64(self) -> f64 {
        self
    }
}

/// A projected Gaussian ready for compositing.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D<F> {
    pub mean: [F; 2],
    /// Inverse 2D covariance as `(a, b, c)` of `[[a, b], [b, c]]`.
    pub conic: [F; 3],
    pub cov2d: [f64; 3],
    pub depth: f64,
    pub alpha: F,
    pub rgb: [F; 3],
    pub source: usize,
    /// Pixel rectangle `[x0, y0, x1, y1)` outside which the splat is below
    /// [`ALPHA_MIN`] everywhere.
    pub rect: [usize; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    pub slice: SliceConfig,
    pub shading: ShadingMode,
    pub background: [f64; 3],
    pub tile_size: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self { slice: SliceConfig::default(), shading: ShadingMode::Static, background: [0.0; 3], tile_size: 16 }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        self.slice.validate()?;
        if let ShadingMode::Fourier(cfg) = &self.shading {
            cfg.validate()?;
        }
        if self.tile_size == 0 {
            return Err(Error::config("tile_size", "must be positive"));
        }
        if self.background.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("background", "must be finite"));
        }
        Ok(())
    }
}

/// Rendered frame. `color` is row-major RGB.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBuffer<F> {
    pub width: usize,
    pub height: usize,
    pub color: Vec<F>,
    pub transmittance: Vec<F>,
    pub count: Vec<u32>,
}

impl<F: Real> FrameBuffer<F> {
    pub fn pixel(&self, x: usize, y: usize) -> [F; 3] {
        let i = 3 * (y * self.width + x);
        [self.color[i], self.color[i + 1], self.color[i + 2]]
    }

    pub fn color_f64(&self) -> Vec<f64> {
        self.color.iter().map(|v| v.to64()).collect()
    }
}

/// Everything the backward pass needs about one visible Gaussian.
struct GaussianTape {
    refine: Option<(Gaussian7D, RefineTape)>,
    slice: SliceTape,
    proj: Projection,
    shade: ShadeTape,
    /// Unit view direction and the distance it was normalized by.
    dir: Vector3<f64>,
    dist: f64,
}

struct Prepared<F> {
    splat: Splat2D<F>,
    tape: Option<GaussianTape>,
}

fn prepare_one<F: Real>(
    g: &Gaussian7D,
    source: usize,
    nets: Option<&MlpRefiner>,
    cam: &CameraFrame,
    settings: &RenderSettings,
    keep_tape: bool,
) -> Result<Option<Prepared<F>>> {
    let offset = Vector3::from(g.mu_p) - cam.center();
    let dist = offset.norm();
    if !(dist > 0.0) {
        return Ok(None);
    }
    let dir = offset / dist;
    let t = cam.time;

    let refined = match nets {
        Some(nets) => Some(refine_taped(g, t, nets)?),
        None => None,
    };
    let rg = refined.as_ref().map_or(g, |(r, _)| r);
    let (sliced, slice_tape) = match slice_taped(rg, t, &dir, &settings.slice) {
        Ok(v) => v,
        Err(Error::SingularConditioningBlock) => return Ok(None),
        Err(e) => return Err(e),
    };
    if !(sliced.alpha_cond >= ALPHA_MIN) {
        return Ok(None);
    }
    let proj = match project::project(&sliced, cam) {
        Ok(p) => p,
        Err(Error::CulledBehindCamera) => return Ok(None),
        Err(e) => return Err(e),
    };
    if proj.p_cam[2] > cam.far {
        return Ok(None);
    }
    let rect = proj.footprint(sliced.alpha_cond, cam.width, cam.height);
    if rect[0] >= rect[2] {
        return Ok(None);
    }
    let (rgb, shade_tape) = shade(rg, &settings.shading, &dir, t);
    let splat = proj.to_splat(&sliced, rgb, source, rect);
    let tape = keep_tape.then(|| GaussianTape {
        refine: refined,
        slice: slice_tape,
        proj,
        shade: shade_tape,
        dir,
        dist,
    });
    Ok(Some(Prepared { splat, tape }))
}

fn check_inputs(cloud: &[Gaussian7D], nets: Option<&MlpRefiner>, cam: &CameraFrame, settings: &RenderSettings) -> Result<()> {
    if cloud.is_empty() {
        return Err(Error::EmptyScene);
    }
    settings.validate()?;
    cam.validate()?;
    if let Some(n) = nets {
        n.validate()?;
    }
    let fourier = settings.shading.fourier_len();
    if let Some(i) = cloud.iter().position(|g| g.sh_fourier.len() != fourier) {
        return Err(Error::contract(format!("gaussian {i} has the wrong number of fourier weights")));
    }
    Ok(())
}

fn prepare_all<F: Real>(
    cloud: &[Gaussian7D],
    nets: Option<&MlpRefiner>,
    cam: &CameraFrame,
    settings: &RenderSettings,
    keep_tape: bool,
) -> Result<Vec<Prepared<F>>> {
    check_inputs(cloud, nets, cam, settings)?;
    let chunks: Vec<Result<Vec<Prepared<F>>>> = cloud
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut out = Vec::new();
            for (k, g) in chunk.iter().enumerate() {
                if let Some(p) = prepare_one(g, c * CHUNK + k, nets, cam, settings, keep_tape)? {
                    out.push(p);
                }
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::with_capacity(cloud.len());
    for chunk in chunks {
        all.extend(chunk?);
    }
    // front to back, ties broken by input index
    all.sort_by(|a, b| a.splat.depth.total_cmp(&b.splat.depth).then(a.splat.source.cmp(&b.splat.source)));
    Ok(all)
}

/// Visible splats of a cloud in compositing order.
pub fn prepare_splats<F: Real>(
    cloud: &[Gaussian7D],
    nets: Option<&MlpRefiner>,
    cam: &CameraFrame,
    settings: &RenderSettings,
) -> Result<Vec<Splat2D<F>>> {
    Ok(prepare_all::<F>(cloud, nets, cam, settings, false)?.into_iter().map(|p| p.splat).collect())
}

/// Renders one frame. `nets` is `None` when refinement is disabled.
pub fn render<F: Real>(
    cloud: &[Gaussian7D],
    nets: Option<&MlpRefiner>,
    cam: &CameraFrame,
    settings: &RenderSettings,
) -> Result<FrameBuffer<F>> {
    let splats = prepare_splats::<F>(cloud, nets, cam, settings)?;
    Ok(composite(&splats, cam, settings).0)
}

fn composite<F: Real>(splats: &[Splat2D<F>], cam: &CameraFrame, settings: &RenderSettings) -> (FrameBuffer<F>, TileBins) {
    let bins = TileBins::build(splats, cam.width, cam.height, settings.tile_size);
    let background = settings.background.map(F::of);
    let (color, transmittance, count) = rasterize(splats, &bins, cam.width, cam.height, background);
    (FrameBuffer { width: cam.width, height: cam.height, color, transmittance, count }, bins)
}

/// Forward state kept for [`backward_from_tape`].
pub struct RenderTape<F> {
    splats: Vec<Splat2D<F>>,
    tapes: Vec<GaussianTape>,
    bins: TileBins,
    cam: CameraFrame,
    settings: RenderSettings,
    num_gaussians: usize,
    has_nets: bool,
    fingerprint: u64,
}

fn fingerprint(cloud: &[Gaussian7D]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for g in cloud {
        for v in g.mu_p.iter().chain([&g.mu_t, &g.opacity_logit]).chain(g.chol_logdiag.iter()) {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

pub fn render_taped<F: Real>(
    cloud: &[Gaussian7D],
    nets: Option<&MlpRefiner>,
    cam: &CameraFrame,
    settings: &RenderSettings,
) -> Result<(FrameBuffer<F>, RenderTape<F>)> {
    let prepared = prepare_all::<F>(cloud, nets, cam, settings, true)?;
    let mut splats = Vec::with_capacity(prepared.len());
    let mut tapes = Vec::with_capacity(prepared.len());
    for p in prepared {
        splats.push(p.splat);
        tapes.push(p.tape.expect("tape requested"));
    }
    let (frame, bins) = composite(&splats, cam, settings);
    let tape = RenderTape {
        splats,
        tapes,
        bins,
        cam: cam.clone(),
        settings: settings.clone(),
        num_gaussians: cloud.len(),
        has_nets: nets.is_some(),
        fingerprint: fingerprint(cloud),
    };
    Ok((frame, tape))
}

/// Gradients of a scalar loss with respect to everything a frame depends on.
#[derive(Clone, Debug)]
pub struct SceneGradients {
    pub gaussians: Vec<Gaussian7D>,
    pub nets: Option<MlpRefiner>,
    pub lambda_t: f64,
    pub lambda_d: f64,
    /// Norm of the gradient on each splat's 2D mean in normalized device
    /// coordinates, zero for Gaussians that were not drawn.
    pub screen_grad: Vec<f64>,
    pub visible: Vec<bool>,
}

struct ChunkGrad {
    entries: Vec<(usize, Gaussian7D, f64)>,
    nets: Option<MlpRefiner>,
    lambda_t: f64,
    lambda_d: f64,
}

/// Reverse pass given `dL/dcolor` (row-major RGB, same size as the frame).
pub fn backward_from_tape<F: Real>(
    tape: &RenderTape<F>,
    cloud: &[Gaussian7D],
    nets: Option<&MlpRefiner>,
    grad_color: &[F],
) -> Result<SceneGradients> {
    let (w, h) = (tape.cam.width, tape.cam.height);
    if grad_color.len() != w * h * 3 {
        return Err(Error::contract("image gradient does not match the frame size"));
    }
    if cloud.len() != tape.num_gaussians || nets.is_some() != tape.has_nets || fingerprint(cloud) != tape.fingerprint {
        return Err(Error::contract("backward inputs differ from the forward pass"));
    }
    let bg = tape.settings.background.map(F::of);
    let splat_grads = rasterize_backward(&tape.splats, &tape.bins, w, h, bg, grad_color);
    let cfg = &tape.settings.slice;
    let cam = &tape.cam;
    let ndc = [0.5 * w as f64, 0.5 * h as f64];

    let indices: Vec<usize> = (0..tape.splats.len()).collect();
    let chunks: Vec<ChunkGrad> = indices
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = ChunkGrad {
                entries: Vec::with_capacity(chunk.len()),
                nets: nets.map(|n| n.zeros_like()),
                lambda_t: 0.0,
                lambda_d: 0.0,
            };
            for &k in chunk {
                let sg = &splat_grads[k];
                let gt = &tape.tapes[k];
                let source = tape.splats[k].source;
                let g = &cloud[source];
                let rg = gt.refine.as_ref().map_or(g, |(r, _)| r);

                let mut grad = rg.zeros_like();
                let grad_dir_shade = shade_backward(&tape.settings.shading, &gt.shade, &gt.dir, &sg.rgb, &mut grad);
                let grad_mean = Vector2::new(sg.mean[0], sg.mean[1]);
                let (grad_mu, grad_sigma) = gt.proj.backward(cam, &grad_mean, &sg.conic);
                let sl = slice_backward(&gt.slice, cfg, &grad_mu, &grad_sigma, sg.alpha);
                for i in 0..3 {
                    grad.mu_p[i] += sl.mu_p[i];
                    grad.mu_d[i] += sl.mu_d[i];
                }
                grad.mu_t += sl.mu_t;
                grad.opacity_logit += sl.opacity_logit;
                let chol = covariance_backward(rg, &sl.sigma);
                for (dst, src) in grad.chol_offdiag.iter_mut().zip(&chol[..NUM_OFFDIAG]) {
                    *dst += src;
                }
                for (dst, src) in grad.chol_logdiag.iter_mut().zip(&chol[NUM_OFFDIAG..]) {
                    *dst += src;
                }
                acc.lambda_t += sl.lambda_t;
                acc.lambda_d += sl.lambda_d;

                let mut grad = match (&gt.refine, nets, acc.nets.as_mut()) {
                    (Some((_, rtape)), Some(n), Some(gn)) => refine_backward(rtape, n, &grad, gn),
                    _ => grad,
                };
                // d = (μ_p − c) / |μ_p − c| uses the unrefined position
                let gd = sl.direction + grad_dir_shade;
                let go = (gd - gt.dir * gt.dir.dot(&gd)) / gt.dist;
                for i in 0..3 {
                    grad.mu_p[i] += go[i];
                }
                let screen = (sg.mean[0] * ndc[0]).hypot(sg.mean[1] * ndc[1]);
                acc.entries.push((source, grad, screen));
            }
            acc
        })
        .collect();

    let mut out = SceneGradients {
        gaussians: cloud.iter().map(|g| g.zeros_like()).collect(),
        nets: nets.map(|n| n.zeros_like()),
        lambda_t: 0.0,
        lambda_d: 0.0,
        screen_grad: vec![0.0; cloud.len()],
        visible: vec![false; cloud.len()],
    };
    for chunk in chunks {
        for (source, grad, screen) in chunk.entries {
            out.gaussians[source] = grad;
            out.screen_grad[source] = screen;
            out.visible[source] = true;
        }
        if let (Some(dst), Some(src)) = (out.nets.as_mut(), chunk.nets.as_ref()) {
            dst.accumulate(src);
        }
        out.lambda_t += chunk.lambda_t;
        out.lambda_d += chunk.lambda_d;
    }
    Ok(out)
}

/// Forward and reverse pass in one call.
pub fn render_backward<F: Real>(
    cloud: &[Gaussian7D],
    nets: Option<&MlpRefiner>,
    cam: &CameraFrame,
    settings: &RenderSettings,
    grad_color: &[F],
) -> Result<SceneGradients> {
    let (_, tape) = render_taped::<F>(cloud, nets, cam, settings)?;
    backward_from_tape(&tape, cloud, nets, grad_color)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::logit;
    use crate::shading::C0;

    fn camera(size: usize) -> CameraFrame {
        CameraFrame::look_at(
            Vector3::new(0.0, -3.0, 0.0),
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, 1.0),
            45.0,
            size,
            size,
            0.5,
        )
    }

    fn blob(p: [f64; 3], scale: f64, opacity: f64, rgb: [f64; 3]) -> Gaussian7D {
        let mut g = Gaussian7D::isotropic(p, 0.5, [0.0, 1.0, 0.0], scale, 0.3, 1.0);
        g.opacity_logit = logit(opacity);
        for c in 0..3 {
            g.sh[c] = (rgb[c] - 0.5) / C0;
        }
        g
    }

    fn settings() -> RenderSettings {
        let mut s = RenderSettings::default();
        s.slice.lambda_t = 0.0;
        s.slice.lambda_d = 0.0;
        s
    }

    #[test]
    fn single_splat_center_and_corner() {
        let cam = camera(32);
        let cloud = vec![blob([0.0; 3], 0.3, 0.999, [1.0; 3])];
        let fb: FrameBuffer<f32> = render(&cloud, None, &cam, &settings()).unwrap();
        let c = fb.pixel(16, 16);
        assert!(c.iter().all(|v| *v > 0.95), "{c:?}");
        assert!(fb.pixel(0, 0).iter().all(|v| *v < 0.01));
    }

    #[test]
    fn opaque_front_hides_back() {
        let cam = camera(32);
        let cloud = vec![blob([0.0, 1.0, 0.0], 0.3, 0.2, [1.0, 0.0, 0.0]), blob([0.0; 3], 0.5, 0.999, [0.0, 0.0, 1.0])];
        let fb: FrameBuffer<f64> = render(&cloud, None, &cam, &settings()).unwrap();
        let solo: FrameBuffer<f64> = render(&cloud[1..], None, &cam, &settings()).unwrap();
        let (a, b) = (fb.pixel(16, 16), solo.pixel(16, 16));
        assert!((a[0] - b[0]).abs() < 0.01);
    }

    #[test]
    fn empty_scene_is_an_error() {
        assert!(matches!(render::<f32>(&[], None, &camera(8), &settings()), Err(Error::EmptyScene)));
    }

    #[test]
    fn everything_culled_gives_background() {
        let mut s = settings();
        s.background = [0.2, 0.4, 0.6];
        let cloud = vec![blob([0.0, -10.0, 0.0], 0.3, 0.9, [1.0; 3])];
        let fb: FrameBuffer<f64> = render(&cloud, None, &camera(8), &s).unwrap();
        assert!(fb.color.chunks(3).all(|c| c == [0.2, 0.4, 0.6]));
        assert!(fb.transmittance.iter().all(|t| *t == 1.0));
    }

    #[test]
    fn zero_image_gradient_gives_zero_gradients() {
        let cam = camera(8);
        let cloud = vec![blob([0.0; 3], 0.3, 0.7, [0.3, 0.6, 0.9])];
        let grads = render_backward::<f64>(&cloud, None, &cam, &settings(), &vec![0.0; 8 * 8 * 3]).unwrap();
        assert!(grads.gaussians[0].to_flat().iter().all(|v| *v == 0.0));
        assert_eq!(grads.lambda_t, 0.0);
    }

    #[test]
    fn mismatched_backward_inputs_are_rejected() {
        let cam = camera(8);
        let cloud = vec![blob([0.0; 3], 0.3, 0.7, [0.3, 0.6, 0.9])];
        let (_, tape) = render_taped::<f64>(&cloud, None, &cam, &settings()).unwrap();
        let mut other = cloud.clone();
        other[0].mu_p[0] += 0.1;
        let g = vec![1.0; 8 * 8 * 3];
        assert!(matches!(backward_from_tape(&tape, &other, None, &g), Err(Error::ContractViolation(_))));
        assert!(matches!(backward_from_tape(&tape, &cloud, None, &g[1..]), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn clamped_alpha_blocks_opacity_gradient() {
        let cam = camera(8);
        let cloud = vec![blob([0.0; 3], 20.0, 0.9999, [0.3, 0.6, 0.9])];
        let grads = render_backward::<f64>(&cloud, None, &cam, &settings(), &vec![1.0; 8 * 8 * 3]).unwrap();
        assert_eq!(grads.gaussians[0].opacity_logit, 0.0);
    }
}
