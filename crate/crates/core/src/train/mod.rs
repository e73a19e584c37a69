//! Fitting a cloud (and optionally the refinement networks) to posed,
//! timestamped images with Adam and adaptive density control.

mod config;
mod densify;
mod init;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::CameraFrame;
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian7D, PARAM_GROUPS};
use crate::image::Image;
use crate::io::{Checkpoint, SceneDataset, Split};
use crate::loss::photometric_loss;
use crate::metrics::psnr_from_mse;
use crate::optim::Adam;
use crate::refine::MlpRefiner;
use crate::render::{backward_from_tape, render_taped, RenderSettings, SceneGradients};

pub use config::{DensifyConfig, InitConfig, LearningRates, TrainConfig};
pub use densify::{densify_and_prune, temporal_split_children, wants_temporal_split, DensifyReport, SPLIT_SCALE_DIVISOR};
pub use init::{nearest_neighbour_scales, random_cloud, scene_bounds, SceneBounds};

/// Everything that evolves during a fit.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub cloud: Vec<Gaussian7D>,
    pub nets: Option<MlpRefiner>,
    /// Render settings; `slice.lambda_t` and `slice.lambda_d` are the current λ.
    pub settings: RenderSettings,
    pub m: Vec<Gaussian7D>,
    pub v: Vec<Gaussian7D>,
    pub net_m: Option<MlpRefiner>,
    pub net_v: Option<MlpRefiner>,
    pub lambda_m: [f64; 2],
    pub lambda_v: [f64; 2],
    /// Sum of view-space gradient norms since the last density pass.
    pub grad_accum: Vec<f64>,
    pub grad_count: Vec<u32>,
    pub iteration: u64,
    pub extent: f64,
    pub rng: ChaCha8Rng,
    order: Vec<usize>,
}

/// One metrics line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: u64,
    /// Mean training loss since the previous record.
    pub loss: f64,
    /// Mean training-view PSNR since the previous record.
    pub psnr: f64,
    pub num_points: usize,
    pub wall_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub mse: f64,
}

impl TrainState {
    pub fn from_cloud(cloud: Vec<Gaussian7D>, nets: Option<MlpRefiner>, settings: RenderSettings, extent: f64, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Gaussian7D> = cloud.iter().map(|g| g.zeros_like()).collect();
        let n = cloud.len();
        Self {
            net_m: nets.as_ref().map(|n| n.zeros_like()),
            net_v: nets.as_ref().map(|n| n.zeros_like()),
            cloud,
            nets,
            settings,
            m: zeros.clone(),
            v: zeros,
            lambda_m: [0.0; 2],
            lambda_v: [0.0; 2],
            grad_accum: vec![0.0; n],
            grad_count: vec![0; n],
            iteration: 0,
            extent,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7d65_6e73_6974_7931),
            order: Vec::new(),
        }
    }

    /// Random initial state for the given cameras.
    pub fn initialize(cameras: &[CameraFrame], cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if cameras.is_empty() {
            return Err(Error::contract("at least one camera is required"));
        }
        let bounds = scene_bounds(cameras);
        let bbox = cfg.init.bbox.unwrap_or(bounds.bbox);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let cloud = random_cloud(&cfg.init, &bbox, &cfg.render.shading, &mut rng);
        let nets = cfg.agr.then(|| MlpRefiner::init(cfg.num_frequencies, &mut rng));
        let mut st = Self::from_cloud(cloud, nets, cfg.render.clone(), bounds.extent, cfg);
        st.rng = rng;
        Ok(st)
    }

    /// Resumes from a checkpoint with fresh optimizer moments.
    pub fn from_checkpoint(ck: Checkpoint, cameras: &[CameraFrame], cfg: &TrainConfig) -> Self {
        let extent = scene_bounds(cameras).extent;
        let mut st = Self::from_cloud(ck.cloud, ck.nets, ck.settings, extent, cfg);
        st.iteration = ck.iteration;
        st
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { iteration: self.iteration, settings: self.settings.clone(), cloud: self.cloud.clone(), nets: self.nets.clone() }
    }

    pub fn reset_accumulators(&mut self) {
        self.grad_accum = vec![0.0; self.cloud.len()];
        self.grad_count = vec![0; self.cloud.len()];
    }

    /// Next training frame: a fresh random permutation of the train indices
    /// each epoch.
    fn next_frame(&mut self, train: &[usize]) -> usize {
        if self.order.is_empty() {
            self.order = train.to_vec();
            self.order.shuffle(&mut self.rng);
            self.order.reverse();
        }
        self.order.pop().expect("non-empty train set")
    }
}

/// A posed target image.
pub struct TrainView<'a> {
    pub camera: &'a CameraFrame,
    pub target: &'a [f64],
}

/// Renders and differentiates one view; returns the loss, MSE and gradients.
fn view_gradients(state: &TrainState, view: &TrainView, cfg: &TrainConfig) -> Result<(StepStats, SceneGradients)> {
    let cam = view.camera;
    let (frame, tape) = render_taped::<f64>(&state.cloud, state.nets.as_ref(), cam, &state.settings)?;
    let (loss, grad) = photometric_loss(&frame.color, view.target, cam.width, cam.height, cfg.ssim_weight)?;
    let mse = frame.color.iter().zip(view.target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / frame.color.len() as f64;
    let grads = backward_from_tape(&tape, &state.cloud, state.nets.as_ref(), &grad)?;
    Ok((StepStats { loss, mse }, grads))
}

/// One optimization step over `views` (a batch; gradients are averaged).
///
/// Parameter groups use their configured rates. λ and the networks stay
/// untouched, moments included, until their trainable-after iterations.
pub fn step(state: &mut TrainState, views: &[TrainView], cfg: &TrainConfig) -> Result<StepStats> {
    if views.is_empty() {
        return Err(Error::contract("a step needs at least one view"));
    }
    state.iteration += 1;
    let it = state.iteration;
    let scale = 1.0 / views.len() as f64;
    let mut total: Option<SceneGradients> = None;
    let mut stats = StepStats { loss: 0.0, mse: 0.0 };
    let track = it <= cfg.densify_until();
    for view in views {
        let (s, g) = view_gradients(state, view, cfg)?;
        stats.loss += s.loss * scale;
        stats.mse += s.mse * scale;
        if track {
            for (i, vis) in g.visible.iter().enumerate() {
                if *vis {
                    state.grad_accum[i] += g.screen_grad[i];
                    state.grad_count[i] += 1;
                }
            }
        }
        match total.as_mut() {
            None => total = Some(g),
            Some(t) => {
                for (a, b) in t.gaussians.iter_mut().zip(&g.gaussians) {
                    a.accumulate(b);
                }
                if let (Some(a), Some(b)) = (t.nets.as_mut(), g.nets.as_ref()) {
                    a.accumulate(b);
                }
                t.lambda_t += g.lambda_t;
                t.lambda_d += g.lambda_d;
            }
        }
    }
    let mut grads = total.expect("at least one view");
    if views.len() > 1 {
        for g in &mut grads.gaussians {
            for slot in g.groups_mut() {
                slot.iter_mut().for_each(|v| *v *= scale);
            }
        }
        if let Some(n) = grads.nets.as_mut() {
            for h in n.heads_mut() {
                h.params.iter_mut().for_each(|v| *v *= scale);
            }
        }
        grads.lambda_t *= scale;
        grads.lambda_d *= scale;
    }

    let adam = Adam::default();
    let rates = PARAM_GROUPS.map(|g| cfg.lr.group(g) * if g == crate::gaussian::ParamGroup::Position { state.extent } else { 1.0 });
    for (((g, gm), gv), gg) in state.cloud.iter_mut().zip(&mut state.m).zip(&mut state.v).zip(&grads.gaussians) {
        let grad_groups = gg.groups();
        for (j, (((p, m), v), lr)) in g.groups_mut().into_iter().zip(gm.groups_mut()).zip(gv.groups_mut()).zip(rates).enumerate() {
            adam.update(p, grad_groups[j], m, v, lr, it);
        }
    }
    if it > cfg.nets_trainable_after {
        if let (Some(nets), Some(gn), Some(nm), Some(nv)) = (state.nets.as_mut(), grads.nets.as_ref(), state.net_m.as_mut(), state.net_v.as_mut()) {
            let local = it - cfg.nets_trainable_after;
            for (((h, g), m), v) in nets.heads_mut().into_iter().zip(gn.heads()).zip(nm.heads_mut()).zip(nv.heads_mut()) {
                adam.update(&mut h.params, &g.params, &mut m.params, &mut v.params, cfg.lr.nets, local);
            }
        }
    }
    if it > cfg.lambda_trainable_after {
        let local = it - cfg.lambda_trainable_after;
        let slice = &mut state.settings.slice;
        let mut lambda = [slice.lambda_t, slice.lambda_d];
        let (m, v) = (&mut state.lambda_m, &mut state.lambda_v);
        adam.update(&mut lambda, &[grads.lambda_t, grads.lambda_d], m, v, cfg.lr.lambda, local);
        slice.lambda_t = lambda[0].max(0.0);
        slice.lambda_d = lambda[1].max(0.0);
    }
    Ok(stats)
}

/// Result of [`fit`].
pub struct FitOutput {
    pub state: TrainState,
    pub log: Vec<LogRecord>,
}

/// Loads the training images of a dataset as `f64` buffers.
pub fn load_train_views(dataset: &SceneDataset) -> Result<Vec<(usize, Vec<f64>)>> {
    dataset.indices(Split::Train).into_iter().map(|i| Ok((i, dataset.load_image(i)?.to_f64()))).collect()
}

/// Runs the full schedule from a random initialization. `on_record` sees
/// each metrics record as it is produced.
pub fn fit(dataset: &SceneDataset, cfg: &TrainConfig, on_record: impl FnMut(&LogRecord)) -> Result<FitOutput> {
    let cameras: Vec<CameraFrame> = dataset.frames.iter().map(|f| f.camera.clone()).collect();
    let state = TrainState::initialize(&cameras, cfg)?;
    fit_from(state, dataset, cfg, on_record)
}

/// Continues optimizing `state` until `cfg.iterations`.
pub fn fit_from(mut state: TrainState, dataset: &SceneDataset, cfg: &TrainConfig, mut on_record: impl FnMut(&LogRecord)) -> Result<FitOutput> {
    cfg.validate()?;
    let views = load_train_views(dataset)?;
    if views.is_empty() {
        return Err(Error::contract("dataset has no training frames"));
    }
    let train: Vec<usize> = (0..views.len()).collect();
    let start = Instant::now();
    let mut log = Vec::new();
    let (mut loss_sum, mut psnr_sum, mut n) = (0.0, 0.0, 0u64);
    let until = cfg.densify_until();
    while state.iteration < cfg.iterations {
        let batch: Vec<usize> = (0..cfg.batch_size).map(|_| state.next_frame(&train)).collect();
        let targets: Vec<TrainView> = batch
            .iter()
            .map(|k| TrainView { camera: &dataset.frames[views[*k].0].camera, target: &views[*k].1 })
            .collect();
        let s = step(&mut state, &targets, cfg)?;
        loss_sum += s.loss;
        psnr_sum += psnr_from_mse(s.mse);
        n += 1;
        let it = state.iteration;
        if it >= cfg.densify.from && it <= until && it.is_multiple_of(cfg.densify.interval) {
            let slice_cfg = state.settings.slice;
            densify_and_prune(&mut state, &cfg.densify, &slice_cfg)?;
        }
        if it.is_multiple_of(cfg.log_interval) || it == cfg.iterations {
            let rec = LogRecord {
                iteration: it,
                loss: loss_sum / n as f64,
                psnr: psnr_sum / n as f64,
                num_points: state.cloud.len(),
                wall_ms: start.elapsed().as_millis() as u64,
            };
            on_record(&rec);
            log.push(rec);
            (loss_sum, psnr_sum, n) = (0.0, 0.0, 0);
        }
    }
    Ok(FitOutput { state, log })
}

/// PSNR and SSIM of a rendered frame against a reference image.
pub fn evaluate_view(state_cloud: &[Gaussian7D], nets: Option<&MlpRefiner>, settings: &RenderSettings, cam: &CameraFrame, target: &Image) -> Result<(f64, f64)> {
    let frame = crate::render::render::<f64>(state_cloud, nets, cam, settings)?;
    let pred = Image::from_frame(&frame);
    Ok((crate::metrics::psnr(&pred, target)?, crate::metrics::ssim(&pred, target)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synthetic::{generate_synthetic, GeneratorSpec};

    fn one_frame_scene() -> (Vec<CameraFrame>, Vec<Vec<f64>>) {
        let spec = GeneratorSpec { num_gaussians: 6, num_frames: 1, width: 24, height: 24, test_every: 0, ..GeneratorSpec::default() };
        let scene = generate_synthetic(&spec, 5).unwrap();
        (scene.cameras, scene.images.iter().map(|i| i.to_f64()).collect())
    }

    fn small_cfg() -> TrainConfig {
        let mut cfg = TrainConfig { iterations: 200, ..TrainConfig::default() };
        cfg.init.count = 10;
        cfg.densify.from = 10_000;
        cfg
    }

    #[test]
    fn zero_gradient_step_changes_nothing() {
        let (cams, _) = one_frame_scene();
        let cfg = small_cfg();
        let mut st = TrainState::initialize(&cams, &cfg).unwrap();
        // every Gaussian falls below the visibility threshold, so nothing
        // receives a gradient even though the loss is not zero
        for g in &mut st.cloud {
            g.opacity_logit = -20.0;
        }
        let target = vec![0.5; 24 * 24 * 3];
        let before = st.cloud.clone();
        let nets_before = st.nets.clone();
        step(&mut st, &[TrainView { camera: &cams[0], target: &target }], &cfg).unwrap();
        assert_eq!(st.cloud, before);
        assert_eq!(st.nets, nets_before);
        assert!(st.m.iter().all(|m| m.to_flat().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn frozen_parameters_stay_bit_identical() {
        let (cams, targets) = one_frame_scene();
        let mut cfg = small_cfg();
        cfg.nets_trainable_after = 5;
        cfg.lambda_trainable_after = 7;
        let mut st = TrainState::initialize(&cams, &cfg).unwrap();
        let nets0 = st.nets.clone().unwrap();
        let lambda0 = st.settings.slice;
        let view = [TrainView { camera: &cams[0], target: &targets[0] }];
        for _ in 0..5 {
            step(&mut st, &view, &cfg).unwrap();
        }
        assert_eq!(st.nets.as_ref().unwrap(), &nets0);
        step(&mut st, &view, &cfg).unwrap();
        assert_ne!(st.nets.as_ref().unwrap(), &nets0);
        step(&mut st, &view, &cfg).unwrap();
        assert_eq!(st.settings.slice, lambda0);
        step(&mut st, &view, &cfg).unwrap();
        assert_ne!(st.settings.slice, lambda0);
    }

    #[test]
    fn loss_decreases_over_every_window() {
        let (cams, targets) = one_frame_scene();
        let cfg = small_cfg();
        let mut st = TrainState::initialize(&cams, &cfg).unwrap();
        let view = [TrainView { camera: &cams[0], target: &targets[0] }];
        let losses: Vec<f64> = (0..200).map(|_| step(&mut st, &view, &cfg).unwrap().loss).collect();
        for i in 0..losses.len() - 50 {
            let (a, b) = (losses[i], losses[i + 50]);
            assert!(b < a || (a < 1e-4 && b <= a + 1e-12), "window at {i}: {a} -> {b}");
        }
        assert!(losses[199] < 0.5 * losses[0]);
    }

    #[test]
    fn zero_iteration_fit_returns_initialization() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GeneratorSpec { num_gaussians: 4, num_frames: 3, width: 16, height: 16, test_every: 3, ..GeneratorSpec::default() };
        let ds = generate_synthetic(&spec, 2).unwrap().write(dir.path()).unwrap();
        let cfg = TrainConfig { iterations: 0, init: InitConfig { count: 20, ..InitConfig::default() }, ..TrainConfig::default() };
        let out = fit(&ds, &cfg, |_| {}).unwrap();
        let cams: Vec<CameraFrame> = ds.frames.iter().map(|f| f.camera.clone()).collect();
        let init = TrainState::initialize(&cams, &cfg).unwrap();
        assert_eq!(out.state.checkpoint(), init.checkpoint());
        assert!(out.log.is_empty());
    }

    #[test]
    fn fit_is_deterministic_and_logs() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GeneratorSpec { num_gaussians: 5, num_frames: 4, width: 16, height: 16, test_every: 4, ..GeneratorSpec::default() };
        let ds = generate_synthetic(&spec, 3).unwrap().write(dir.path()).unwrap();
        let mut cfg = TrainConfig { iterations: 30, log_interval: 10, ..TrainConfig::default() };
        cfg.init.count = 30;
        cfg.densify = DensifyConfig { from: 10, interval: 10, until: Some(20), ..DensifyConfig::default() };
        cfg.nets_trainable_after = 10;
        let a = fit(&ds, &cfg, |_| {}).unwrap();
        let b = fit(&ds, &cfg, |_| {}).unwrap();
        assert_eq!(crate::io::checkpoint::encode(&a.state.checkpoint()), crate::io::checkpoint::encode(&b.state.checkpoint()));
        assert_eq!(a.log.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![10, 20, 30]);
        assert_eq!(a.state.m.len(), a.state.cloud.len());
    }
}
