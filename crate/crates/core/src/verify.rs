//! Self-contained numerical checks: each compares a production code path
//! against an independent reference (a second algebraic route, a sampler, a
//! brute-force compositor or finite differences).

use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::camera::CameraFrame;
use crate::decompose::extract_scale_rotation;
use crate::gaussian::{logit, offdiag_index, sigmoid, Gaussian7D, Matrix7, DIM};
use crate::refine::MlpRefiner;
use crate::render::{prepare_splats, render, render_backward, RenderSettings, Splat2D};
use crate::shading::C0;
use crate::slice::{slice_joint, slice_two_stage, SliceConfig};

/// Outcome of one check.
#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn report(name: &'static str, start: Instant, passed: bool, detail: String) -> CheckReport {
    CheckReport { name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

/// Random Gaussian with Cholesky entries drawn from fixed uniform ranges.
pub fn random_gaussian<R: Rng>(rng: &mut R) -> Gaussian7D {
    let mut g = Gaussian7D::default();
    for v in g.chol_offdiag.iter_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    for v in g.chol_logdiag.iter_mut() {
        *v = rng.random_range(-1.2..0.4);
    }
    for i in 0..3 {
        g.mu_p[i] = rng.random_range(-1.0..1.0);
        g.mu_d[i] = rng.random_range(-1.0..1.0);
    }
    g.mu_t = rng.random_range(0.0..1.0);
    g.opacity_logit = rng.random_range(-3.0..3.0);
    g
}

pub fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        let n: f64 = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// `L Lᵀ` with plain loops.
fn covariance_naive(g: &Gaussian7D) -> Matrix7 {
    let l = factor_naive(g);
    let mut s = Matrix7::zeros();
    for i in 0..DIM {
        for j in 0..DIM {
            let mut acc = 0.0;
            for k in 0..DIM {
                acc += l[(i, k)] * l[(j, k)];
            }
            s[(i, j)] = acc;
        }
    }
    s
}

fn factor_naive(g: &Gaussian7D) -> Matrix7 {
    let mut l = Matrix7::zeros();
    for r in 0..DIM {
        for c in 0..r {
            l[(r, c)] = g.chol_offdiag[offdiag_index(r, c)];
        }
        l[(r, r)] = g.chol_logdiag[r].exp();
    }
    l
}

/// Largest differences `(|Δμ|, |ΔΣ|)` between the joint and sequential
/// slicing routes over `count` random instances.
pub fn slicing_equivalence(count: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SliceConfig::default();
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..count {
        let g = random_gaussian(&mut rng);
        let t = rng.random_range(0.0..1.0);
        let d = random_unit(&mut rng);
        let (a, b) = match (slice_joint(&g, t, &d, &cfg), slice_two_stage(&g, t, &d, &cfg)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return (f64::INFINITY, f64::INFINITY),
        };
        worst.0 = worst.0.max((a.mu_cond - b.mu_cond).abs().max());
        worst.1 = worst.1.max((a.sigma_cond - b.sigma_cond).abs().max());
    }
    worst
}

/// Summary of the sampling oracle.
#[derive(Clone, Debug)]
pub struct MonteCarloSummary {
    pub instances: usize,
    pub compared: usize,
    /// Comparisons further than 3 standard errors from the closed form.
    pub outside: usize,
    pub worst_z: f64,
    pub min_accepted: usize,
}

/// Instance with a tight `(t, d)` block so a small acceptance window holds
/// enough draws, conditioned at `t = 0.3`, `d = +z`.
fn sampling_instance<R: Rng>(rng: &mut R) -> (Gaussian7D, f64, Vector3<f64>) {
    let mut g = Gaussian7D::default();
    for r in 0..DIM {
        for c in 0..r {
            let range = match (r, c) {
                (3, _) => 0.04,
                (4..=6, 0..=2) => 0.07,
                (4..=6, 3) => 0.04,
                (4..=6, _) => 0.05,
                _ => 0.25,
            };
            g.chol_offdiag[offdiag_index(r, c)] = rng.random_range(-range..range);
        }
        let diag: f64 = match r {
            0..=2 => rng.random_range(0.3..0.6),
            3 => 0.07,
            _ => 0.18,
        };
        g.chol_logdiag[r] = diag.ln();
    }
    let t = 0.3;
    let d = Vector3::new(0.0, 0.0, 1.0);
    g.mu_t = t + rng.random_range(-0.04..0.04);
    for i in 0..3 {
        g.mu_p[i] = rng.random_range(-1.0..1.0);
        g.mu_d[i] = d[i] + rng.random_range(-0.1..0.1);
    }
    (g, t, d)
}

/// Rejection sampling: draw from the joint 7D Gaussian, keep draws with
/// `|t_s − t| < 0.02` and `|d_s − d|∞ < 0.05`, and compare the empirical
/// mean and covariance of the spatial part to the closed-form conditional.
pub fn conditioning_monte_carlo(instances: usize, draws: usize, seed: u64) -> MonteCarloSummary {
    let results: Vec<(usize, usize, f64, usize)> = (0..instances)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64 * 7919));
            let (g, t, d) = sampling_instance(&mut rng);
            let cfg = SliceConfig { lambda_t: 0.0, lambda_d: 0.0, ..SliceConfig::default() };
            let sliced = slice_joint(&g, t, &d, &cfg).expect("well-conditioned instance");
            let l = factor_naive(&g);
            let mean7 = [g.mu_p[0], g.mu_p[1], g.mu_p[2], g.mu_t, g.mu_d[0], g.mu_d[1], g.mu_d[2]];
            let target = [t, d[0], d[1], d[2]];
            let windows = [0.02, 0.05, 0.05, 0.05];

            let mut kept: Vec<[f64; 3]> = Vec::new();
            let mut z = [0.0f64; DIM];
            for _ in 0..draws {
                for v in z.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let mut ok = true;
                for (k, row) in (3..DIM).enumerate() {
                    let mut x = mean7[row];
                    for c in 0..=row {
                        x += l[(row, c)] * z[c];
                    }
                    if (x - target[k]).abs() >= windows[k] {
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    continue;
                }
                let mut p = [0.0; 3];
                for (row, out) in p.iter_mut().enumerate() {
                    let mut x = mean7[row];
                    for c in 0..=row {
                        x += l[(row, c)] * z[c];
                    }
                    *out = x;
                }
                kept.push(p);
            }

            let n = kept.len() as f64;
            let mut mean = [0.0; 3];
            for p in &kept {
                for i in 0..3 {
                    mean[i] += p[i] / n;
                }
            }
            let mut cov = [[0.0; 3]; 3];
            for p in &kept {
                for i in 0..3 {
                    for j in 0..3 {
                        cov[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]) / (n - 1.0);
                    }
                }
            }
            let mut compared = 0;
            let mut outside = 0;
            let mut worst = 0.0f64;
            for i in 0..3 {
                let se = (cov[i][i] / n).sqrt();
                let z = (mean[i] - sliced.mu_cond[i]).abs() / se;
                worst = worst.max(z);
                compared += 1;
                outside += usize::from(z > 3.0);
            }
            for i in 0..3 {
                for j in i..3 {
                    let mut m4 = 0.0;
                    for p in &kept {
                        let v = (p[i] - mean[i]) * (p[j] - mean[j]) - cov[i][j];
                        m4 += v * v;
                    }
                    let se = (m4 / (n - 1.0) / n).sqrt();
                    let z = (cov[i][j] - sliced.sigma_cond[(i, j)]).abs() / se;
                    worst = worst.max(z);
                    compared += 1;
                    outside += usize::from(z > 3.0);
                }
            }
            (compared, outside, worst, kept.len())
        })
        .collect();
    MonteCarloSummary {
        instances,
        compared: results.iter().map(|r| r.0).sum(),
        outside: results.iter().map(|r| r.1).sum(),
        worst_z: results.iter().map(|r| r.2).fold(0.0, f64::max),
        min_accepted: results.iter().map(|r| r.3).min().unwrap_or(0),
    }
}

/// Largest deviations `(6DGS reduction, 3DGS reduction)` over random
/// instances with vanishing temporal cross blocks.
pub fn degenerate_reductions(count: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..count {
        let mut g = random_gaussian(&mut rng);
        // zero L[3][0..3] and L[4..7][3] so that Σ_pt = 0 and Σ_td = 0
        for c in 0..3 {
            g.chol_offdiag[offdiag_index(3, c)] = 0.0;
        }
        for r in 4..DIM {
            g.chol_offdiag[offdiag_index(r, 3)] = 0.0;
        }
        let t = rng.random_range(0.0..1.0);
        let d = random_unit(&mut rng);
        let lambda_d = rng.random_range(0.0..2.0);
        let cfg = SliceConfig { lambda_t: 0.0, lambda_d, ..SliceConfig::default() };

        // conditioning on X_d = d with an explicit inverse
        let s = covariance_naive(&g);
        let sp = s.fixed_view::<3, 3>(0, 0).into_owned();
        let spd = s.fixed_view::<3, 3>(0, 4).into_owned();
        let sd = s.fixed_view::<3, 3>(4, 4).into_owned();
        let sd_inv = sd.try_inverse().expect("invertible");
        let dd = d - Vector3::from(g.mu_d);
        let mu = Vector3::from(g.mu_p) + spd * sd_inv * dd;
        let cov = sp - spd * sd_inv * spd.transpose();
        let alpha = sigmoid(g.opacity_logit) * (-0.5 * lambda_d * dd.dot(&(sd_inv * dd))).exp();

        for sliced in [slice_joint(&g, t, &d, &cfg), slice_two_stage(&g, t, &d, &cfg)] {
            let sl = sliced.expect("slice");
            let e = (sl.mu_cond - mu)
                .abs()
                .max()
                .max((sl.sigma_cond - cov).abs().max())
                .max((sl.alpha_cond - alpha).abs());
            worst.0 = worst.0.max(e);
        }

        // no cross blocks at all and no modulation: nothing changes
        for r in 3..DIM {
            for c in 0..r {
                if c < 3 || (r >= 4 && c == 3) {
                    g.chol_offdiag[offdiag_index(r, c)] = 0.0;
                }
            }
        }
        let cfg = SliceConfig { lambda_t: 0.0, lambda_d: 0.0, ..SliceConfig::default() };
        let s = covariance_naive(&g);
        let sp = s.fixed_view::<3, 3>(0, 0).into_owned();
        for sliced in [slice_joint(&g, t, &d, &cfg), slice_two_stage(&g, t, &d, &cfg)] {
            let sl = sliced.expect("slice");
            let e = (sl.mu_cond - Vector3::from(g.mu_p))
                .abs()
                .max()
                .max((sl.sigma_cond - sp).abs().max())
                .max((sl.alpha_cond - sigmoid(g.opacity_logit)).abs());
            worst.1 = worst.1.max(e);
        }
    }
    worst
}

/// Worst `(reconstruction error, |det R − 1|)` of the scale/rotation split.
pub fn svd_reconstruction(count: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..count {
        let a = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let sigma = a.transpose() * a;
        let (s, r) = match extract_scale_rotation(&sigma) {
            Ok(v) => v,
            Err(_) => return (f64::INFINITY, f64::INFINITY),
        };
        let back = r * Matrix3::from_diagonal(&s.component_mul(&s)) * r.transpose();
        worst.0 = worst.0.max((back - sigma).abs().max());
        worst.1 = worst.1.max((r.determinant() - 1.0).abs());
    }
    worst
}

/// Random scene of `n` Gaussians around the origin seen from a random orbit
/// position.
pub fn random_scene<R: Rng>(rng: &mut R, n: usize, width: usize, height: usize) -> (Vec<Gaussian7D>, CameraFrame) {
    let cloud = (0..n)
        .map(|_| {
            let mut g = random_gaussian(rng);
            for i in 0..3 {
                g.mu_p[i] = rng.random_range(-0.8..0.8);
            }
            for i in 0..3 {
                g.chol_logdiag[i] = rng.random_range(-2.5f64..-1.2);
            }
            g.opacity_logit = rng.random_range(-1.0..4.0);
            g.sh[0] = rng.random_range(-1.5..1.5);
            g.sh[1] = rng.random_range(-1.5..1.5);
            g.sh[2] = rng.random_range(-1.5..1.5);
            for v in g.sh[3..].iter_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
            g
        })
        .collect();
    let eye = random_unit(rng) * rng.random_range(2.5..4.0);
    let up = if eye.normalize()[2].abs() > 0.95 { Vector3::new(0.0, 1.0, 0.0) } else { Vector3::new(0.0, 0.0, 1.0) };
    let cam = CameraFrame::look_at(eye, Vector3::zeros(), up, 50.0, width, height, rng.random_range(0.0..1.0));
    (cloud, cam)
}

/// Per-pixel compositor that evaluates every splat at every pixel with no
/// tiling or footprint culling.
pub fn brute_force_composite(splats: &[Splat2D<f64>], width: usize, height: usize, background: [f64; 3]) -> Vec<f64> {
    let mut order: Vec<&Splat2D<f64>> = splats.iter().collect();
    order.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.source.cmp(&b.source)));
    let mut out = vec![0.0; width * height * 3];
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut trans = 1.0;
            let mut c = [0.0; 3];
            for s in &order {
                let dx = px - s.mean[0];
                let dy = py - s.mean[1];
                let q = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
                if q < 0.0 {
                    continue;
                }
                let a = f64::min(0.99, s.alpha * (-0.5 * q).exp());
                if a < 1.0 / 255.0 {
                    continue;
                }
                if trans * (1.0 - a) < 1e-4 {
                    break;
                }
                for k in 0..3 {
                    c[k] += trans * a * s.rgb[k];
                }
                trans *= 1.0 - a;
            }
            for k in 0..3 {
                out[3 * (y * width + x) + k] = c[k] + trans * background[k];
            }
        }
    }
    out
}

/// Largest per-channel difference between the tiled renderer and the
/// brute-force compositor over random scenes.
pub fn tiled_vs_brute_force(scenes: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for k in 0..scenes {
        let n = rng.random_range(1..=100);
        let w = rng.random_range(8..=64);
        let h = rng.random_range(8..=64);
        let (cloud, cam) = random_scene(&mut rng, n, w, h);
        let mut settings = RenderSettings::default();
        settings.background = [rng.random_range(0.0..0.3), 0.0, rng.random_range(0.0..0.3)];
        let nets = (k % 2 == 1).then(|| active_nets(&mut rng, 0.02));
        let fb = match render::<f64>(&cloud, nets.as_ref(), &cam, &settings) {
            Ok(fb) => fb,
            Err(_) => return f64::INFINITY,
        };
        let splats = prepare_splats::<f64>(&cloud, nets.as_ref(), &cam, &settings).expect("same inputs");
        let brute = brute_force_composite(&splats, w, h, settings.background);
        for (a, b) in fb.color.iter().zip(&brute) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Refiner with the usual hidden init and small random output layers, so
/// every head produces a nonzero residual.
pub fn active_nets<R: Rng>(rng: &mut R, scale: f64) -> MlpRefiner {
    let mut nets = MlpRefiner::init(crate::refine::DEFAULT_FREQUENCIES, rng);
    for head in nets.heads_mut() {
        let first = head.hidden * head.inputs + head.hidden;
        for p in &mut head.params[first..] {
            *p = rng.random_range(-scale..scale);
        }
    }
    nets
}

/// Summary of the finite-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradientSummary {
    pub sampled: usize,
    pub failures: usize,
    pub max_rel: f64,
    pub worst: String,
}

/// Gradient scene: three broad, semi-transparent Gaussians filling an 8×8
/// frame so no pixel sits near the skip or saturation thresholds.
pub fn gradient_scene(seed: u64) -> (Vec<Gaussian7D>, MlpRefiner, CameraFrame, RenderSettings) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cloud = (0..3)
        .map(|_| {
            let mut g = Gaussian7D::default();
            for v in g.chol_offdiag.iter_mut() {
                *v = rng.random_range(-0.15..0.15);
            }
            for i in 0..3 {
                g.chol_logdiag[i] = rng.random_range(0.7f64..1.1).ln();
                g.mu_p[i] = rng.random_range(-0.3..0.3);
                g.mu_d[i] = rng.random_range(-0.5..0.5);
            }
            g.chol_logdiag[3] = 0.3f64.ln();
            for i in 4..DIM {
                g.chol_logdiag[i] = rng.random_range(0.7f64..1.0).ln();
            }
            g.mu_t = rng.random_range(0.3..0.6);
            g.opacity_logit = logit(rng.random_range(0.35..0.7));
            for c in 0..3 {
                g.sh[c] = (rng.random_range(0.3..0.8) - 0.5) / C0;
            }
            for v in g.sh[3..].iter_mut() {
                *v = rng.random_range(-0.04..0.04);
            }
            g
        })
        .collect();
    let nets = active_nets(&mut rng, 0.02);
    let cam = CameraFrame::look_at(
        Vector3::new(0.4, -3.0, 0.5),
        Vector3::zeros(),
        Vector3::new(0.0, 0.0, 1.0),
        50.0,
        8,
        8,
        0.45,
    );
    let mut settings = RenderSettings::default();
    settings.slice.lambda_t = 0.5;
    settings.slice.lambda_d = 0.5;
    settings.background = [0.1, 0.2, 0.3];
    (cloud, nets, cam, settings)
}

/// Central finite differences of `L = Σ wᵢ colorᵢ` on the 64-bit path
/// against `render_backward`, for every Gaussian parameter, both modulation
/// sharpnesses and `net_samples` network parameters.
pub fn gradient_check(seed: u64, net_samples: usize, step: f64, abs_floor: f64) -> GradientSummary {
    let (cloud, nets, cam, settings) = gradient_scene(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let weights: Vec<f64> = (0..cam.width * cam.height * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |cloud: &[Gaussian7D], nets: &MlpRefiner, settings: &RenderSettings| -> f64 {
        let fb = render::<f64>(cloud, Some(nets), &cam, settings).expect("render");
        fb.color.iter().zip(&weights).map(|(c, w)| c * w).sum()
    };
    let grads = render_backward::<f64>(&cloud, Some(&nets), &cam, &settings, &weights).expect("backward");

    let mut samples: Vec<(String, f64, f64)> = Vec::new();
    for (gi, g) in cloud.iter().enumerate() {
        let flat = g.to_flat();
        let analytic = grads.gaussians[gi].to_flat();
        for p in 0..flat.len() {
            let eval = |delta: f64| {
                let mut f = flat.clone();
                f[p] += delta;
                let mut c = cloud.clone();
                c[gi] = Gaussian7D::from_flat(&f, g.sh_fourier.len()).expect("flat");
                loss(&c, &nets, &settings)
            };
            let numeric = (eval(step) - eval(-step)) / (2.0 * step);
            samples.push((format!("gaussian {gi} param {p}"), analytic[p], numeric));
        }
    }
    for which in 0..2 {
        let eval = |delta: f64| {
            let mut s = settings.clone();
            if which == 0 {
                s.slice.lambda_t += delta;
            } else {
                s.slice.lambda_d += delta;
            }
            loss(&cloud, &nets, &s)
        };
        let numeric = (eval(step) - eval(-step)) / (2.0 * step);
        let analytic = if which == 0 { grads.lambda_t } else { grads.lambda_d };
        samples.push((format!("lambda {}", ["t", "d"][which]), analytic, numeric));
    }
    let grad_nets = grads.nets.as_ref().expect("net gradients");
    for k in 0..net_samples {
        let head = k % 4;
        let len = nets.heads()[head].params.len();
        // half from the output layer, half from the hidden layer
        let first = nets.heads()[head].hidden * nets.heads()[head].inputs + nets.heads()[head].hidden;
        let idx = if k % 2 == 0 { rng.random_range(first..len) } else { rng.random_range(0..first) };
        let eval = |delta: f64| {
            let mut n = nets.clone();
            n.heads_mut()[head].params[idx] += delta;
            loss(&cloud, &n, &settings)
        };
        let numeric = (eval(step) - eval(-step)) / (2.0 * step);
        samples.push((format!("net head {head} param {idx}"), grad_nets.heads()[head].params[idx], numeric));
    }

    let mut summary = GradientSummary { sampled: samples.len(), failures: 0, max_rel: 0.0, worst: String::new() };
    for (name, a, n) in samples {
        let diff = (a - n).abs();
        let rel = if diff <= abs_floor { 0.0 } else { diff / a.abs().max(n.abs()) };
        if rel >= 1e-5 {
            summary.failures += 1;
        }
        if rel > summary.max_rel {
            summary.max_rel = rel;
            summary.worst = format!("{name}: analytic {a:.6e}, numeric {n:.6e}");
        }
    }
    summary
}

/// Runs every check. `quick` shrinks sample counts for a fast smoke run.
pub fn run_all(quick: bool) -> Vec<CheckReport> {
    let mut out = Vec::new();

    let start = Instant::now();
    let (dm, ds) = slicing_equivalence(1000, 1);
    out.push(report("two-stage slicing equals joint slicing", start, dm < 1e-9 && ds < 1e-9, format!("max|Δμ| {dm:.2e}, max|ΔΣ| {ds:.2e}")));

    let start = Instant::now();
    let draws = if quick { 200_000 } else { 1_000_000 };
    let mc = conditioning_monte_carlo(20, draws, 2);
    // the quick run bounds the largest of all z-scores instead: with 180
    // comparisons one of them beyond 3 is routine at these sample sizes
    let passed = if quick { mc.worst_z < 4.0 } else { mc.outside == 0 };
    out.push(report(
        "conditional matches rejection sampling",
        start,
        passed,
        format!("{} of {} comparisons beyond 3 SE, worst z {:.2}, min accepted {}", mc.outside, mc.compared, mc.worst_z, mc.min_accepted),
    ));

    let start = Instant::now();
    let (e6, e3) = degenerate_reductions(200, 3);
    out.push(report("6DGS and 3DGS reductions", start, e6 < 1e-12 && e3 < 1e-12, format!("6DGS {e6:.2e}, identity {e3:.2e}")));

    let start = Instant::now();
    let g = gradient_check(4, if quick { 20 } else { 60 }, 1e-4, 1e-9);
    out.push(report(
        "render gradients match finite differences",
        start,
        g.failures == 0,
        format!("{} sampled, {} failures, max rel {:.2e} ({})", g.sampled, g.failures, g.max_rel, g.worst),
    ));

    let start = Instant::now();
    let e = tiled_vs_brute_force(if quick { 10 } else { 50 }, 5);
    out.push(report("tiled renderer equals brute force", start, e < 1e-6, format!("max diff {e:.2e}")));

    let start = Instant::now();
    let (r, d) = svd_reconstruction(1000, 6);
    out.push(report("scale/rotation reconstruction", start, r < 1e-10 && d < 1e-10, format!("max err {r:.2e}, max |det−1| {d:.2e}")));

    out
}
