use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::decompose::extract_scale_rotation;
use crate::error::Result;
use crate::gaussian::{assemble_covariance, Gaussian7D};
use crate::slice::{slice, SliceConfig};

use super::config::DensifyConfig;
use super::TrainState;

/// Spatial split children have their position rows of `L` divided by this.
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub pruned: usize,
    pub cloned: usize,
    pub split: usize,
    pub temporal_split: usize,
}

fn reference_direction(g: &Gaussian7D) -> Vector3<f64> {
    let d = Vector3::from(g.mu_d);
    let n = d.norm();
    if n > 1e-9 {
        d / n
    } else {
        Vector3::z()
    }
}

/// Conditional spatial covariance at `(μ_t, μ_d/|μ_d|)`. It does not depend
/// on the conditioning values, only on the covariance blocks.
fn conditional_spatial(g: &Gaussian7D, cfg: &SliceConfig) -> Matrix3<f64> {
    match slice(g, g.mu_t, &reference_direction(g), cfg) {
        Ok(s) => s.sigma_cond,
        Err(_) => assemble_covariance(g).map(|s| s.fixed_view::<3, 3>(0, 0).into_owned()).unwrap_or_else(|_| Matrix3::identity()),
    }
}

fn max_scale(sigma: &Matrix3<f64>) -> f64 {
    match extract_scale_rotation(sigma) {
        Ok((s, _)) => s.max(),
        Err(_) => sigma.diagonal().max().max(0.0).sqrt(),
    }
}

fn spatial_split_child<R: Rng>(g: &Gaussian7D, sigma_cond: &Matrix3<f64>, rng: &mut R) -> Result<Gaussian7D> {
    let z = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
    let offset = match sigma_cond.cholesky() {
        Some(c) => c.l() * z,
        None => z * max_scale(sigma_cond),
    };
    let mut child = g.clone();
    for k in 0..3 {
        child.mu_p[k] += offset[k];
    }
    let mut l = g.cholesky_factor();
    for r in 0..3 {
        l.row_mut(r).scale_mut(1.0 / SPLIT_SCALE_DIVISOR);
    }
    child.set_cholesky_factor(&l)?;
    Ok(child)
}

/// Children at `μ_t ± ½√Σ_t` with the time row of `L` halved, so `Σ_t` is
/// quartered. Position and direction means follow the parent's regression
/// on time, which keeps each child on the parent's trajectory.
pub fn temporal_split_children(g: &Gaussian7D) -> Result<[Gaussian7D; 2]> {
    let sigma = assemble_covariance(g)?;
    let st = sigma[(3, 3)];
    let step = 0.5 * st.sqrt();
    let mut l = g.cholesky_factor();
    l.row_mut(3).scale_mut(0.5);
    let make = |sign: f64| -> Result<Gaussian7D> {
        let mut c = g.clone();
        let dt = sign * step;
        c.mu_t += dt;
        for k in 0..3 {
            c.mu_p[k] += sigma[(k, 3)] / st * dt;
            c.mu_d[k] += sigma[(4 + k, 3)] / st * dt;
        }
        c.set_cholesky_factor(&l)?;
        Ok(c)
    };
    Ok([make(-1.0)?, make(1.0)?])
}

/// The spatio-temporal split trigger: `‖Σ_pt‖∞ > temporal_correlation · extent`
/// and `√Σ_t > temporal_scale`.
pub fn wants_temporal_split(g: &Gaussian7D, d: &DensifyConfig, extent: f64) -> bool {
    let Ok(sigma) = assemble_covariance(g) else { return false };
    let corr = (0..3).map(|k| sigma[(k, 3)].abs()).fold(0.0, f64::max);
    corr > d.temporal_correlation * extent && sigma[(3, 3)].sqrt() > d.temporal_scale
}

/// One density-control pass.
///
/// Low-opacity Gaussians are removed first. Each survivor then gets at most
/// one action, checked in order: clone (high view-space gradient, small
/// conditional scale), spatial split (high gradient, large scale), temporal
/// split (strong position-time correlation and long temporal support).
/// New Gaussians start with zero optimizer moments; accumulators are reset.
pub fn densify_and_prune(state: &mut TrainState, d: &DensifyConfig, slice_cfg: &SliceConfig) -> Result<DensifyReport> {
    let n = state.cloud.len();
    let cloud = std::mem::take(&mut state.cloud);
    let m = std::mem::take(&mut state.m);
    let v = std::mem::take(&mut state.v);
    let mut report = DensifyReport::default();
    let mut out_cloud = Vec::with_capacity(n);
    let mut out_m = Vec::with_capacity(n);
    let mut out_v = Vec::with_capacity(n);
    let scale_limit = d.percent_dense * state.extent;

    for (i, ((g, gm), gv)) in cloud.into_iter().zip(m).zip(v).enumerate() {
        if g.opacity() < d.prune_opacity {
            report.pruned += 1;
            continue;
        }
        let room = out_cloud.len() + (n - i) < d.max_gaussians;
        let count = state.grad_count[i];
        let mean_grad = if count > 0 { state.grad_accum[i] / count as f64 } else { 0.0 };
        let zero = g.zeros_like();
        if room && mean_grad >= d.grad_threshold {
            let sigma_cond = conditional_spatial(&g, slice_cfg);
            if max_scale(&sigma_cond) <= scale_limit {
                report.cloned += 1;
                out_cloud.push(g.clone());
                out_m.push(zero.clone());
                out_v.push(zero.clone());
                out_cloud.push(g);
                out_m.push(gm);
                out_v.push(gv);
            } else {
                report.split += 1;
                for _ in 0..2 {
                    out_cloud.push(spatial_split_child(&g, &sigma_cond, &mut state.rng)?);
                    out_m.push(zero.clone());
                    out_v.push(zero.clone());
                }
            }
        } else if room && wants_temporal_split(&g, d, state.extent) {
            report.temporal_split += 1;
            for child in temporal_split_children(&g)? {
                out_cloud.push(child);
                out_m.push(zero.clone());
                out_v.push(zero.clone());
            }
        } else {
            out_cloud.push(g);
            out_m.push(gm);
            out_v.push(gv);
        }
    }
    state.cloud = out_cloud;
    state.m = out_m;
    state.v = out_v;
    state.reset_accumulators();
    Ok(report)
}
