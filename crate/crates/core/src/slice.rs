//! Conditioning a 7D Gaussian on an observed time and view direction.
//!
//! The spatial block of the conditional is an ordinary 3D Gaussian; its
//! opacity is the base opacity scaled by temporal and directional modulation
//! factors. Two algebraic routes are provided: a joint Schur complement over
//! the 4D `(t, d)` block and a sequential route that conditions on time first
//! and then on direction. They agree up to rounding.

use nalgebra::{Cholesky, Const, Matrix3, Matrix3x4, Matrix4x3, SMatrix, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{assemble_covariance, partition, Gaussian7D, Matrix7};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OpacityMode {
    /// `α·f_temp·f_dir` with the `½` in both exponents.
    #[default]
    Product,
    /// `α·√(f_temp·f_dir)` with exponents lacking the `½`.
    SqrtProduct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SlicingMode {
    #[default]
    Joint,
    TwoStage,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SliceConfig {
    pub lambda_t: f64,
    pub lambda_d: f64,
    pub opacity_mode: OpacityMode,
    pub slicing_mode: SlicingMode,
    pub epsilon_jitter: f64,
    pub epsilon_pd: f64,
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self {
            lambda_t: 0.5,
            lambda_d: 0.5,
            opacity_mode: OpacityMode::Product,
            slicing_mode: SlicingMode::Joint,
            epsilon_jitter: 1e-8,
            epsilon_pd: 1e-10,
        }
    }
}

impl SliceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_t", self.lambda_t), ("lambda_d", self.lambda_d)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        if !(self.epsilon_jitter >= 0.0) || !(self.epsilon_pd >= 0.0) {
            return Err(Error::config("epsilon", "must be non-negative"));
        }
        Ok(())
    }

    /// Exponent scale and combination power for the opacity mode.
    fn mode_constants(&self) -> (f64, f64) {
        match self.opacity_mode {
            OpacityMode::Product => (0.5, 1.0),
            OpacityMode::SqrtProduct => (1.0, 0.5),
        }
    }
}

/// The time/view-conditioned 3D Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct Sliced3D {
    pub mu_cond: Vector3<f64>,
    pub sigma_cond: Matrix3<f64>,
    pub alpha_cond: f64,
    pub f_temp: f64,
    pub f_dir: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Modulation {
    pub f_temp: f64,
    pub f_dir: f64,
    pub alpha_cond: f64,
}

/// Cholesky of an SPD block: plain first, then with `ε` and `10ε` diagonal jitter.
pub(crate) fn factor_spd<const N: usize>(
    m: &SMatrix<f64, N, N>,
    epsilon: f64,
) -> Result<Cholesky<f64, Const<N>>> {
    if let Some(c) = Cholesky::new(*m) {
        return Ok(c);
    }
    for eps in [epsilon, 10.0 * epsilon] {
        let jittered = m + SMatrix::<f64, N, N>::identity() * eps;
        if let Some(c) = Cholesky::new(jittered) {
            return Ok(c);
        }
    }
    Err(Error::SingularConditioningBlock)
}

/// Symmetrizes and lifts eigenvalues below `epsilon_pd` up to it.
pub fn clamp_covariance(raw: &Matrix3<f64>, epsilon_pd: f64) -> Matrix3<f64> {
    let sym = (raw + raw.transpose()) * 0.5;
    let shifted = sym - Matrix3::identity() * epsilon_pd;
    if Cholesky::new(shifted).is_some() {
        return sym;
    }
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(epsilon_pd));
    let out = eig.eigenvectors * Matrix3::from_diagonal(&vals) * eig.eigenvectors.transpose();
    (out + out.transpose()) * 0.5
}

/// Unclamped joint conditional `(μ_cond, Σ_cond)` via the 4D Schur complement.
pub fn conditional_joint_raw(
    g: &Gaussian7D,
    t: f64,
    d: &Vector3<f64>,
    cfg: &SliceConfig,
) -> Result<(Vector3<f64>, Matrix3<f64>)> {
    let sigma = assemble_covariance(g)?;
    let blocks = partition(&sigma);
    let a = factor_spd(&blocks.sigma_td_joint, cfg.epsilon_jitter)?;
    let delta = deviation(g, t, d);
    let v = a.solve(&delta);
    let m = a.solve(&blocks.sigma_p_td.transpose());
    let mu = Vector3::from(g.mu_p) + blocks.sigma_p_td * v;
    let cov = blocks.sigma_p - blocks.sigma_p_td * m;
    Ok((mu, cov))
}

/// Unclamped sequential conditional: time first, then direction.
pub fn conditional_two_stage_raw(
    g: &Gaussian7D,
    t: f64,
    d: &Vector3<f64>,
    cfg: &SliceConfig,
) -> Result<(Vector3<f64>, Matrix3<f64>)> {
    let sigma = assemble_covariance(g)?;
    let b = partition(&sigma);
    if !(b.sigma_t > 0.0) {
        return Err(Error::SingularConditioningBlock);
    }
    let inv_tt = 1.0 / b.sigma_t;
    let dt = t - g.mu_t;
    let sigma_dt = b.sigma_td.transpose();

    // stage 1: (p, d) | t
    let mu_p_t = Vector3::from(g.mu_p) + b.sigma_pt * (inv_tt * dt);
    let mu_d_t = Vector3::from(g.mu_d) + sigma_dt * (inv_tt * dt);
    let pp_t = b.sigma_p - b.sigma_pt * b.sigma_pt.transpose() * inv_tt;
    let pd_t = b.sigma_pd - b.sigma_pt * b.sigma_td * inv_tt;
    let dd_t = b.sigma_d - sigma_dt * b.sigma_td * inv_tt;

    // stage 2: p | d, t
    let dd = factor_spd(&dd_t, cfg.epsilon_jitter)?;
    let mu = mu_p_t + pd_t * dd.solve(&(d - mu_d_t));
    let cov = pp_t - pd_t * dd.solve(&pd_t.transpose());
    Ok((mu, cov))
}

fn deviation(g: &Gaussian7D, t: f64, d: &Vector3<f64>) -> Vector4<f64> {
    Vector4::new(t - g.mu_t, d[0] - g.mu_d[0], d[1] - g.mu_d[1], d[2] - g.mu_d[2])
}

/// Opacity modulation factors and the conditional opacity.
pub fn modulation(g: &Gaussian7D, t: f64, d: &Vector3<f64>, cfg: &SliceConfig) -> Result<Modulation> {
    let sigma = assemble_covariance(g)?;
    let blocks = partition(&sigma);
    let sd = factor_spd(&blocks.sigma_d, cfg.epsilon_jitter)?;
    modulation_from_blocks(g, blocks.sigma_t, &sd, t, d, cfg).map(|(m, _)| m)
}

struct ModulationTape {
    delta_t: f64,
    sigma_t: f64,
    u: Vector3<f64>,
    q: f64,
}

fn modulation_from_blocks(
    g: &Gaussian7D,
    sigma_t: f64,
    sigma_d: &Cholesky<f64, Const<3>>,
    t: f64,
    d: &Vector3<f64>,
    cfg: &SliceConfig,
) -> Result<(Modulation, ModulationTape)> {
    if !(sigma_t > 0.0) {
        return Err(Error::SingularConditioningBlock);
    }
    let (scale, power) = cfg.mode_constants();
    let delta_t = t - g.mu_t;
    let delta_d = d - Vector3::from(g.mu_d);
    let u = sigma_d.solve(&delta_d);
    let q = delta_d.dot(&u);
    let f_temp = (-scale * cfg.lambda_t * delta_t * delta_t / sigma_t).exp();
    let f_dir = (-scale * cfg.lambda_d * q).exp();
    let alpha_cond = g.opacity() * (f_temp * f_dir).powf(power);
    Ok((Modulation { f_temp, f_dir, alpha_cond }, ModulationTape { delta_t, sigma_t, u, q }))
}

/// Joint-route slice: Schur complement over the 4D `(t, d)` block.
pub fn slice_joint(g: &Gaussian7D, t: f64, d: &Vector3<f64>, cfg: &SliceConfig) -> Result<Sliced3D> {
    slice_joint_taped(g, t, d, cfg).map(|(s, _)| s)
}

/// Sequential-route slice: condition on time, then on direction.
pub fn slice_two_stage(g: &Gaussian7D, t: f64, d: &Vector3<f64>, cfg: &SliceConfig) -> Result<Sliced3D> {
    let (mu, raw) = conditional_two_stage_raw(g, t, d, cfg)?;
    let m = modulation(g, t, d, cfg)?;
    Ok(Sliced3D {
        mu_cond: mu,
        sigma_cond: clamp_covariance(&raw, cfg.epsilon_pd),
        alpha_cond: m.alpha_cond,
        f_temp: m.f_temp,
        f_dir: m.f_dir,
    })
}

/// Slices with the route selected by `cfg.slicing_mode`.
pub fn slice(g: &Gaussian7D, t: f64, d: &Vector3<f64>, cfg: &SliceConfig) -> Result<Sliced3D> {
    match cfg.slicing_mode {
        SlicingMode::Joint => slice_joint(g, t, d, cfg),
        SlicingMode::TwoStage => slice_two_stage(g, t, d, cfg),
    }
}

/// Intermediates kept from a forward slice for [`slice_backward`].
pub struct SliceTape {
    a: Cholesky<f64, Const<4>>,
    b: Matrix3x4<f64>,
    v: Vector4<f64>,
    m: Matrix4x3<f64>,
    modulation: ModulationTape,
    alpha_cond: f64,
    opacity: f64,
}

/// Forward slice that also records what the backward pass needs. Gradients
/// follow the joint route whatever `slicing_mode` says, since both routes
/// compute the same function.
pub fn slice_taped(g: &Gaussian7D, t: f64, d: &Vector3<f64>, cfg: &SliceConfig) -> Result<(Sliced3D, SliceTape)> {
    match cfg.slicing_mode {
        SlicingMode::Joint => slice_joint_taped(g, t, d, cfg),
        SlicingMode::TwoStage => {
            let (_, tape) = slice_joint_taped(g, t, d, cfg)?;
            Ok((slice_two_stage(g, t, d, cfg)?, tape))
        }
    }
}

fn slice_joint_taped(g: &Gaussian7D, t: f64, d: &Vector3<f64>, cfg: &SliceConfig) -> Result<(Sliced3D, SliceTape)> {
    let sigma = assemble_covariance(g)?;
    let blocks = partition(&sigma);
    let a = factor_spd(&blocks.sigma_td_joint, cfg.epsilon_jitter)?;
    let delta = deviation(g, t, d);
    let v = a.solve(&delta);
    let m = a.solve(&blocks.sigma_p_td.transpose());
    let mu_cond = Vector3::from(g.mu_p) + blocks.sigma_p_td * v;
    let raw = blocks.sigma_p - blocks.sigma_p_td * m;

    let sd = factor_spd(&blocks.sigma_d, cfg.epsilon_jitter)?;
    let (modu, mtape) = modulation_from_blocks(g, blocks.sigma_t, &sd, t, d, cfg)?;
    let sliced = Sliced3D {
        mu_cond,
        sigma_cond: clamp_covariance(&raw, cfg.epsilon_pd),
        alpha_cond: modu.alpha_cond,
        f_temp: modu.f_temp,
        f_dir: modu.f_dir,
    };
    let tape = SliceTape {
        a,
        b: blocks.sigma_p_td,
        v,
        m,
        modulation: mtape,
        alpha_cond: modu.alpha_cond,
        opacity: g.opacity(),
    };
    Ok((sliced, tape))
}

/// Gradients of a slice with respect to its inputs.
#[derive(Clone, Debug, Default)]
pub struct SliceGrad {
    pub mu_p: Vector3<f64>,
    pub mu_t: f64,
    pub mu_d: Vector3<f64>,
    /// Full-matrix gradient on the entries of `Σ` that the forward pass read.
    pub sigma: Matrix7,
    pub opacity_logit: f64,
    pub lambda_t: f64,
    pub lambda_d: f64,
    /// Gradient with respect to the conditioning direction.
    pub direction: Vector3<f64>,
}

/// Reverse-mode pass through the conditional mean, the Schur complement and
/// the opacity modulation. The eigenvalue clamp is treated as the identity.
pub fn slice_backward(
    tape: &SliceTape,
    cfg: &SliceConfig,
    grad_mu: &Vector3<f64>,
    grad_sigma: &Matrix3<f64>,
    grad_alpha: f64,
) -> SliceGrad {
    let mut out = SliceGrad::default();
    let gs = (grad_sigma + grad_sigma.transpose()) * 0.5;

    // μ_cond = μ_p + B v, v = A⁻¹ δ
    out.mu_p = *grad_mu;
    let mut grad_b = grad_mu * tape.v.transpose();
    let w = tape.a.solve(&(tape.b.transpose() * grad_mu));
    let mut grad_a = -w * tape.v.transpose();
    out.mu_t -= w[0];
    let w_d = Vector3::new(w[1], w[2], w[3]);
    out.mu_d -= w_d;
    out.direction += w_d;

    // Σ_cond = Σ_p − B A⁻¹ Bᵀ
    grad_b -= gs * tape.m.transpose() * 2.0;
    grad_a += tape.m * gs * tape.m.transpose();

    out.sigma.fixed_view_mut::<3, 3>(0, 0).copy_from(&gs);
    out.sigma.fixed_view_mut::<3, 4>(0, 3).copy_from(&grad_b);
    out.sigma.fixed_view_mut::<4, 4>(3, 3).copy_from(&grad_a);

    // α_cond = σ(o)·exp(−k (E_t + E_d))
    let (scale, power) = cfg.mode_constants();
    let mt = &tape.modulation;
    let grad_e = -power * tape.alpha_cond * grad_alpha;
    out.opacity_logit = grad_alpha * tape.alpha_cond * (1.0 - tape.opacity);
    out.lambda_t = grad_e * scale * mt.delta_t * mt.delta_t / mt.sigma_t;
    let grad_dt = grad_e * 2.0 * scale * cfg.lambda_t * mt.delta_t / mt.sigma_t;
    out.mu_t -= grad_dt;
    out.sigma[(3, 3)] -= grad_e * scale * cfg.lambda_t * mt.delta_t * mt.delta_t / (mt.sigma_t * mt.sigma_t);
    out.lambda_d = grad_e * scale * mt.q;
    let grad_dd = mt.u * (grad_e * 2.0 * scale * cfg.lambda_d);
    out.mu_d -= grad_dd;
    out.direction += grad_dd;
    let grad_sd = mt.u * mt.u.transpose() * (-grad_e * scale * cfg.lambda_d);
    let mut block = out.sigma.fixed_view_mut::<3, 3>(4, 4);
    block += grad_sd;
    out
}

/// Conditional mean and covariance of `p` given `(t, d)` from an explicit
/// covariance, used by density control where no [`Gaussian7D`] is at hand.
pub fn conditional_from_covariance(
    sigma: &Matrix7,
    mu_p: &Vector3<f64>,
    delta: &Vector4<f64>,
    epsilon: f64,
) -> Result<(Vector3<f64>, Matrix3<f64>)> {
    let blocks = partition(sigma);
    let a = factor_spd(&blocks.sigma_td_joint, epsilon)?;
    Ok((
        mu_p + blocks.sigma_p_td * a.solve(delta),
        blocks.sigma_p - blocks.sigma_p_td * a.solve(&blocks.sigma_p_td.transpose()),
    ))
}
