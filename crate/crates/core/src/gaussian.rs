//! The 7D Gaussian primitive and its covariance parameterization.
//!
//! Coordinates are ordered `(p0, p1, p2, t, d0, d1, d2)`. The covariance is
//! stored as a lower-triangular Cholesky factor: 21 raw strictly-lower
//! entries (row-major) plus 7 log-diagonal entries, so any unconstrained
//! update keeps `Σ = L Lᵀ` positive definite.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, RowVector3, SMatrix, Vector3};

use crate::error::{Error, Result};

pub type Matrix7 = SMatrix<f64, 7, 7>;

pub const DIM: usize = 7;
pub const NUM_OFFDIAG: usize = 21;
pub const NUM_CHOL: usize = 28;
pub const SH_BASIS: usize = 16;
pub const SH_COEFFS: usize = SH_BASIS * 3;
/// Scalars per Gaussian excluding the optional Fourier SH weights.
pub const NUM_STATIC_PARAMS: usize = 3 + 1 + 3 + NUM_CHOL + 1 + SH_COEFFS;

/// Position of `L[row][col]` (`col < row`) in the strictly-lower row-major list.
#[inline]
pub const fn offdiag_index(row: usize, col: usize) -> usize {
    row * (row - 1) / 2 + col
}

/// One scene primitive.
///
/// The same shape doubles as a gradient accumulator (see [`Gaussian7D::zeros_like`]).
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian7D {
    pub mu_p: [f64; 3],
    pub mu_t: f64,
    /// Preferred view direction. A free latent, never renormalized.
    pub mu_d: [f64; 3],
    pub chol_offdiag: [f64; NUM_OFFDIAG],
    pub chol_logdiag: [f64; DIM],
    pub opacity_logit: f64,
    /// Degree-3 SH coefficients, `sh[basis * 3 + channel]`.
    pub sh: [f64; SH_COEFFS],
    /// Time-varying SH weights, `sh_fourier[(basis * 3 + channel) * terms + n]`.
    /// Empty when the Fourier color mode is off.
    pub sh_fourier: Vec<f64>,
}

impl Default for Gaussian7D {
    fn default() -> Self {
        Self {
            mu_p: [0.0; 3],
            mu_t: 0.0,
            mu_d: [0.0; 3],
            chol_offdiag: [0.0; NUM_OFFDIAG],
            chol_logdiag: [0.0; DIM],
            opacity_logit: 0.0,
            sh: [0.0; SH_COEFFS],
            sh_fourier: Vec::new(),
        }
    }
}

/// Names of the optimizer parameter groups, in the order returned by
/// [`Gaussian7D::groups`] and [`Gaussian7D::groups_mut`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Position,
    TimeMean,
    DirectionMean,
    CholOffdiag,
    CholLogdiag,
    Opacity,
    ShDc,
    ShRest,
    ShFourier,
}

pub const PARAM_GROUPS: [ParamGroup; 9] = [
    ParamGroup::Position,
    ParamGroup::TimeMean,
    ParamGroup::DirectionMean,
    ParamGroup::CholOffdiag,
    ParamGroup::CholLogdiag,
    ParamGroup::Opacity,
    ParamGroup::ShDc,
    ParamGroup::ShRest,
    ParamGroup::ShFourier,
];

impl Gaussian7D {
    /// Isotropic Gaussian with per-block standard deviations.
    pub fn isotropic(mu_p: [f64; 3], mu_t: f64, mu_d: [f64; 3], sigma_p: f64, sigma_t: f64, sigma_d: f64) -> Self {
        let mut g = Self { mu_p, mu_t, mu_d, ..Self::default() };
        for i in 0..3 {
            g.chol_logdiag[i] = sigma_p.ln();
            g.chol_logdiag[4 + i] = sigma_d.ln();
        }
        g.chol_logdiag[3] = sigma_t.ln();
        g
    }

    /// Gradient accumulator of matching shape, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self { sh_fourier: vec![0.0; self.sh_fourier.len()], ..Self::default() }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn fourier_terms(&self) -> usize {
        self.sh_fourier.len() / SH_COEFFS
    }

    /// Lower-triangular factor with `exp`-ed diagonal.
    pub fn cholesky_factor(&self) -> Matrix7 {
        let mut l = Matrix7::zeros();
        for row in 0..DIM {
            for col in 0..row {
                l[(row, col)] = self.chol_offdiag[offdiag_index(row, col)];
            }
            l[(row, row)] = self.chol_logdiag[row].exp();
        }
        l
    }

    /// Sets the Cholesky parameters from an explicit lower-triangular factor
    /// with positive diagonal.
    pub fn set_cholesky_factor(&mut self, l: &Matrix7) -> Result<()> {
        for row in 0..DIM {
            let diag = l[(row, row)];
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::contract("cholesky factor needs a positive finite diagonal"));
            }
            self.chol_logdiag[row] = diag.ln();
            for col in 0..row {
                self.chol_offdiag[offdiag_index(row, col)] = l[(row, col)];
            }
        }
        Ok(())
    }

    /// Builds the Cholesky parameters from an SPD covariance.
    pub fn set_covariance(&mut self, sigma: &Matrix7) -> Result<()> {
        let chol = nalgebra::Cholesky::new(*sigma)
            .ok_or_else(|| Error::contract("covariance is not positive definite"))?;
        self.set_cholesky_factor(&chol.l())
    }

    /// The 28 Cholesky parameters as `offdiag ⊕ logdiag`.
    pub fn chol_params(&self) -> [f64; NUM_CHOL] {
        let mut out = [0.0; NUM_CHOL];
        out[..NUM_OFFDIAG].copy_from_slice(&self.chol_offdiag);
        out[NUM_OFFDIAG..].copy_from_slice(&self.chol_logdiag);
        out
    }

    pub fn add_chol_params(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), NUM_CHOL);
        for (p, d) in self.chol_offdiag.iter_mut().zip(&delta[..NUM_OFFDIAG]) {
            *p += d;
        }
        for (p, d) in self.chol_logdiag.iter_mut().zip(&delta[NUM_OFFDIAG..]) {
            *p += d;
        }
    }

    /// Parameter slices in [`PARAM_GROUPS`] order.
    pub fn groups(&self) -> [&[f64]; 9] {
        [
            &self.mu_p,
            std::slice::from_ref(&self.mu_t),
            &self.mu_d,
            &self.chol_offdiag,
            &self.chol_logdiag,
            std::slice::from_ref(&self.opacity_logit),
            &self.sh[..3],
            &self.sh[3..],
            &self.sh_fourier,
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut [f64]; 9] {
        let (dc, rest) = self.sh.split_at_mut(3);
        [
            &mut self.mu_p,
            std::slice::from_mut(&mut self.mu_t),
            &mut self.mu_d,
            &mut self.chol_offdiag,
            &mut self.chol_logdiag,
            std::slice::from_mut(&mut self.opacity_logit),
            dc,
            rest,
            &mut self.sh_fourier,
        ]
    }

    pub fn num_params(&self) -> usize {
        NUM_STATIC_PARAMS + self.sh_fourier.len()
    }

    /// Flattened parameters in group order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.groups().iter().flat_map(|s| s.iter().copied()).collect()
    }

    /// Inverse of [`Gaussian7D::to_flat`]; `fourier_len` sizes the trailing group.
    pub fn from_flat(flat: &[f64], fourier_len: usize) -> Result<Self> {
        if flat.len() != NUM_STATIC_PARAMS + fourier_len {
            return Err(Error::contract("flat parameter length mismatch"));
        }
        let mut g = Self { sh_fourier: vec![0.0; fourier_len], ..Self::default() };
        let mut offset = 0;
        for slot in g.groups_mut() {
            let n = slot.len();
            slot.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(g)
    }

    /// `self += other` over every parameter.
    pub fn accumulate(&mut self, other: &Self) {
        for (dst, src) in self.groups_mut().into_iter().zip(other.groups()) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        let names = ["mu_p", "mu_t", "mu_d", "chol_offdiag", "chol_logdiag", "opacity_logit", "sh", "sh", "sh_fourier"];
        for (slot, name) in self.groups().iter().zip(names) {
            if slot.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteParameter(name));
            }
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `Σ = L Lᵀ` for the Gaussian's Cholesky parameters.
pub fn assemble_covariance(g: &Gaussian7D) -> Result<Matrix7> {
    if g.chol_offdiag.iter().chain(&g.chol_logdiag).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteParameter("cholesky parameters"));
    }
    Ok(covariance_from_factor(&g.cholesky_factor()))
}

/// Lower-triangular `L Lᵀ`, written out so the result is symmetric by construction.
pub fn covariance_from_factor(l: &Matrix7) -> Matrix7 {
    let mut sigma = Matrix7::zeros();
    for i in 0..DIM {
        for j in 0..=i {
            let mut acc = 0.0;
            for k in 0..=j {
                acc += l[(i, k)] * l[(j, k)];
            }
            sigma[(i, j)] = acc;
            sigma[(j, i)] = acc;
        }
    }
    sigma
}

/// Backpropagates a gradient on the entries of `Σ = L Lᵀ` to the 28 Cholesky
/// parameters. `grad_sigma` is a full-matrix gradient (entries treated as
/// independent); it need not be symmetric.
pub fn covariance_backward(g: &Gaussian7D, grad_sigma: &Matrix7) -> [f64; NUM_CHOL] {
    let l = g.cholesky_factor();
    let grad_l = (grad_sigma + grad_sigma.transpose()) * l;
    let mut out = [0.0; NUM_CHOL];
    for row in 0..DIM {
        for col in 0..row {
            out[offdiag_index(row, col)] = grad_l[(row, col)];
        }
        out[NUM_OFFDIAG + row] = grad_l[(row, row)] * l[(row, row)];
    }
    out
}

/// The position / time / direction blocks of a 7D covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceBlocks {
    pub sigma_p: Matrix3<f64>,
    pub sigma_t: f64,
    pub sigma_d: Matrix3<f64>,
    pub sigma_pt: Vector3<f64>,
    pub sigma_pd: Matrix3<f64>,
    pub sigma_td: RowVector3<f64>,
    /// `[Σ_pt Σ_pd]`
    pub sigma_p_td: Matrix3x4<f64>,
    /// `[[Σ_t, Σ_td], [Σ_tdᵀ, Σ_d]]`
    pub sigma_td_joint: Matrix4<f64>,
}

pub fn partition(sigma: &Matrix7) -> CovarianceBlocks {
    CovarianceBlocks {
        sigma_p: sigma.fixed_view::<3, 3>(0, 0).into_owned(),
        sigma_t: sigma[(3, 3)],
        sigma_d: sigma.fixed_view::<3, 3>(4, 4).into_owned(),
        sigma_pt: sigma.fixed_view::<3, 1>(0, 3).into_owned(),
        sigma_pd: sigma.fixed_view::<3, 3>(0, 4).into_owned(),
        sigma_td: sigma.fixed_view::<1, 3>(3, 4).into_owned(),
        sigma_p_td: sigma.fixed_view::<3, 4>(0, 3).into_owned(),
        sigma_td_joint: sigma.fixed_view::<4, 4>(3, 3).into_owned(),
    }
}

impl CovarianceBlocks {
    /// Rebuilds the full matrix from the primitive blocks.
    pub fn reassemble(&self) -> Matrix7 {
        let mut s = Matrix7::zeros();
        s.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.sigma_p);
        s[(3, 3)] = self.sigma_t;
        s.fixed_view_mut::<3, 3>(4, 4).copy_from(&self.sigma_d);
        s.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.sigma_pt);
        s.fixed_view_mut::<1, 3>(3, 0).copy_from(&self.sigma_pt.transpose());
        s.fixed_view_mut::<3, 3>(0, 4).copy_from(&self.sigma_pd);
        s.fixed_view_mut::<3, 3>(4, 0).copy_from(&self.sigma_pd.transpose());
        s.fixed_view_mut::<1, 3>(3, 4).copy_from(&self.sigma_td);
        s.fixed_view_mut::<3, 1>(4, 3).copy_from(&self.sigma_td.transpose());
        s
    }
}
