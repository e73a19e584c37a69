//! View-dependent color from real spherical harmonics up to degree 3.
//!
//! Two color models exist and are never mixed: static coefficients with the
//! `+0.5`, clamp-at-zero output, and time-varying coefficients (a cosine
//! Fourier series in `t`) passed through a sigmoid.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{Gaussian7D, SH_BASIS, SH_COEFFS};

pub const C0: f64 = 0.282_094_791_773_878_14;
pub const C1: f64 = 0.488_602_511_902_919_9;
pub const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// The 16 real SH basis values at `d` (assumed unit length).
pub fn sh_basis(d: &Vector3<f64>) -> [f64; SH_BASIS] {
    let (x, y, z) = (d[0], d[1], d[2]);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        C0,
        -C1 * y,
        C1 * z,
        -C1 * x,
        C2[0] * x * y,
        C2[1] * y * z,
        C2[2] * (2.0 * zz - xx - yy),
        C2[3] * x * z,
        C2[4] * (xx - yy),
        C3[0] * y * (3.0 * xx - yy),
        C3[1] * x * y * z,
        C3[2] * y * (4.0 * zz - xx - yy),
        C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        C3[4] * x * (4.0 * zz - xx - yy),
        C3[5] * z * (xx - yy),
        C3[6] * x * (xx - 3.0 * yy),
    ]
}

/// Partial derivatives of each basis polynomial with respect to `(x, y, z)`.
pub fn sh_basis_grad(d: &Vector3<f64>) -> [[f64; 3]; SH_BASIS] {
    let (x, y, z) = (d[0], d[1], d[2]);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        [0.0, 0.0, 0.0],
        [0.0, -C1, 0.0],
        [0.0, 0.0, C1],
        [-C1, 0.0, 0.0],
        [C2[0] * y, C2[0] * x, 0.0],
        [0.0, C2[1] * z, C2[1] * y],
        [-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z],
        [C2[3] * z, 0.0, C2[3] * x],
        [2.0 * C2[4] * x, -2.0 * C2[4] * y, 0.0],
        [6.0 * C3[0] * x * y, C3[0] * (3.0 * xx - 3.0 * yy), 0.0],
        [C3[1] * y * z, C3[1] * x * z, C3[1] * x * y],
        [-2.0 * C3[2] * x * y, C3[2] * (4.0 * zz - xx - 3.0 * yy), 8.0 * C3[2] * y * z],
        [-6.0 * C3[3] * x * z, -6.0 * C3[3] * y * z, C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)],
        [C3[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * C3[4] * x * y, 8.0 * C3[4] * x * z],
        [2.0 * C3[5] * x * z, -2.0 * C3[5] * y * z, C3[5] * (xx - yy)],
        [C3[6] * (3.0 * xx - 3.0 * yy), -6.0 * C3[6] * x * y, 0.0],
    ]
}

fn check_unit(d: &Vector3<f64>) -> Result<()> {
    if (d.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::contract("view direction must be unit length"));
    }
    Ok(())
}

/// Static color: `max(Σ β Y + 0.5, 0)` per channel.
pub fn eval_sh(sh: &[f64; SH_COEFFS], d: &Vector3<f64>) -> Result<[f64; 3]> {
    check_unit(d)?;
    let basis = sh_basis(d);
    let mut rgb = [0.5; 3];
    for (k, y) in basis.iter().enumerate() {
        for (c, out) in rgb.iter_mut().enumerate() {
            *out += sh[k * 3 + c] * y;
        }
    }
    Ok(rgb.map(|v| v.max(0.0)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FourierShConfig {
    /// Number of cosine terms, `N + 1`.
    pub terms: usize,
    pub period: f64,
}

impl Default for FourierShConfig {
    fn default() -> Self {
        Self { terms: 4, period: 1.0 }
    }
}

impl FourierShConfig {
    pub fn validate(&self) -> Result<()> {
        if self.terms == 0 {
            return Err(Error::config("fourier.terms", "must be at least 1"));
        }
        if !(self.period > 0.0) {
            return Err(Error::config("fourier.period", "must be positive"));
        }
        Ok(())
    }

    pub fn weights_len(&self) -> usize {
        SH_COEFFS * self.terms
    }

    fn cosines(&self, t: f64) -> Vec<f64> {
        (0..self.terms)
            .map(|n| (2.0 * std::f64::consts::PI * n as f64 * t / self.period).cos())
            .collect()
    }

    /// `β(t) = Σₙ wₙ cos(2πnt/T)` for all 48 coefficients.
    pub fn coefficients(&self, weights: &[f64], t: f64) -> [f64; SH_COEFFS] {
        let cos = self.cosines(t);
        let mut beta = [0.0; SH_COEFFS];
        for (i, b) in beta.iter_mut().enumerate() {
            *b = weights[i * self.terms..(i + 1) * self.terms].iter().zip(&cos).map(|(w, c)| w * c).sum();
        }
        beta
    }
}

/// Time-varying color: `sigmoid(Σ β(t) Y)` per channel.
pub fn eval_sh_time(cfg: &FourierShConfig, weights: &[f64], d: &Vector3<f64>, t: f64) -> Result<[f64; 3]> {
    check_unit(d)?;
    if weights.len() != cfg.weights_len() {
        return Err(Error::contract("fourier weight count does not match the config"));
    }
    let beta = cfg.coefficients(weights, t);
    let basis = sh_basis(d);
    let mut rgb = [0.0; 3];
    for (k, y) in basis.iter().enumerate() {
        for (c, out) in rgb.iter_mut().enumerate() {
            *out += beta[k * 3 + c] * y;
        }
    }
    Ok(rgb.map(crate::gaussian::sigmoid))
}

/// Which color model the renderer uses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ShadingMode {
    #[default]
    Static,
    Fourier(FourierShConfig),
}

impl ShadingMode {
    pub fn fourier_len(&self) -> usize {
        match self {
            ShadingMode::Static => 0,
            ShadingMode::Fourier(cfg) => cfg.weights_len(),
        }
    }
}

pub(crate) struct ShadeTape {
    basis: [f64; SH_BASIS],
    beta: [f64; SH_COEFFS],
    cosines: Vec<f64>,
    rgb: [f64; 3],
    active: [bool; 3],
}

/// Color of `g` seen along `d` at time `t`, with intermediates for the
/// backward pass. `d` must be unit length (checked by the public evaluators).
pub(crate) fn shade(g: &Gaussian7D, mode: &ShadingMode, d: &Vector3<f64>, t: f64) -> ([f64; 3], ShadeTape) {
    let basis = sh_basis(d);
    let (beta, cosines) = match mode {
        ShadingMode::Static => (g.sh, Vec::new()),
        ShadingMode::Fourier(cfg) => (cfg.coefficients(&g.sh_fourier, t), cfg.cosines(t)),
    };
    let mut pre = [0.0; 3];
    for (k, y) in basis.iter().enumerate() {
        for (c, out) in pre.iter_mut().enumerate() {
            *out += beta[k * 3 + c] * y;
        }
    }
    let (rgb, active) = match mode {
        ShadingMode::Static => (pre.map(|v| (v + 0.5).max(0.0)), pre.map(|v| v + 0.5 > 0.0)),
        ShadingMode::Fourier(_) => (pre.map(crate::gaussian::sigmoid), [true; 3]),
    };
    (rgb, ShadeTape { basis, beta, cosines, rgb, active })
}

/// Adds color-coefficient gradients into `grad` and returns the gradient
/// with respect to the (unnormalized-polynomial) direction.
pub(crate) fn shade_backward(
    mode: &ShadingMode,
    tape: &ShadeTape,
    d: &Vector3<f64>,
    grad_rgb: &[f64; 3],
    grad: &mut Gaussian7D,
) -> Vector3<f64> {
    let mut grad_pre = [0.0; 3];
    for c in 0..3 {
        if !tape.active[c] {
            continue;
        }
        grad_pre[c] = match mode {
            ShadingMode::Static => grad_rgb[c],
            ShadingMode::Fourier(_) => grad_rgb[c] * tape.rgb[c] * (1.0 - tape.rgb[c]),
        };
    }
    let mut grad_basis = [0.0; SH_BASIS];
    for k in 0..SH_BASIS {
        for c in 0..3 {
            let i = k * 3 + c;
            grad_basis[k] += grad_pre[c] * tape.beta[i];
            let g_beta = grad_pre[c] * tape.basis[k];
            match mode {
                ShadingMode::Static => grad.sh[i] += g_beta,
                ShadingMode::Fourier(cfg) => {
                    for (n, cosv) in tape.cosines.iter().enumerate() {
                        grad.sh_fourier[i * cfg.terms + n] += g_beta * cosv;
                    }
                }
            }
        }
    }
    let dy = sh_basis_grad(d);
    let mut gd = Vector3::zeros();
    for k in 1..SH_BASIS {
        for a in 0..3 {
            gd[a] += grad_basis[k] * dy[k][a];
        }
    }
    gd
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Real SH from the spherical-coordinate table, same sign convention
    /// (`Y_{1,-1} ∝ -y`, `Y_{1,1} ∝ -x`).
    fn table(theta: f64, phi: f64) -> [f64; 16] {
        let (st, ct) = theta.sin_cos();
        let s2 = 2f64.sqrt();
        let k = |l: i32, m: i32| {
            let m = m.unsigned_abs() as i32;
            let fact = |n: i32| (1..=n).map(|v| v as f64).product::<f64>();
            (((2 * l + 1) as f64) / (4.0 * PI) * fact(l - m) / fact(l + m)).sqrt()
        };
        // associated Legendre without Condon–Shortley phase
        let p = |l: i32, m: i32| -> f64 {
            match (l, m) {
                (0, 0) => 1.0,
                (1, 0) => ct,
                (1, 1) => st,
                (2, 0) => 0.5 * (3.0 * ct * ct - 1.0),
                (2, 1) => 3.0 * st * ct,
                (2, 2) => 3.0 * st * st,
                (3, 0) => 0.5 * (5.0 * ct * ct * ct - 3.0 * ct),
                (3, 1) => 1.5 * st * (5.0 * ct * ct - 1.0),
                (3, 2) => 15.0 * st * st * ct,
                (3, 3) => 15.0 * st * st * st,
                _ => unreachable!(),
            }
        };
        let mut out = [0.0; 16];
        let mut i = 0;
        for l in 0..=3 {
            for m in -l..=l {
                let y = if m == 0 {
                    k(l, 0) * p(l, 0)
                } else if m > 0 {
                    s2 * k(l, m) * p(l, m) * (m as f64 * phi).cos()
                } else {
                    s2 * k(l, m) * p(l, -m) * ((-m) as f64 * phi).sin()
                };
                // odd-m entries carry the sign flip of the Condon–Shortley phase
                out[i] = if m % 2 != 0 { -y } else { y };
                i += 1;
            }
        }
        out
    }

    #[test]
    fn basis_matches_spherical_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let theta = rng.random_range(0.0..PI);
            let phi = rng.random_range(0.0..2.0 * PI);
            let d = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            let a = sh_basis(&d);
            let b = table(theta, phi);
            for k in 0..16 {
                assert!((a[k] - b[k]).abs() < 1e-12, "basis {k}: {} vs {}", a[k], b[k]);
            }
        }
    }

    #[test]
    fn random_coefficients_along_z() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sh = [0.0; 48];
        for v in sh.iter_mut() {
            *v = rng.random_range(-0.2..0.2);
        }
        let d = Vector3::new(0.0, 0.0, 1.0);
        let rgb = eval_sh(&sh, &d).unwrap();
        let tab = table(0.0, 0.0);
        for c in 0..3 {
            let expected: f64 = (0..16).map(|k| sh[k * 3 + c] * tab[k]).sum::<f64>() + 0.5;
            assert!((rgb[c] - expected.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn dc_only() {
        let mut sh = [0.0; 48];
        let d = Vector3::new(0.6, 0.0, 0.8);
        assert_eq!(eval_sh(&sh, &d).unwrap(), [0.5; 3]);
        for c in 0..3 {
            sh[c] = 0.5 / C0;
        }
        let rgb = eval_sh(&sh, &d).unwrap();
        assert!(rgb.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn odd_degree_one_symmetry() {
        let mut sh = [0.0; 48];
        sh[2 * 3] = 0.3; // Y_{1,0} ∝ z, red channel
        let up = eval_sh(&sh, &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let down = eval_sh(&sh, &Vector3::new(0.0, 0.0, -1.0)).unwrap();
        assert!(up[0] - down[0] > 0.0);
        sh[2 * 3] = -0.3;
        let up = eval_sh(&sh, &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let down = eval_sh(&sh, &Vector3::new(0.0, 0.0, -1.0)).unwrap();
        assert!(up[0] - down[0] < 0.0);
    }

    #[test]
    fn non_unit_direction_rejected() {
        assert!(matches!(eval_sh(&[0.0; 48], &Vector3::new(0.0, 0.0, 2.0)), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn fourier_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = Vector3::new(0.0, 0.6, 0.8);

        let one = FourierShConfig { terms: 1, period: 1.0 };
        let w: Vec<f64> = (0..48).map(|_| rng.random_range(-0.3..0.3)).collect();
        let a = eval_sh_time(&one, &w, &d, 0.1).unwrap();
        let b = eval_sh_time(&one, &w, &d, 0.8).unwrap();
        assert_eq!(a, b);
        // N = 0 agrees with sigmoid of the static sum (which adds 0.5, so subtract it)
        let mut sh = [0.0; 48];
        sh.copy_from_slice(&w);
        let stat = eval_sh(&sh, &d).unwrap();
        for c in 0..3 {
            if stat[c] > 0.0 {
                assert!((a[c] - crate::gaussian::sigmoid(stat[c] - 0.5)).abs() < 1e-14);
            }
        }

        let cfg = FourierShConfig { terms: 4, period: 2.0 };
        let w: Vec<f64> = (0..cfg.weights_len()).map(|_| rng.random_range(-0.3..0.3)).collect();
        let beta0 = cfg.coefficients(&w, 0.0);
        for i in 0..48 {
            let s: f64 = w[i * 4..i * 4 + 4].iter().sum();
            assert!((beta0[i] - s).abs() < 1e-15);
        }
        let mut only1 = vec![0.0; cfg.weights_len()];
        for i in 0..48 {
            only1[i * 4 + 1] = w[i * 4 + 1];
        }
        let half = cfg.coefficients(&only1, cfg.period / 2.0);
        for i in 0..48 {
            assert!((half[i] + w[i * 4 + 1]).abs() < 1e-15);
        }
        let p0 = cfg.coefficients(&w, 0.3);
        let p1 = cfg.coefficients(&w, 0.3 + cfg.period);
        for i in 0..48 {
            assert!((p0[i] - p1[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn orthonormality_by_quadrature() {
        // Fibonacci lattice: 10⁴ equal-area points on the sphere
        let n = 10_000;
        let golden = PI * (3.0 - 5f64.sqrt());
        let mut gram = [[0.0f64; 16]; 16];
        for i in 0..n {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let y = sh_basis(&Vector3::new(r * phi.cos(), r * phi.sin(), z));
            for a in 0..16 {
                for b in 0..16 {
                    gram[a][b] += y[a] * y[b];
                }
            }
        }
        let scale = 4.0 * PI / n as f64;
        for a in 0..16 {
            for b in 0..16 {
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((gram[a][b] * scale - expected).abs() < 0.02, "({a},{b}) = {}", gram[a][b] * scale);
            }
        }
    }

    #[test]
    fn basis_gradient_matches_finite_differences() {
        let d = Vector3::new(0.3, -0.5, 0.7);
        let g = sh_basis_grad(&d);
        let h = 1e-6;
        for a in 0..3 {
            let mut p = d;
            p[a] += h;
            let mut m = d;
            m[a] -= h;
            let (yp, ym) = (sh_basis(&p), sh_basis(&m));
            for k in 0..16 {
                let num = (yp[k] - ym[k]) / (2.0 * h);
                assert!((num - g[k][a]).abs() < 1e-8, "basis {k} axis {a}");
            }
        }
    }
}
