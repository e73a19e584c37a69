//! Photometric loss `(1 − w)·L1 + w·(1 − SSIM)` and its image gradient.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5) applied separably with zero
//! padding, so the SSIM map has the image's size; the score is the mean of
//! the map over pixels and channels.

use crate::error::{Error, Result};

pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
pub const DEFAULT_SSIM_WEIGHT: f64 = 0.2;

/// Normalized 1D Gaussian taps.
pub fn window_taps() -> [f64; WINDOW] {
    let half = (WINDOW / 2) as f64;
    let mut taps = [0.0; WINDOW];
    for (i, v) in taps.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.map(|v| v / sum)
}

/// Same-size separable filtering of one plane with zero padding. The kernel
/// is symmetric, so this map is its own adjoint.
fn blur(plane: &[f64], width: usize, height: usize, taps: &[f64; WINDOW]) -> Vec<f64> {
    let half = WINDOW / 2;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in taps.iter().enumerate() {
                let sx = x as isize + k as isize - half as isize;
                if sx >= 0 && (sx as usize) < width {
                    acc += w * row[sx as usize];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in taps.iter().enumerate() {
                let sy = y as isize + k as isize - half as isize;
                if sy >= 0 && (sy as usize) < height {
                    acc += w * tmp[sy as usize * width + x];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

fn planes(img: &[f64], width: usize, height: usize) -> [Vec<f64>; 3] {
    let n = width * height;
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        for c in 0..3 {
            out[c][i] = img[3 * i + c];
        }
    }
    out
}

fn check_sizes(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<()> {
    let n = width * height * 3;
    if a.len() != n || b.len() != n {
        return Err(Error::contract(format!("expected {n} values for {width}x{height} RGB, got {} and {}", a.len(), b.len())));
    }
    Ok(())
}

/// Mean SSIM of two interleaved RGB images and, optionally, its gradient
/// with respect to `x`.
pub fn ssim_with_grad(x: &[f64], y: &[f64], width: usize, height: usize, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    check_sizes(x, y, width, height)?;
    let taps = window_taps();
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let n = width * height;
    let total = (3 * n) as f64;
    let (px, py) = (planes(x, width, height), planes(y, width, height));
    let mut score = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; 3 * n]);
    for c in 0..3 {
        let (xs, ys) = (&px[c], &py[c]);
        let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xs.iter().zip(ys).map(|(a, b)| a * b).collect();
        let mx = blur(xs, width, height, &taps);
        let my = blur(ys, width, height, &taps);
        let mxx = blur(&xx, width, height, &taps);
        let myy = blur(&yy, width, height, &taps);
        let mxy = blur(&xy, width, height, &taps);

        let mut d_mx = vec![0.0; n];
        let mut d_mxx = vec![0.0; n];
        let mut d_mxy = vec![0.0; n];
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let sxx = mxx[i] - ux * ux;
            let syy = myy[i] - uy * uy;
            let sxy = mxy[i] - ux * uy;
            let a1 = 2.0 * ux * uy + c1;
            let a2 = 2.0 * sxy + c2;
            let b1 = ux * ux + uy * uy + c1;
            let b2 = sxx + syy + c2;
            let s = a1 * a2 / (b1 * b2);
            score += s;
            if want_grad {
                d_mx[i] = (2.0 * uy * a2 - 2.0 * uy * a1) / (b1 * b2) - s * (2.0 * ux / b1 - 2.0 * ux / b2);
                d_mxx[i] = -s / b2;
                d_mxy[i] = 2.0 * a1 / (b1 * b2);
            }
        }
        if let Some(g) = grad.as_mut() {
            let a = blur(&d_mx, width, height, &taps);
            let b = blur(&d_mxx, width, height, &taps);
            let e = blur(&d_mxy, width, height, &taps);
            for i in 0..n {
                g[3 * i + c] = (a[i] + 2.0 * xs[i] * b[i] + ys[i] * e[i]) / total;
            }
        }
    }
    Ok((score / total, grad))
}

pub fn ssim(x: &[f64], y: &[f64], width: usize, height: usize) -> Result<f64> {
    ssim_with_grad(x, y, width, height, false).map(|(s, _)| s)
}

/// Training loss and its gradient with respect to `pred`.
pub fn photometric_loss(pred: &[f64], target: &[f64], width: usize, height: usize, ssim_weight: f64) -> Result<(f64, Vec<f64>)> {
    check_sizes(pred, target, width, height)?;
    let total = pred.len() as f64;
    let mut l1 = 0.0;
    let mut grad: Vec<f64> = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            l1 += d.abs();
            (1.0 - ssim_weight) * if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 } / total
        })
        .collect();
    l1 /= total;
    if ssim_weight == 0.0 {
        return Ok((l1, grad));
    }
    let (s, gs) = ssim_with_grad(pred, target, width, height, true)?;
    for (g, d) in grad.iter_mut().zip(gs.expect("requested")) {
        *g -= ssim_weight * d;
    }
    Ok(((1.0 - ssim_weight) * l1 + ssim_weight * (1.0 - s), grad))
}
