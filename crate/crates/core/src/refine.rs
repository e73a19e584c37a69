//! Time-conditioned residual refinement of Gaussian parameters.
//!
//! Each Gaussian gets a feature `μ_p ⊕ μ_t ⊕ μ_d ⊕ γ(t)` where `γ` is a
//! sin/cos encoding at frequencies `2ᵏπ`. Four independent two-layer
//! perceptrons map the feature to residuals for position, time mean,
//! direction mean and the 28 Cholesky parameters.

use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::{Gaussian7D, NUM_CHOL, NUM_OFFDIAG};

pub const DEFAULT_FREQUENCIES: usize = 10;
pub const HIDDEN_WIDTH: usize = 64;

/// `γ(t)`: `out[2k] = sin(2ᵏπt)`, `out[2k+1] = cos(2ᵏπt)`.
pub fn encode_time(t: f64, num_frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * num_frequencies);
    let mut freq = std::f64::consts::PI;
    for _ in 0..num_frequencies {
        let (s, c) = (freq * t).sin_cos();
        out.push(s);
        out.push(c);
        freq *= 2.0;
    }
    out
}

pub fn feature_len(num_frequencies: usize) -> usize {
    7 + 2 * num_frequencies
}

/// `μ_p ⊕ μ_t ⊕ μ_d ⊕ γ(t)`.
pub fn build_feature(g: &Gaussian7D, t: f64, num_frequencies: usize) -> Vec<f64> {
    let mut f = Vec::with_capacity(feature_len(num_frequencies));
    f.extend_from_slice(&g.mu_p);
    f.push(g.mu_t);
    f.extend_from_slice(&g.mu_d);
    f.extend(encode_time(t, num_frequencies));
    f
}

/// Two-layer perceptron, ReLU hidden layer, linear output.
///
/// Parameters are one flat array: `w1` (hidden × input, row-major), `b1`,
/// `w2` (output × hidden, row-major), `b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn zeros(inputs: usize, hidden: usize, outputs: usize) -> Self {
        Self { inputs, hidden, outputs, params: vec![0.0; Self::param_count(inputs, hidden, outputs)] }
    }

    pub fn param_count(inputs: usize, hidden: usize, outputs: usize) -> usize {
        hidden * inputs + hidden + outputs * hidden + outputs
    }

    /// Hidden layer uniform in `±1/√inputs`; output layer zero.
    pub fn init<R: Rng>(inputs: usize, hidden: usize, outputs: usize, rng: &mut R) -> Self {
        let mut mlp = Self::zeros(inputs, hidden, outputs);
        let bound = 1.0 / (inputs as f64).sqrt();
        let first = hidden * inputs + hidden;
        for p in &mut mlp.params[..first] {
            *p = rng.random_range(-bound..bound);
        }
        mlp
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.inputs;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.outputs * self.hidden;
        (b1, w2, b2)
    }

    /// Returns `(hidden activations, output)`.
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(x.len(), self.inputs);
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &p[j * self.inputs..(j + 1) * self.inputs];
                let z = p[b1 + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                z.max(0.0)
            })
            .collect();
        let out = (0..self.outputs)
            .map(|k| {
                let row = &p[w2 + k * self.hidden..w2 + (k + 1) * self.hidden];
                p[b2 + k] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
            })
            .collect();
        (hidden, out)
    }

    /// Accumulates parameter gradients into `grad_params` and returns the
    /// input gradient.
    pub fn backward(&self, x: &[f64], hidden: &[f64], grad_out: &[f64], grad_params: &mut [f64]) -> Vec<f64> {
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        let mut grad_hidden = vec![0.0; self.hidden];
        for (k, &go) in grad_out.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            grad_params[b2 + k] += go;
            let base = w2 + k * self.hidden;
            for j in 0..self.hidden {
                grad_params[base + j] += go * hidden[j];
                grad_hidden[j] += go * p[base + j];
            }
        }
        let mut grad_x = vec![0.0; self.inputs];
        for j in 0..self.hidden {
            // ReLU mask: inactive units pass nothing back
            if hidden[j] <= 0.0 || grad_hidden[j] == 0.0 {
                continue;
            }
            let gz = grad_hidden[j];
            grad_params[b1 + j] += gz;
            let base = j * self.inputs;
            for i in 0..self.inputs {
                grad_params[base + i] += gz * x[i];
                grad_x[i] += gz * p[base + i];
            }
        }
        grad_x
    }
}

/// The four residual heads.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpRefiner {
    pub num_frequencies: usize,
    pub position: Mlp,
    pub time: Mlp,
    pub direction: Mlp,
    pub covariance: Mlp,
}

pub const HEAD_OUTPUTS: [usize; 4] = [3, 1, 3, NUM_CHOL];

impl MlpRefiner {
    pub fn zeros(num_frequencies: usize) -> Self {
        let n = feature_len(num_frequencies);
        Self {
            num_frequencies,
            position: Mlp::zeros(n, HIDDEN_WIDTH, 3),
            time: Mlp::zeros(n, HIDDEN_WIDTH, 1),
            direction: Mlp::zeros(n, HIDDEN_WIDTH, 3),
            covariance: Mlp::zeros(n, HIDDEN_WIDTH, NUM_CHOL),
        }
    }

    pub fn init<R: Rng>(num_frequencies: usize, rng: &mut R) -> Self {
        let n = feature_len(num_frequencies);
        Self {
            num_frequencies,
            position: Mlp::init(n, HIDDEN_WIDTH, 3, rng),
            time: Mlp::init(n, HIDDEN_WIDTH, 1, rng),
            direction: Mlp::init(n, HIDDEN_WIDTH, 3, rng),
            covariance: Mlp::init(n, HIDDEN_WIDTH, NUM_CHOL, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Mlp| Mlp::zeros(m.inputs, m.hidden, m.outputs);
        Self {
            num_frequencies: self.num_frequencies,
            position: z(&self.position),
            time: z(&self.time),
            direction: z(&self.direction),
            covariance: z(&self.covariance),
        }
    }

    pub fn heads(&self) -> [&Mlp; 4] {
        [&self.position, &self.time, &self.direction, &self.covariance]
    }

    pub fn heads_mut(&mut self) -> [&mut Mlp; 4] {
        [&mut self.position, &mut self.time, &mut self.direction, &mut self.covariance]
    }

    pub fn num_params(&self) -> usize {
        self.heads().iter().map(|h| h.params.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = feature_len(self.num_frequencies);
        for (head, outputs) in self.heads().iter().zip(HEAD_OUTPUTS) {
            if head.inputs != n
                || head.outputs != outputs
                || head.params.len() != Mlp::param_count(head.inputs, head.hidden, head.outputs)
            {
                return Err(Error::contract("refiner head shape does not match the feature encoding"));
            }
        }
        Ok(())
    }

    pub fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.heads_mut().into_iter().zip(other.heads()) {
            for (x, y) in a.params.iter_mut().zip(&b.params) {
                *x += y;
            }
        }
    }
}

/// Activations kept for [`refine_backward`].
#[derive(Clone, Debug)]
pub struct RefineTape {
    feature: Vec<f64>,
    hidden: [Vec<f64>; 4],
}

/// Applies the residual heads.
///
/// Diagonal Cholesky residuals land on the log-diagonal parameters, so the
/// refined factor keeps a positive diagonal. Opacity and color pass through.
pub fn refine(g: &Gaussian7D, t: f64, nets: &MlpRefiner) -> Result<Gaussian7D> {
    refine_taped(g, t, nets).map(|(r, _)| r)
}

pub fn refine_taped(g: &Gaussian7D, t: f64, nets: &MlpRefiner) -> Result<(Gaussian7D, RefineTape)> {
    nets.validate()?;
    let feature = build_feature(g, t, nets.num_frequencies);
    let (h_p, r_p) = nets.position.forward(&feature);
    let (h_t, r_t) = nets.time.forward(&feature);
    let (h_d, r_d) = nets.direction.forward(&feature);
    let (h_l, r_l) = nets.covariance.forward(&feature);
    let mut out = g.clone();
    for i in 0..3 {
        out.mu_p[i] += r_p[i];
        out.mu_d[i] += r_d[i];
    }
    out.mu_t += r_t[0];
    out.add_chol_params(&r_l);
    Ok((out, RefineTape { feature, hidden: [h_p, h_t, h_d, h_l] }))
}

/// Reverse pass of [`refine`].
///
/// `upstream` holds gradients with respect to the refined Gaussian. Returns
/// the gradient with respect to the input Gaussian and adds network
/// parameter gradients into `grad_nets`.
pub fn refine_backward(
    tape: &RefineTape,
    nets: &MlpRefiner,
    upstream: &Gaussian7D,
    grad_nets: &mut MlpRefiner,
) -> Gaussian7D {
    // residuals are additive, so every refined parameter passes straight through
    let mut grad = upstream.clone();
    let head_grads: [Vec<f64>; 4] = [
        upstream.mu_p.to_vec(),
        vec![upstream.mu_t],
        upstream.mu_d.to_vec(),
        upstream.chol_params().to_vec(),
    ];
    let mut grad_feature = vec![0.0; tape.feature.len()];
    for (k, (head, gh)) in nets.heads().into_iter().zip(grad_nets.heads_mut()).enumerate() {
        if head_grads[k].iter().all(|v| *v == 0.0) {
            continue;
        }
        let gx = head.backward(&tape.feature, &tape.hidden[k], &head_grads[k], &mut gh.params);
        for (a, b) in grad_feature.iter_mut().zip(&gx) {
            *a += b;
        }
    }
    for i in 0..3 {
        grad.mu_p[i] += grad_feature[i];
        grad.mu_d[i] += grad_feature[4 + i];
    }
    grad.mu_t += grad_feature[3];
    debug_assert_eq!(NUM_OFFDIAG + 7, NUM_CHOL);
    grad
}
