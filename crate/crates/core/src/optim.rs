//! Adam with externally owned moment buffers, so callers can grow, shrink
//! and reorder parameters together with their moments.

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-15 }
    }
}

impl Adam {
    /// One update of `params` in place. `step` is 1-based and drives the
    /// bias correction.
    pub fn update(&self, params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, step: u64) {
        debug_assert!(params.len() == grads.len() && m.len() == grads.len() && v.len() == grads.len());
        let bc1 = 1.0 - self.beta1.powi(step as i32);
        let bc2 = 1.0 - self.beta2.powi(step as i32);
        let step_size = lr / bc1;
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= step_size * m[i] / ((v[i] / bc2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_from_rest_changes_nothing() {
        let mut p = [1.0, -2.0, 3.0];
        let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
        Adam::default().update(&mut p, &[0.0; 3], &mut m, &mut v, 0.1, 1);
        assert_eq!(p, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = [0.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        Adam::default().update(&mut p, &[3.0], &mut m, &mut v, 0.01, 1);
        assert!((p[0] + 0.01).abs() < 1e-12);
    }

    #[test]
    fn quadratic_converges() {
        // f(x) = (x − 3)², minimum at 3
        let adam = Adam::default();
        let mut p = [-5.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        for step in 1..=5000 {
            let g = [2.0 * (p[0] - 3.0)];
            adam.update(&mut p, &g, &mut m, &mut v, 0.05, step);
        }
        assert!((p[0] - 3.0).abs() < 1e-6, "{}", p[0]);
    }
}
