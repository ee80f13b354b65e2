//! Adam optimizer with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update in place. Rejects non-finite gradients so a NaN never
    /// propagates silently into the parameters.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid("adam: shape mismatch"));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training("non-finite gradient in adam step".into()));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut opt = AdamState::new(3, 1e-3);
        let mut params = vec![1.0, -2.0, 0.5];
        let before = params.clone();
        opt.step(&mut params, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(params, before);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn t_increments_by_one_per_step() {
        let mut opt = AdamState::new(1, 1e-3);
        let mut p = vec![0.0];
        for expected in 1..=5 {
            opt.step(&mut p, &[0.1]).unwrap();
            assert_eq!(opt.t, expected);
        }
    }

    #[test]
    fn constant_gradient_step_approaches_lr() {
        // With a constant gradient g, m_hat -> g and v_hat -> g^2, so the
        // per-step move approaches lr * sign(g).
        let lr = 1e-2;
        let mut opt = AdamState::new(1, lr);
        let mut p = vec![0.0];
        let mut last = p[0];
        let mut step = 0.0;
        for _ in 0..5_000 {
            opt.step(&mut p, &[3.7]).unwrap();
            step = last - p[0];
            last = p[0];
        }
        assert!(
            (step - lr).abs() < 1e-5,
            "asymptotic step {step} vs lr {lr}"
        );
    }

    #[test]
    fn nan_gradient_is_a_training_error() {
        let mut opt = AdamState::new(1, 1e-3);
        let mut p = vec![0.0];
        let err = opt.step(&mut p, &[f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::Training(_)));
        assert_eq!(p, vec![0.0]);
    }
}
