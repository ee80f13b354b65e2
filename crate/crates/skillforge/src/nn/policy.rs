//! Diagonal Gaussian policy head over a dense mean network with a learned,
//! state-independent log standard deviation per action dimension.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::dense::{DenseNet, ForwardCache};
use crate::rng;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8; // 0.5 * ln(2*pi)

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussianPolicyHead {
    pub mean_net: DenseNet,
    pub log_std: Vec<f64>,
}

impl GaussianPolicyHead {
    pub fn new(mean_net: DenseNet, initial_log_std: f64) -> Self {
        let dim = mean_net.output_dim();
        GaussianPolicyHead {
            mean_net,
            log_std: vec![initial_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX); dim],
        }
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    /// Projects log_std back into its legal range. Called after optimizer
    /// steps so the clamp invariant holds without distorting gradients.
    pub fn clamp_log_std(&mut self) {
        for ls in &mut self.log_std {
            *ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    /// Deterministic (mean) action, used at evaluation and deployment time.
    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.mean_net.forward(obs)
    }

    pub fn sample(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, f64)> {
        let mean = self.mean_net.forward(obs)?;
        let mut action = Vec::with_capacity(mean.len());
        for (i, m) in mean.iter().enumerate() {
            let sigma = self.log_std[i].exp();
            action.push(m + sigma * rng::normal(rng));
        }
        let logp = log_prob_given_mean(&mean, &self.log_std, &action);
        Ok((action, logp))
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        let mean = self.mean_net.forward(obs)?;
        Ok(log_prob_given_mean(&mean, &self.log_std, action))
    }

    /// Sum of per-dimension differential entropies.
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|ls| ls + 0.5 + HALF_LN_TAU).sum()
    }

    /// Forward pass caching the mean for a later `backward_log_prob`.
    pub fn forward_cached(&self, obs: &[f64], cache: &mut ForwardCache) -> Result<()> {
        self.mean_net.forward_cached(obs, cache)
    }

    pub fn log_prob_from_cache(&self, cache: &ForwardCache, action: &[f64]) -> f64 {
        log_prob_given_mean(cache.acts.last().unwrap(), &self.log_std, action)
    }

    /// Accumulates `coef * d(log pi(a|s))/d(theta)` into the mean-net and
    /// log_std gradient buffers. Both scratch buffers are reused storage.
    ///
    /// d logp / d mean_i    = (a_i - mu_i) / sigma_i^2
    /// d logp / d log_std_i = ((a_i - mu_i)/sigma_i)^2 - 1
    #[allow(clippy::too_many_arguments)]
    pub fn backward_log_prob(
        &self,
        cache: &ForwardCache,
        action: &[f64],
        coef: f64,
        mean_grad: &mut [f64],
        log_std_grad: &mut [f64],
        scratch: &mut Vec<f64>,
        scratch2: &mut Vec<f64>,
    ) {
        let mean = cache.acts.last().unwrap();
        debug_assert!(mean.len() <= 8, "action dimension above stack buffer size");
        let mut upstream = [0.0f64; 8];
        for i in 0..mean.len() {
            let sigma = self.log_std[i].exp();
            let z = (action[i] - mean[i]) / sigma;
            upstream[i] = coef * z / sigma;
            log_std_grad[i] += coef * (z * z - 1.0);
        }
        self.mean_net
            .backward_cached(cache, &upstream[..mean.len()], mean_grad, scratch2, scratch);
    }
}

pub fn log_prob_given_mean(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    debug_assert_eq!(mean.len(), action.len());
    let mut logp = 0.0;
    for i in 0..mean.len() {
        let sigma = log_std[i].exp();
        let z = (action[i] - mean[i]) / sigma;
        logp -= 0.5 * z * z + log_std[i] + HALF_LN_TAU;
    }
    logp
}
