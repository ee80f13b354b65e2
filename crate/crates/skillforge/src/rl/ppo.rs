//! Clipped-surrogate PPO update with an asymmetric critic.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::dense::BatchCache;
use crate::parallel;
use crate::rl::{PolicyOptimizers, PolicyPair};

const GRAD_CHUNK: usize = 256;
const ADV_STD_GUARD: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    /// Steps collected per environment per epoch.
    pub horizon: usize,
    pub lr: f64,
    pub gamma: f64,
    pub lam: f64,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub critic_coef: f64,
    pub minibatch_epochs: usize,
    pub n_envs: usize,
    pub minibatch_size: usize,
    pub total_epochs: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            horizon: 32,
            lr: 1e-4,
            gamma: 0.99,
            lam: 0.95,
            clip_eps: 0.2,
            entropy_coef: 0.0,
            critic_coef: 2.0,
            minibatch_epochs: 8,
            n_envs: 64,
            minibatch_size: 1024,
            total_epochs: 150,
        }
    }
}

/// One sample of the flattened PPO batch.
#[derive(Clone, Debug)]
pub struct FlatSample {
    pub actor_obs: Vec<f64>,
    pub critic_obs: Vec<f64>,
    pub action: [f64; 3],
    pub old_log_prob: f64,
    pub advantage: f64,
    pub return_target: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PpoLosses {
    /// Mean negative clipped surrogate.
    pub policy: f64,
    /// Mean squared critic error (before the critic coefficient).
    pub value: f64,
    pub entropy: f64,
}

/// Clipped surrogate for one sample: returns the surrogate value and the
/// gradient of the surrogate with respect to the log-probability.
#[inline]
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage;
    if unclipped <= clipped {
        // d(ratio * A)/d(logp) = ratio * A
        (unclipped, ratio * advantage)
    } else {
        (clipped, 0.0)
    }
}

struct PpoPartial {
    policy_loss: f64,
    value_loss: f64,
    mean_grad: Vec<f64>,
    log_std_grad: Vec<f64>,
    critic_grad: Vec<f64>,
    actor_in: Vec<f64>,
    critic_in: Vec<f64>,
    actor_upstream: Vec<f64>,
    critic_upstream: Vec<f64>,
    actor_cache: BatchCache,
    critic_cache: BatchCache,
    scratch: Vec<f64>,
    input_grad: Vec<f64>,
}

impl PpoPartial {
    fn new(policy: &PolicyPair) -> Self {
        PpoPartial {
            policy_loss: 0.0,
            value_loss: 0.0,
            mean_grad: vec![0.0; policy.actor.mean_net.param_count()],
            log_std_grad: vec![0.0; policy.actor.log_std.len()],
            critic_grad: vec![0.0; policy.critic.param_count()],
            actor_in: Vec::new(),
            critic_in: Vec::new(),
            actor_upstream: Vec::new(),
            critic_upstream: Vec::new(),
            actor_cache: BatchCache::default(),
            critic_cache: BatchCache::default(),
            scratch: Vec::new(),
            input_grad: Vec::new(),
        }
    }

    fn reset(&mut self) {
        self.policy_loss = 0.0;
        self.value_loss = 0.0;
        self.mean_grad.iter_mut().for_each(|g| *g = 0.0);
        self.log_std_grad.iter_mut().for_each(|g| *g = 0.0);
        self.critic_grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Runs `minibatch_epochs` passes of shuffled minibatch updates over the
/// batch. Advantages are normalized batch-wide beforehand (skipped when
/// their std collapses). Returns the mean losses over all minibatches.
pub fn ppo_update(
    policy: &mut PolicyPair,
    opts: &mut PolicyOptimizers,
    samples: &mut [FlatSample],
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PpoLosses> {
    let n = samples.len();
    assert!(n > 0, "ppo_update on an empty batch");

    // Batch-wide advantage normalization with a degenerate-std guard.
    let mean: f64 = samples.iter().map(|s| s.advantage).sum::<f64>() / n as f64;
    let var: f64 = samples
        .iter()
        .map(|s| (s.advantage - mean) * (s.advantage - mean))
        .sum::<f64>()
        / n as f64;
    let std = var.sqrt();
    if std > ADV_STD_GUARD {
        for s in samples.iter_mut() {
            s.advantage = (s.advantage - mean) / std;
        }
    }

    let mut indices: Vec<usize> = (0..n).collect();
    let mut total = PpoLosses::default();
    let mut minibatches = 0usize;
    let act_dim = policy.actor.log_std.len();

    // Gradient partials and batch workspaces, one per fixed chunk, reused
    // across every minibatch step.
    let n_chunks = parallel::chunk_ranges(cfg.minibatch_size.min(n), GRAD_CHUNK).len();
    let mut partials: Vec<PpoPartial> = (0..n_chunks).map(|_| PpoPartial::new(policy)).collect();
    let mut mean_grad = vec![0.0; policy.actor.mean_net.param_count()];
    let mut log_std_grad = vec![0.0; act_dim];
    let mut critic_grad = vec![0.0; policy.critic.param_count()];

    for _ in 0..cfg.minibatch_epochs {
        indices.shuffle(rng);
        for mb in indices.chunks(cfg.minibatch_size) {
            let mb_n = mb.len() as f64;
            let ranges = parallel::chunk_ranges(mb.len(), GRAD_CHUNK);
            let used = ranges.len();
            ranges
                .into_par_iter()
                .zip(partials.par_iter_mut())
                .for_each(|(range, p)| {
                    let bsz = range.len();
                    p.reset();
                    p.actor_in.clear();
                    p.critic_in.clear();
                    for k in range.clone() {
                        let s = &samples[mb[k]];
                        p.actor_in.extend_from_slice(&s.actor_obs);
                        p.critic_in.extend_from_slice(&s.critic_obs);
                    }
                    policy
                        .actor
                        .mean_net
                        .forward_batch(&p.actor_in, bsz, &mut p.actor_cache);
                    p.actor_upstream.clear();
                    p.actor_upstream.resize(bsz * act_dim, 0.0);
                    {
                        let means = p.actor_cache.output();
                        for (row, k) in range.clone().enumerate() {
                            let s = &samples[mb[k]];
                            let mean = &means[row * act_dim..(row + 1) * act_dim];
                            let logp = crate::nn::policy::log_prob_given_mean(
                                mean,
                                &policy.actor.log_std,
                                &s.action,
                            );
                            let ratio = (logp - s.old_log_prob).exp();
                            let (surrogate, dsur_dlogp) =
                                clipped_surrogate(ratio, s.advantage, cfg.clip_eps);
                            p.policy_loss -= surrogate / mb_n;
                            if dsur_dlogp != 0.0 {
                                let coef = -dsur_dlogp / mb_n;
                                for i in 0..act_dim {
                                    let sigma = policy.actor.log_std[i].exp();
                                    let z = (s.action[i] - mean[i]) / sigma;
                                    p.actor_upstream[row * act_dim + i] = coef * z / sigma;
                                    p.log_std_grad[i] += coef * (z * z - 1.0);
                                }
                            }
                        }
                    }
                    let (cache, upstream) = (&p.actor_cache, &p.actor_upstream);
                    policy.actor.mean_net.backward_batch(
                        cache,
                        bsz,
                        upstream,
                        &mut p.mean_grad,
                        &mut p.input_grad,
                        &mut p.scratch,
                    );

                    policy
                        .critic
                        .forward_batch(&p.critic_in, bsz, &mut p.critic_cache);
                    p.critic_upstream.clear();
                    p.critic_upstream.resize(bsz, 0.0);
                    {
                        let values = p.critic_cache.output();
                        for (row, k) in range.enumerate() {
                            let s = &samples[mb[k]];
                            let err = values[row] - s.return_target;
                            p.value_loss += err * err / mb_n;
                            p.critic_upstream[row] = cfg.critic_coef * 2.0 * err / mb_n;
                        }
                    }
                    let (cache, upstream) = (&p.critic_cache, &p.critic_upstream);
                    policy.critic.backward_batch(
                        cache,
                        bsz,
                        upstream,
                        &mut p.critic_grad,
                        &mut p.input_grad,
                        &mut p.scratch,
                    );
                });

            mean_grad.iter_mut().for_each(|g| *g = 0.0);
            log_std_grad.iter_mut().for_each(|g| *g = 0.0);
            critic_grad.iter_mut().for_each(|g| *g = 0.0);
            let mut policy_loss = 0.0;
            let mut value_loss = 0.0;
            for p in &partials[..used] {
                policy_loss += p.policy_loss;
                value_loss += p.value_loss;
                parallel::fold_grads(&mut mean_grad, std::slice::from_ref(&p.mean_grad));
                parallel::fold_grads(&mut log_std_grad, std::slice::from_ref(&p.log_std_grad));
                parallel::fold_grads(&mut critic_grad, std::slice::from_ref(&p.critic_grad));
            }
            // Entropy bonus: the Gaussian entropy depends only on log_std.
            let entropy = policy.actor.entropy();
            if cfg.entropy_coef != 0.0 {
                for g in log_std_grad.iter_mut() {
                    *g -= cfg.entropy_coef;
                }
            }
            opts.mean
                .step(&mut policy.actor.mean_net.params, &mean_grad)?;
            opts.log_std
                .step(&mut policy.actor.log_std, &log_std_grad)?;
            policy.actor.clamp_log_std();
            opts.critic.step(&mut policy.critic.params, &critic_grad)?;

            total.policy += policy_loss;
            total.value += value_loss;
            total.entropy += entropy;
            minibatches += 1;
        }
    }
    let inv = 1.0 / minibatches.max(1) as f64;
    Ok(PpoLosses {
        policy: total.policy * inv,
        value: total.value * inv,
        entropy: total.entropy * inv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn surrogate_hand_cases() {
        // Ratio 1.5, A = 1, eps = 0.2: min(1.5, 1.2) = 1.2, clipped branch,
        // zero gradient.
        let (val, grad) = clipped_surrogate(1.5, 1.0, 0.2);
        assert_eq!(val, 1.2);
        assert_eq!(grad, 0.0);
        // Inside the clip region the surrogate is ratio * A.
        let (val, grad) = clipped_surrogate(1.1, 2.0, 0.2);
        assert_eq!(val, 2.2);
        assert_eq!(grad, 2.2);
        let (val, grad) = clipped_surrogate(0.9, -1.0, 0.2);
        assert_eq!(val, -0.9);
        assert_eq!(grad, -0.9);
        // Pessimistic branch for negative advantage and large ratio.
        let (val, grad) = clipped_surrogate(1.5, -1.0, 0.2);
        assert_eq!(val, -1.5);
        assert_eq!(grad, -1.5);
        // Positive advantage, low ratio: unclipped selected.
        let (val, grad) = clipped_surrogate(0.5, 1.0, 0.2);
        assert_eq!(val, 0.5);
        assert_eq!(grad, 0.5);
    }

    fn toy_batch(n: usize, seed: u64) -> Vec<FlatSample> {
        let mut rng = rng_from(seed);
        (0..n)
            .map(|_| FlatSample {
                actor_obs: (0..9)
                    .map(|_| crate::rng::uniform(&mut rng, -1.0, 1.0))
                    .collect(),
                critic_obs: (0..14)
                    .map(|_| crate::rng::uniform(&mut rng, -1.0, 1.0))
                    .collect(),
                action: [
                    crate::rng::uniform(&mut rng, -0.05, 0.05),
                    crate::rng::uniform(&mut rng, -0.05, 0.05),
                    crate::rng::uniform(&mut rng, -0.05, 0.05),
                ],
                old_log_prob: 0.0,
                advantage: crate::rng::uniform(&mut rng, -1.0, 1.0),
                return_target: crate::rng::uniform(&mut rng, -1.0, 1.0),
            })
            .collect()
    }

    #[test]
    fn zero_advantages_give_zero_policy_loss_and_unchanged_actor() {
        let mut policy = PolicyPair::new(1);
        let before = policy.actor.mean_net.params.clone();
        let cfg = PpoConfig {
            minibatch_epochs: 2,
            minibatch_size: 16,
            ..PpoConfig::default()
        };
        let mut opts = PolicyOptimizers::new(&policy, cfg.lr);
        let mut batch = toy_batch(32, 2);
        for s in &mut batch {
            s.advantage = 0.0;
            s.old_log_prob = policy.actor.log_prob(&s.actor_obs, &s.action).unwrap();
        }
        let losses =
            ppo_update(&mut policy, &mut opts, &mut batch, &cfg, &mut rng_from(3)).unwrap();
        assert_eq!(losses.policy, 0.0);
        // All-zero advantages survive the normalization guard and produce
        // no actor movement (the critic still trains).
        assert_eq!(policy.actor.mean_net.params, before);
    }

    #[test]
    fn update_reduces_critic_error_and_stays_finite() {
        let mut policy = PolicyPair::new(4);
        let cfg = PpoConfig {
            minibatch_epochs: 4,
            minibatch_size: 32,
            ..PpoConfig::default()
        };
        let mut opts = PolicyOptimizers::new(&policy, 1e-3);
        let mut batch = toy_batch(64, 5);
        for s in &mut batch {
            s.old_log_prob = policy.actor.log_prob(&s.actor_obs, &s.action).unwrap();
        }
        let first = ppo_update(
            &mut policy,
            &mut opts,
            &mut batch.clone(),
            &cfg,
            &mut rng_from(6),
        )
        .unwrap();
        for _ in 0..30 {
            ppo_update(
                &mut policy,
                &mut opts,
                &mut batch.clone(),
                &cfg,
                &mut rng_from(6),
            )
            .unwrap();
        }
        let last = ppo_update(
            &mut policy,
            &mut opts,
            &mut batch.clone(),
            &cfg,
            &mut rng_from(6),
        )
        .unwrap();
        assert!(
            last.value < first.value,
            "{} vs {}",
            last.value,
            first.value
        );
        assert!(policy.actor.mean_net.params.iter().all(|p| p.is_finite()));
        assert!(policy.critic.params.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn update_is_deterministic() {
        let cfg = PpoConfig {
            minibatch_epochs: 3,
            minibatch_size: 16,
            ..PpoConfig::default()
        };
        let run = || {
            let mut policy = PolicyPair::new(7);
            let mut opts = PolicyOptimizers::new(&policy, cfg.lr);
            let mut batch = toy_batch(48, 8);
            for s in &mut batch {
                s.old_log_prob = policy.actor.log_prob(&s.actor_obs, &s.action).unwrap();
            }
            ppo_update(&mut policy, &mut opts, &mut batch, &cfg, &mut rng_from(9)).unwrap();
            policy.actor.mean_net.params
        };
        assert_eq!(run(), run());
    }
}
