//! Prioritized self-imitation: a FIFO replay buffer of (state, action,
//! return) tuples with priorities ((R - V(s))_+ + eps)^alpha, and the SIL
//! loss update that imitates the agent's own high-return transitions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::discounted_returns;
use crate::nn::dense::{BatchCache, DenseNet};
use crate::parallel;
use crate::rl::rollout::Episode;
use crate::rl::{PolicyOptimizers, PolicyPair};

const GRAD_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SilConfig {
    pub capacity: usize,
    pub batch_size: usize,
    /// Weight of the value term in the SIL loss.
    pub beta: f64,
    /// Prioritization exponent.
    pub alpha: f64,
    /// Priority floor added before exponentiation.
    pub eps_p: f64,
    /// Overall multiplier on the SIL loss.
    pub loss_weight: f64,
}

impl Default for SilConfig {
    fn default() -> Self {
        SilConfig {
            capacity: 100_000,
            batch_size: 1024,
            beta: 0.01,
            alpha: 0.6,
            eps_p: 1e-6,
            loss_weight: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SilEntry {
    pub actor_obs: Vec<f64>,
    pub critic_obs: Vec<f64>,
    pub action: [f64; 3],
    pub ret: f64,
    pub priority: f64,
}

/// Ring buffer with strictly FIFO eviction.
#[derive(Clone, Debug)]
pub struct SilBuffer {
    pub cfg: SilConfig,
    entries: Vec<SilEntry>,
    next: usize,
}

impl SilBuffer {
    pub fn new(cfg: SilConfig) -> Self {
        SilBuffer {
            entries: Vec::new(),
            next: 0,
            cfg,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[SilEntry] {
        &self.entries
    }

    fn insert(&mut self, entry: SilEntry) {
        if self.entries.len() < self.cfg.capacity {
            self.entries.push(entry);
        } else {
            self.entries[self.next] = entry;
            self.next = (self.next + 1) % self.cfg.capacity;
        }
    }

    /// Draws `count` indices with probability proportional to priority.
    pub fn sample_indices(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut prefix = Vec::with_capacity(self.entries.len());
        let mut acc = 0.0;
        for e in &self.entries {
            acc += e.priority;
            prefix.push(acc);
        }
        (0..count)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * acc;
                match prefix.binary_search_by(|p| p.partial_cmp(&u).unwrap()) {
                    Ok(i) => (i + 1).min(self.entries.len() - 1),
                    Err(i) => i.min(self.entries.len() - 1),
                }
            })
            .collect()
    }
}

/// Priority of one transition: ((R - V(s))_+ + eps_p)^alpha. Never exactly
/// zero, so every stored transition stays sampleable.
pub fn priority_for(ret: f64, value: f64, cfg: &SilConfig) -> f64 {
    ((ret - value).max(0.0) + cfg.eps_p).powf(cfg.alpha)
}

/// Computes discounted returns for a terminal episode and inserts every
/// (state, action, return) with its insertion-time priority.
pub fn push_episode(buffer: &mut SilBuffer, episode: &Episode, critic: &DenseNet, gamma: f64) {
    let rewards: Vec<f64> = episode.steps.iter().map(|s| s.reward).collect();
    let returns = discounted_returns(&rewards, gamma);
    for (step, ret) in episode.steps.iter().zip(returns) {
        let value = critic.forward(&step.critic_obs).unwrap()[0];
        let priority = priority_for(ret, value, &buffer.cfg);
        buffer.insert(SilEntry {
            actor_obs: step.actor_obs.clone(),
            critic_obs: step.critic_obs.clone(),
            action: step.action,
            ret,
            priority,
        });
    }
}

struct SilPartial {
    loss: f64,
    mean_grad: Vec<f64>,
    log_std_grad: Vec<f64>,
    critic_grad: Vec<f64>,
}

/// One SIL gradient step on a priority-sampled minibatch. The per-sample
/// loss is `-log pi(a|s) (R - V(s))_+ + beta * 0.5 ((R - V(s))_+)^2`; the
/// advantage gate is treated as constant in the policy term, and samples
/// with `V(s) >= R` contribute exactly zero gradient. Returns `None`
/// (a logged no-op) when the buffer is empty.
pub fn sil_update(
    policy: &mut PolicyPair,
    opts: &mut PolicyOptimizers,
    buffer: &SilBuffer,
    rng: &mut ChaCha8Rng,
) -> Result<Option<f64>> {
    if buffer.is_empty() {
        return Ok(None);
    }
    let cfg = &buffer.cfg;
    let indices = buffer.sample_indices(cfg.batch_size, rng);
    let (loss, mean_grad, log_std_grad, critic_grad) =
        sil_minibatch_grads(policy, buffer, &indices);
    opts.mean
        .step(&mut policy.actor.mean_net.params, &mean_grad)?;
    opts.log_std
        .step(&mut policy.actor.log_std, &log_std_grad)?;
    policy.actor.clamp_log_std();
    opts.critic.step(&mut policy.critic.params, &critic_grad)?;
    Ok(Some(loss))
}

/// Loss and gradients of one SIL minibatch; exposed so tests can assert the
/// zero-gradient gate on the raw vectors.
pub fn sil_minibatch_grads(
    policy: &PolicyPair,
    buffer: &SilBuffer,
    indices: &[usize],
) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
    let cfg = &buffer.cfg;
    let n = indices.len() as f64;
    let actor_in_dim = policy.actor.mean_net.input_dim();
    let critic_in_dim = policy.critic.input_dim();
    let act_dim = policy.actor.log_std.len();
    let partials = parallel::map_chunks(indices.len(), GRAD_CHUNK, |range| {
        let bsz = range.len();
        let mut p = SilPartial {
            loss: 0.0,
            mean_grad: vec![0.0; policy.actor.mean_net.param_count()],
            log_std_grad: vec![0.0; act_dim],
            critic_grad: vec![0.0; policy.critic.param_count()],
        };
        let mut actor_in = Vec::with_capacity(bsz * actor_in_dim);
        let mut critic_in = Vec::with_capacity(bsz * critic_in_dim);
        for k in range.clone() {
            let e = &buffer.entries()[indices[k]];
            actor_in.extend_from_slice(&e.actor_obs);
            critic_in.extend_from_slice(&e.critic_obs);
        }
        let mut actor_cache = BatchCache::default();
        let mut critic_cache = BatchCache::default();
        let mut scratch = Vec::new();
        let mut input_grad = Vec::new();

        policy
            .critic
            .forward_batch(&critic_in, bsz, &mut critic_cache);
        policy
            .actor
            .mean_net
            .forward_batch(&actor_in, bsz, &mut actor_cache);

        // Samples with V(s) >= R keep zero upstream rows and so contribute
        // exactly zero gradient everywhere.
        let mut actor_upstream = vec![0.0; bsz * act_dim];
        let mut critic_upstream = vec![0.0; bsz];
        {
            let values = critic_cache.output();
            let means = actor_cache.output();
            for (row, k) in range.clone().enumerate() {
                let e = &buffer.entries()[indices[k]];
                let gate = (e.ret - values[row]).max(0.0);
                if gate == 0.0 {
                    continue;
                }
                let mean = &means[row * act_dim..(row + 1) * act_dim];
                let logp =
                    crate::nn::policy::log_prob_given_mean(mean, &policy.actor.log_std, &e.action);
                p.loss += cfg.loss_weight * (-logp * gate + cfg.beta * 0.5 * gate * gate) / n;
                let coef = -cfg.loss_weight * gate / n;
                for i in 0..act_dim {
                    let sigma = policy.actor.log_std[i].exp();
                    let z = (e.action[i] - mean[i]) / sigma;
                    actor_upstream[row * act_dim + i] = coef * z / sigma;
                    p.log_std_grad[i] += coef * (z * z - 1.0);
                }
                critic_upstream[row] = -cfg.loss_weight * cfg.beta * gate / n;
            }
        }
        policy.actor.mean_net.backward_batch(
            &actor_cache,
            bsz,
            &actor_upstream,
            &mut p.mean_grad,
            &mut input_grad,
            &mut scratch,
        );
        policy.critic.backward_batch(
            &critic_cache,
            bsz,
            &critic_upstream,
            &mut p.critic_grad,
            &mut input_grad,
            &mut scratch,
        );
        p
    });
    let mut mean_grad = vec![0.0; policy.actor.mean_net.param_count()];
    let mut log_std_grad = vec![0.0; policy.actor.log_std.len()];
    let mut critic_grad = vec![0.0; policy.critic.param_count()];
    let mut loss = 0.0;
    for p in &partials {
        loss += p.loss;
        parallel::fold_grads(&mut mean_grad, std::slice::from_ref(&p.mean_grad));
        parallel::fold_grads(&mut log_std_grad, std::slice::from_ref(&p.log_std_grad));
        parallel::fold_grads(&mut critic_grad, std::slice::from_ref(&p.critic_grad));
    }
    (loss, mean_grad, log_std_grad, critic_grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::rollout::RolloutStep;
    use crate::rng::rng_from;

    fn entry(ret: f64, obs_seed: f64) -> SilEntry {
        SilEntry {
            actor_obs: vec![obs_seed; 9],
            critic_obs: vec![obs_seed; 14],
            action: [0.01, -0.02, 0.0],
            ret,
            priority: 1.0,
        }
    }

    #[test]
    fn priority_ratio_matches_exponent() {
        let cfg = SilConfig::default();
        // (R - V) of 2 vs 1: ratio is 2^0.6 up to the tiny floor.
        let r = priority_for(2.0, 0.0, &cfg) / priority_for(1.0, 0.0, &cfg);
        assert!((r - 2.0f64.powf(0.6)).abs() < 1e-5, "ratio {r}");
        assert!((2.0f64.powf(0.6) - 1.5157).abs() < 1e-4);
        // V >= R gives the floor priority, never exactly zero.
        let floor = priority_for(1.0, 2.0, &cfg);
        assert!((floor - cfg.eps_p.powf(cfg.alpha)).abs() < 1e-18);
        assert!(floor > 0.0);
    }

    #[test]
    fn buffer_eviction_is_strictly_fifo() {
        let cfg = SilConfig {
            capacity: 3,
            ..SilConfig::default()
        };
        let mut buf = SilBuffer::new(cfg);
        for i in 0..5 {
            buf.insert(entry(i as f64, 0.0));
        }
        assert_eq!(buf.len(), 3);
        let rets: Vec<f64> = buf.entries().iter().map(|e| e.ret).collect();
        // Slots 0 and 1 were overwritten by 3 and 4; 2 survives.
        assert_eq!(rets, vec![3.0, 4.0, 2.0]);
        buf.insert(entry(5.0, 0.0));
        let rets: Vec<f64> = buf.entries().iter().map(|e| e.ret).collect();
        assert_eq!(rets, vec![3.0, 4.0, 5.0]);
    }

    #[test]
    fn sampling_frequencies_match_priorities() {
        let cfg = SilConfig {
            capacity: 10,
            ..SilConfig::default()
        };
        let mut buf = SilBuffer::new(cfg);
        let priorities = [1.0, 2.0, 4.0, 8.0];
        for p in priorities {
            let mut e = entry(0.0, 0.0);
            e.priority = p;
            buf.insert(e);
        }
        let mut rng = rng_from(0);
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for i in buf.sample_indices(draws, &mut rng) {
            counts[i] += 1;
        }
        let total: f64 = priorities.iter().sum();
        let chi2: f64 = counts
            .iter()
            .zip(priorities.iter())
            .map(|(c, p)| {
                let expected = draws as f64 * p / total;
                let d = *c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 3 dof; 99.9th percentile is 16.27.
        assert!(chi2 < 16.27, "chi2 {chi2}, counts {counts:?}");
    }

    #[test]
    fn push_episode_computes_returns_and_priorities() {
        let policy = PolicyPair::new(1);
        let cfg = SilConfig::default();
        let mut buf = SilBuffer::new(cfg);
        let steps: Vec<RolloutStep> = (0..3)
            .map(|i| RolloutStep {
                actor_obs: vec![0.1; 9],
                critic_obs: vec![0.1; 14],
                action: [0.0; 3],
                log_prob: 0.0,
                value: 0.0,
                reward: if i == 2 { 1.0 } else { 0.0 },
                done: i == 2,
                success: i == 2,
                terminal_value: 0.0,
            })
            .collect();
        let episode = Episode { steps };
        push_episode(&mut buf, &episode, &policy.critic, 0.99);
        assert_eq!(buf.len(), 3);
        assert!((buf.entries()[0].ret - 0.9801).abs() < 1e-12);
        assert!((buf.entries()[2].ret - 1.0).abs() < 1e-12);
        for e in buf.entries() {
            let v = policy.critic.forward(&e.critic_obs).unwrap()[0];
            let expected = priority_for(e.ret, v, &buf.cfg);
            assert_eq!(e.priority, expected);
        }
    }

    #[test]
    fn value_above_return_gives_exactly_zero_gradient() {
        let mut policy = PolicyPair::new(2);
        // Force the critic to output a large value via its final bias.
        let n = policy.critic.params.len();
        policy.critic.params[n - 1] = 100.0;
        let cfg = SilConfig {
            batch_size: 4,
            ..SilConfig::default()
        };
        let mut buf = SilBuffer::new(cfg);
        for _ in 0..4 {
            buf.insert(entry(1.0, 0.3)); // R = 1 << V = 100
        }
        let indices = vec![0, 1, 2, 3];
        let (loss, mg, lg, cg) = sil_minibatch_grads(&policy, &buf, &indices);
        assert_eq!(loss, 0.0);
        assert!(mg.iter().all(|g| *g == 0.0));
        assert!(lg.iter().all(|g| *g == 0.0));
        assert!(cg.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn sil_loss_matches_hand_computation() {
        // R = 1, V = 0, log pi = -2, beta = 0.01:
        // loss = 2 * 1 + 0.01 * 0.5 * 1 = 2.005.
        let mut policy = PolicyPair::new(3);
        // Zero out the critic so V(s) = 0.
        policy.critic.params.iter_mut().for_each(|p| *p = 0.0);
        let cfg = SilConfig {
            batch_size: 1,
            ..SilConfig::default()
        };
        let mut buf = SilBuffer::new(cfg);
        let mut e = entry(1.0, 0.2);
        // Choose the action so that log pi(a|s) = -2 exactly: solve via the
        // one free coordinate. Instead, evaluate the actual logp and test
        // the formula with it.
        e.action = [0.01, 0.0, -0.01];
        buf.insert(e.clone());
        let logp = policy.actor.log_prob(&e.actor_obs, &e.action).unwrap();
        let (loss, _, _, _) = sil_minibatch_grads(&policy, &buf, &[0]);
        let expected = -logp * 1.0 + 0.01 * 0.5;
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    }

    #[test]
    fn empty_buffer_update_is_a_noop() {
        let mut policy = PolicyPair::new(4);
        let mut opts = PolicyOptimizers::new(&policy, 1e-4);
        let buf = SilBuffer::new(SilConfig::default());
        let before = policy.actor.mean_net.params.clone();
        let out = sil_update(&mut policy, &mut opts, &buf, &mut rng_from(0)).unwrap();
        assert!(out.is_none());
        assert_eq!(policy.actor.mean_net.params, before);
    }
}
