//! Parallel rollout collection over a batch of independent environments.

use rayon::prelude::*;

use crate::env::Env;
use crate::error::Result;
use crate::rl::PolicyPair;
use crate::rng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct RolloutStep {
    pub actor_obs: Vec<f64>,
    pub critic_obs: Vec<f64>,
    /// The sampled (pre-clamp) action whose log-probability is stored.
    pub action: [f64; 3],
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    /// Bootstrap value when this step ends an episode: zero for a genuine
    /// termination (success), the critic estimate of the next state for a
    /// horizon truncation.
    pub terminal_value: f64,
}

/// A completed (terminal) episode.
#[derive(Clone, Debug, Default)]
pub struct Episode {
    pub steps: Vec<RolloutStep>,
}

impl Episode {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn succeeded(&self) -> bool {
        self.steps.last().map(|s| s.success).unwrap_or(false)
    }
}

/// One rollout's worth of data from a single environment.
pub struct EnvRollout {
    pub steps: Vec<RolloutStep>,
    /// Value of the state after the final step; zero if that step was
    /// terminal.
    pub bootstrap: f64,
}

struct Worker {
    env: Env,
    action_rng: ChaCha8Rng,
    /// Steps of the episode currently in flight, accumulated across rollouts.
    episode_buf: Vec<RolloutStep>,
}

/// A batch of environments for one task sharing a curriculum level.
pub struct VecEnv {
    workers: Vec<Worker>,
}

impl VecEnv {
    /// Builds `n_envs` independently seeded environments.
    pub fn new(template: Env, n_envs: usize, seed: u64) -> Result<Self> {
        let mut workers = Vec::with_capacity(n_envs);
        for i in 0..n_envs {
            let mut env = template.clone();
            env.reseed_and_reset(rng::mix_seed(seed, i as u64))?;
            workers.push(Worker {
                env,
                action_rng: rng::rng_from(rng::mix_seed(seed, 0x1000 + i as u64)),
                episode_buf: Vec::new(),
            });
        }
        Ok(VecEnv { workers })
    }

    pub fn len(&self) -> usize {
        self.workers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workers.is_empty()
    }

    /// Applies a curriculum level to every environment (affects resets only).
    pub fn set_level(&mut self, level: Option<usize>) {
        for w in &mut self.workers {
            w.env.curriculum_level = level;
        }
    }
}

/// Collects `horizon` stochastic steps from every environment in parallel.
/// Environments auto-reset on episode end; episodes that finish during the
/// rollout are returned whole, in environment order.
pub fn collect_rollouts(
    policy: &PolicyPair,
    envs: &mut VecEnv,
    horizon: usize,
) -> Result<(Vec<EnvRollout>, Vec<Episode>)> {
    let results: Vec<Result<(EnvRollout, Vec<Episode>)>> = envs
        .workers
        .par_iter_mut()
        .map(|worker| {
            let mut steps = Vec::with_capacity(horizon);
            let mut episodes = Vec::new();
            for _ in 0..horizon {
                let obs = worker.env.observe();
                let (action, log_prob) = policy
                    .actor
                    .sample(&obs.actor_obs, &mut worker.action_rng)?;
                let value = policy.critic.forward(&obs.critic_obs)?[0];
                let action = [action[0], action[1], action[2]];
                let tr = worker.env.step(&action)?;
                // Horizon truncation bootstraps with the next state's value;
                // genuine termination (success) bootstraps with zero.
                let terminal_value = if tr.done && !tr.success {
                    let next_obs = worker.env.observe();
                    policy.critic.forward(&next_obs.critic_obs)?[0]
                } else {
                    0.0
                };
                let step = RolloutStep {
                    actor_obs: obs.actor_obs,
                    critic_obs: obs.critic_obs,
                    action,
                    log_prob,
                    value,
                    reward: tr.reward,
                    done: tr.done,
                    success: tr.success,
                    terminal_value,
                };
                worker.episode_buf.push(step.clone());
                steps.push(step);
                if tr.done {
                    episodes.push(Episode {
                        steps: std::mem::take(&mut worker.episode_buf),
                    });
                    worker.env.reset()?;
                }
            }
            let bootstrap = if steps.last().map(|s| s.done).unwrap_or(true) {
                0.0
            } else {
                let obs = worker.env.observe();
                policy.critic.forward(&obs.critic_obs)?[0]
            };
            Ok((EnvRollout { steps, bootstrap }, episodes))
        })
        .collect();

    let mut rollouts = Vec::with_capacity(envs.len());
    let mut episodes = Vec::new();
    for r in results {
        let (rollout, mut eps) = r?;
        rollouts.push(rollout);
        episodes.append(&mut eps);
    }
    Ok((rollouts, episodes))
}

impl Env {
    /// Replaces the RNG stream and resets; used when fanning one template
    /// env out into a batch.
    pub fn reseed_and_reset(&mut self, seed: u64) -> Result<()> {
        self.set_rng(rng::rng_from(seed));
        self.reset()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::make_task_family;

    #[test]
    fn single_env_single_step() {
        let task = make_task_family(1, 1).unwrap().pop().unwrap();
        let env = Env::new(task, 7).unwrap();
        let mut vec_env = VecEnv::new(env, 1, 3).unwrap();
        let policy = PolicyPair::new(5);
        let (rollouts, _) = collect_rollouts(&policy, &mut vec_env, 1).unwrap();
        assert_eq!(rollouts.len(), 1);
        assert_eq!(rollouts[0].steps.len(), 1);
    }

    #[test]
    fn rollouts_are_deterministic_given_seed() {
        let task = make_task_family(1, 2).unwrap().pop().unwrap();
        let policy = PolicyPair::new(9);
        let run = || {
            let env = Env::new(task.clone(), 7).unwrap();
            let mut vec_env = VecEnv::new(env, 4, 11).unwrap();
            let (rollouts, episodes) = collect_rollouts(&policy, &mut vec_env, 32).unwrap();
            let signature: Vec<f64> = rollouts
                .iter()
                .flat_map(|r| r.steps.iter().map(|s| s.reward + s.log_prob + s.value))
                .collect();
            (signature, episodes.len())
        };
        let (a, ea) = run();
        let (b, eb) = run();
        assert_eq!(a, b);
        assert_eq!(ea, eb);
    }

    #[test]
    fn sampled_log_prob_matches_density() {
        let task = make_task_family(1, 3).unwrap().pop().unwrap();
        let env = Env::new(task, 1).unwrap();
        let mut vec_env = VecEnv::new(env, 2, 5).unwrap();
        let policy = PolicyPair::new(2);
        let (rollouts, _) = collect_rollouts(&policy, &mut vec_env, 8).unwrap();
        for r in &rollouts {
            for s in &r.steps {
                let expected = policy.actor.log_prob(&s.actor_obs, &s.action).unwrap();
                assert!((s.log_prob - expected).abs() < 1e-12);
            }
        }
    }
}
