//! Fine-tuning and from-scratch training loops: per epoch, collect rollouts,
//! run one PPO update, optionally one self-imitation update, then evaluate
//! deterministically at full difficulty.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disassembly::gen_disassembly;
use crate::env::{curriculum_update, trajectory_polyline, CurriculumState, Env, DEFAULT_HORIZON};
use crate::error::{Error, Result};
use crate::mdp::gae_advantages;
use crate::rl::ppo::{ppo_update, FlatSample, PpoConfig};
use crate::rl::rollout::{collect_rollouts, EnvRollout, VecEnv};
use crate::rl::sil::{push_episode, sil_update, SilBuffer, SilConfig};
use crate::rl::{PolicyOptimizers, PolicyPair};
use crate::rng;
use crate::task::{RewardMode, TaskSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub ppo: PpoConfig,
    pub sil: SilConfig,
    pub reward_mode: RewardMode,
    /// Start-depth curriculum; active only with the dense reward.
    pub use_curriculum: bool,
    /// Deterministic evaluation episodes per epoch point.
    pub eval_episodes: usize,
    /// Environment episode length.
    pub env_horizon: usize,
    /// Success rate a run is expected to reach (reporting threshold).
    pub success_target: f64,
    /// Early-stop once the evaluation success reaches this level.
    pub stop_at_success: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            ppo: PpoConfig::default(),
            sil: SilConfig::default(),
            reward_mode: RewardMode::Dense,
            use_curriculum: true,
            eval_episodes: 128,
            env_horizon: DEFAULT_HORIZON,
            success_target: 0.8,
            stop_at_success: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub sil_loss: f64,
    pub ppo_loss: f64,
}

#[derive(Clone, Debug)]
pub struct FinetuneResult {
    /// Parameters at the last completed epoch.
    pub policy: PolicyPair,
    /// Parameters at the best evaluation success.
    pub best_policy: PolicyPair,
    pub best_success: f64,
    pub final_success: f64,
    pub curve: Vec<CurvePoint>,
    /// Set when training aborted on a non-finite update; the returned
    /// policies are the last good checkpoint.
    pub aborted: Option<String>,
}

/// First epoch index whose evaluation success reaches `target`.
pub fn epochs_to_target(curve: &[CurvePoint], target: f64) -> Option<usize> {
    curve.iter().position(|p| p.success_rate >= target)
}

/// Deterministic evaluation: fresh environments at full difficulty, mean
/// actions. Returns (success rate, mean episode return).
pub fn eval_policy(
    policy: &PolicyPair,
    template: &Env,
    episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let results: Vec<Result<(bool, f64)>> = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let mut env = template.clone();
            env.curriculum_level = None;
            env.reseed_and_reset(rng::mix_seed(seed, i as u64))?;
            let mut total = 0.0;
            loop {
                let obs = env.observe();
                let mean = policy.actor.mean_action(&obs.actor_obs)?;
                let tr = env.step(&mean)?;
                total += tr.reward;
                if tr.done {
                    return Ok((tr.success, total));
                }
            }
        })
        .collect();
    let mut successes = 0usize;
    let mut return_sum = 0.0;
    let n = results.len();
    for r in results {
        let (s, ret) = r?;
        successes += s as usize;
        return_sum += ret;
    }
    Ok((successes as f64 / n as f64, return_sum / n as f64))
}

/// Flattens per-env rollouts into PPO samples with GAE advantages, splitting
/// each stream at episode boundaries. Successful terminations bootstrap with
/// zero; horizon truncations and rollout-boundary cuts bootstrap with the
/// critic value of the state that follows.
fn build_flat_samples(rollouts: &[EnvRollout], cfg: &PpoConfig) -> Result<Vec<FlatSample>> {
    let mut samples = Vec::with_capacity(rollouts.iter().map(|r| r.steps.len()).sum());
    for r in rollouts {
        let steps = &r.steps;
        let mut seg_start = 0usize;
        for t in 0..steps.len() {
            if steps[t].done || t + 1 == steps.len() {
                let seg = &steps[seg_start..=t];
                let rewards: Vec<f64> = seg.iter().map(|s| s.reward).collect();
                let values: Vec<f64> = seg.iter().map(|s| s.value).collect();
                let bootstrap = if steps[t].done {
                    steps[t].terminal_value
                } else {
                    r.bootstrap
                };
                let adv = gae_advantages(&rewards, &values, bootstrap, cfg.gamma, cfg.lam)?;
                for (i, step) in seg.iter().enumerate() {
                    samples.push(FlatSample {
                        actor_obs: step.actor_obs.clone(),
                        critic_obs: step.critic_obs.clone(),
                        action: step.action,
                        old_log_prob: step.log_prob,
                        advantage: adv[i],
                        return_target: adv[i] + values[i],
                    });
                }
                seg_start = t + 1;
            }
        }
    }
    Ok(samples)
}

/// Fine-tunes a policy on a task. Per epoch: collect rollouts, push terminal
/// episodes into the replay buffer, one PPO update, one SIL update when
/// enabled, then a deterministic evaluation. A non-finite update aborts with
/// the last good checkpoint and a diagnostic message.
pub fn finetune(
    init: &PolicyPair,
    task: &TaskSpec,
    cfg: &TrainConfig,
    sil_enabled: bool,
    seed: u64,
) -> Result<FinetuneResult> {
    let mut policy = init.clone();
    let mut opts = PolicyOptimizers::new(&policy, cfg.ppo.lr);
    let dense = cfg.reward_mode == RewardMode::Dense;

    let mut template = Env::new(task.clone(), rng::mix_seed(seed, 0xE17))?;
    template.reward_mode = cfg.reward_mode;
    template.horizon = cfg.env_horizon;
    if dense {
        let mut gen_rng = rng::rng_from(rng::mix_seed(seed, 0xD15));
        let path = gen_disassembly(task, 1, &mut gen_rng)?.pop().unwrap();
        template.imitation = Some(trajectory_polyline(&path));
    }

    let mut curriculum = if dense && cfg.use_curriculum {
        Some(CurriculumState::default())
    } else {
        None
    };
    let mut vec_env = VecEnv::new(template.clone(), cfg.ppo.n_envs, rng::mix_seed(seed, 0xE25))?;
    vec_env.set_level(curriculum.as_ref().map(|c| c.level));

    let mut buffer = SilBuffer::new(cfg.sil);
    let mut update_rng = rng::rng_from(rng::mix_seed(seed, 0x0B1));
    let mut sil_rng = rng::rng_from(rng::mix_seed(seed, 0x0B2));

    let mut curve = Vec::new();
    let mut best_policy = policy.clone();
    let mut best_success = f64::NEG_INFINITY;
    let mut aborted = None;

    for epoch in 0..cfg.ppo.total_epochs {
        let snapshot = policy.clone();
        let (rollouts, episodes) = collect_rollouts(&policy, &mut vec_env, cfg.ppo.horizon)?;
        for ep in &episodes {
            if let Some(c) = curriculum.as_mut() {
                *c = curriculum_update(c.clone(), ep.succeeded());
            }
            if sil_enabled {
                push_episode(&mut buffer, ep, &policy.critic, cfg.ppo.gamma);
            }
        }
        vec_env.set_level(curriculum.as_ref().map(|c| c.level));

        let mut samples = build_flat_samples(&rollouts, &cfg.ppo)?;
        let update = ppo_update(
            &mut policy,
            &mut opts,
            &mut samples,
            &cfg.ppo,
            &mut update_rng,
        );
        let losses = match update {
            Ok(l) => l,
            Err(Error::Training(msg)) => {
                aborted = Some(format!("epoch {epoch}: ppo update diverged: {msg}"));
                policy = snapshot;
                break;
            }
            Err(e) => return Err(e),
        };
        let sil_loss = if sil_enabled {
            match sil_update(&mut policy, &mut opts, &buffer, &mut sil_rng) {
                Ok(l) => l.unwrap_or(0.0),
                Err(Error::Training(msg)) => {
                    aborted = Some(format!("epoch {epoch}: sil update diverged: {msg}"));
                    policy = snapshot;
                    break;
                }
                Err(e) => return Err(e),
            }
        } else {
            0.0
        };

        let (success, mean_return) = eval_policy(
            &policy,
            &template,
            cfg.eval_episodes,
            rng::mix_seed(seed, 0xEA0 + epoch as u64),
        )?;
        curve.push(CurvePoint {
            epoch,
            success_rate: success,
            mean_return,
            sil_loss,
            ppo_loss: losses.policy + cfg.ppo.critic_coef * losses.value,
        });
        if success > best_success {
            best_success = success;
            best_policy = policy.clone();
        }
        if let Some(stop) = cfg.stop_at_success {
            if success >= stop {
                break;
            }
        }
    }

    let final_success = curve.last().map(|p| p.success_rate).unwrap_or(0.0);
    if best_success == f64::NEG_INFINITY {
        best_success = final_success;
        best_policy = policy.clone();
    }
    Ok(FinetuneResult {
        policy,
        best_policy,
        best_success,
        final_success,
        curve,
        aborted,
    })
}

/// Specialist training from a random initialization; self-imitation stays
/// off, matching the from-scratch baseline.
pub fn train_scratch(task: &TaskSpec, cfg: &TrainConfig, seed: u64) -> Result<FinetuneResult> {
    let init = PolicyPair::new(rng::mix_seed(seed, 0x5C7A7C4));
    finetune(&init, task, cfg, false, seed)
}

pub const CURVE_CSV_HEADER: &str = "epoch,success_rate,mean_return,sil_loss,ppo_loss";

pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut out = String::from(CURVE_CSV_HEADER);
    out.push('\n');
    for p in curve {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.epoch, p.success_rate, p.mean_return, p.sil_loss, p.ppo_loss
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurvePoint>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CURVE_CSV_HEADER => {}
        _ => {
            return Err(Error::Format(format!(
                "{}: missing curve header",
                path.display()
            )))
        }
    }
    let mut curve = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Format(format!(
                "{}: bad curve row {}",
                path.display(),
                i + 2
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
        };
        curve.push(CurvePoint {
            epoch: fields[0]
                .parse()
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?,
            success_rate: parse(fields[1])?,
            mean_return: parse(fields[2])?,
            sil_loss: parse(fields[3])?,
            ppo_loss: parse(fields[4])?,
        });
    }
    Ok(curve)
}
