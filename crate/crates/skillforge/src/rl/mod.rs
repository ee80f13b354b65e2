//! PPO with generalized advantage estimation, prioritized self-imitation,
//! and the fine-tuning / from-scratch training loops.

pub mod ppo;
pub mod rollout;
pub mod sil;
pub mod train;

pub use ppo::{ppo_update, PpoConfig, PpoLosses};
pub use rollout::{collect_rollouts, Episode, RolloutStep, VecEnv};
pub use sil::{push_episode, sil_update, SilBuffer, SilConfig};
pub use train::{
    epochs_to_target, eval_policy, finetune, read_curve_csv, train_scratch, write_curve_csv,
    CurvePoint, FinetuneResult, TrainConfig,
};

use std::path::Path;

use crate::env::{EnvState, ObsPair, RolloutPolicy, ACTOR_OBS_DIM, CRITIC_OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::checkpoint;
use crate::nn::dense::{Activation, DenseNet};
use crate::nn::policy::GaussianPolicyHead;
use crate::nn::AdamState;
use crate::rng;
use crate::task::TaskSpec;

/// Hidden layer sizes shared by the actor mean net and the critic.
pub const POLICY_HIDDEN: [usize; 3] = [256, 128, 64];
/// Initial log standard deviation: the action bound of a unit-width socket,
/// so exploration covers the whole admissible range from the start.
pub const INITIAL_LOG_STD: f64 = -3.688_879_454_113_936; // ln(0.025)
/// Shrink factor on the final mean-net layer at initialization, keeping the
/// initial action mean near zero relative to the action bound.
const MEAN_OUTPUT_INIT_SCALE: f64 = 0.01;

/// Asymmetric actor-critic pair: the actor sees the 9-dim observation, the
/// critic the 14-dim privileged observation.
#[derive(Clone, Debug)]
pub struct PolicyPair {
    pub actor: GaussianPolicyHead,
    pub critic: DenseNet,
}

impl PolicyPair {
    pub fn new(seed: u64) -> Self {
        let mut mean_net = DenseNet::mlp(ACTOR_OBS_DIM, &POLICY_HIDDEN, 3, Activation::Tanh);
        mean_net.init_params(rng::mix_seed(seed, 1));
        // Damp the output layer so initial means sit well inside the action
        // bound; otherwise exploration starts one-sided.
        let last_layer = mean_net.params.len() - (POLICY_HIDDEN[2] * 3 + 3);
        for p in &mut mean_net.params[last_layer..] {
            *p *= MEAN_OUTPUT_INIT_SCALE;
        }
        let mut critic = DenseNet::mlp(CRITIC_OBS_DIM, &POLICY_HIDDEN, 1, Activation::Tanh);
        critic.init_params(rng::mix_seed(seed, 2));
        PolicyPair {
            actor: GaussianPolicyHead::new(mean_net, INITIAL_LOG_STD),
            critic,
        }
    }

    pub fn value(&self, critic_obs: &[f64]) -> Result<f64> {
        Ok(self.critic.forward(critic_obs)?[0])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_checkpoint(
            path,
            &[
                ("actor", &self.actor.mean_net.params),
                ("critic", &self.critic.params),
                ("log_std", &self.actor.log_std),
            ],
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let nets = checkpoint::load_checkpoint(path)?;
        let mut pair = PolicyPair::new(0);
        let actor = checkpoint::find_net(&nets, "actor")?;
        let critic = checkpoint::find_net(&nets, "critic")?;
        let log_std = checkpoint::find_net(&nets, "log_std")?;
        if actor.len() != pair.actor.mean_net.params.len()
            || critic.len() != pair.critic.params.len()
            || log_std.len() != pair.actor.log_std.len()
        {
            return Err(Error::Format(format!(
                "policy checkpoint {} has incompatible shapes",
                path.display()
            )));
        }
        pair.actor.mean_net.params.copy_from_slice(actor);
        pair.critic.params.copy_from_slice(critic);
        pair.actor.log_std.copy_from_slice(log_std);
        Ok(pair)
    }
}

/// Adam state for every trainable parameter group of a policy pair.
pub struct PolicyOptimizers {
    pub mean: AdamState,
    pub log_std: AdamState,
    pub critic: AdamState,
}

impl PolicyOptimizers {
    pub fn new(policy: &PolicyPair, lr: f64) -> Self {
        PolicyOptimizers {
            mean: AdamState::new(policy.actor.mean_net.param_count(), lr),
            log_std: AdamState::new(policy.actor.log_std.len(), lr),
            critic: AdamState::new(policy.critic.param_count(), lr),
        }
    }
}

/// Deterministic evaluation-time wrapper: always acts with the policy mean.
#[derive(Clone)]
pub struct MeanActionPolicy<'a> {
    pub policy: &'a PolicyPair,
}

impl RolloutPolicy for MeanActionPolicy<'_> {
    fn act(&mut self, obs: &ObsPair, _state: &EnvState, _task: &TaskSpec) -> [f64; 3] {
        let mean = self.policy.actor.mean_action(&obs.actor_obs).unwrap();
        [mean[0], mean[1], mean[2]]
    }
}
