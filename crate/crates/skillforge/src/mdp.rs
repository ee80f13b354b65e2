//! Shared MDP abstractions: transitions, trajectories, returns, and
//! generalized advantage estimation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Static description of an MDP family: dimensions, discount, episode length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub gamma: f64,
    pub horizon: usize,
}

impl MdpSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!(
                "gamma {} outside [0, 1)",
                self.gamma
            )));
        }
        if self.horizon < 1 {
            return Err(Error::invalid("horizon must be >= 1"));
        }
        if self.state_dim < 1 || self.action_dim < 1 {
            return Err(Error::invalid("state/action dims must be >= 1"));
        }
        Ok(())
    }
}

/// One environment step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub success: bool,
}

/// An ordered chain of transitions, with discounted returns filled on demand.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    /// `returns[t] = sum_k gamma^(k-t) * reward[k]`, filled by `fill_returns`.
    pub returns: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Checks that consecutive transitions chain exactly:
    /// `transitions[i].next_state == transitions[i+1].state`.
    pub fn validate_chain(&self) -> Result<()> {
        for (i, w) in self.transitions.windows(2).enumerate() {
            if w[0].next_state != w[1].state {
                return Err(Error::invalid(format!(
                    "trajectory chain broken between transitions {i} and {}",
                    i + 1
                )));
            }
        }
        if let Some(returns) = &self.returns {
            if returns.len() != self.transitions.len() {
                return Err(Error::invalid("returns length != transitions length"));
            }
        }
        Ok(())
    }

    pub fn fill_returns(&mut self, gamma: f64) {
        let rewards: Vec<f64> = self.transitions.iter().map(|t| t.reward).collect();
        self.returns = Some(discounted_returns(&rewards, gamma));
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.reward).collect()
    }
}

/// Discounted reward-to-go: `out[t] = sum_{k>=t} gamma^(k-t) * rewards[k]`.
///
/// Computed backward in a single pass; an empty input yields an empty output.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// GAE(λ) advantages for a single episode segment.
///
/// `A_t = sum_k (gamma*lam)^k * delta_{t+k}` with
/// `delta_t = r_t + gamma * V_{t+1} - V_t`, where the value beyond the last
/// step is `bootstrap` (0 for a terminal segment, the critic estimate of the
/// next state for a truncated one).
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    gamma: f64,
    lam: f64,
) -> Result<Vec<f64>> {
    if rewards.len() != values.len() {
        return Err(Error::invalid(format!(
            "rewards length {} != values length {}",
            rewards.len(),
            values.len()
        )));
    }
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lam * acc;
        advantages[t] = acc;
    }
    Ok(advantages)
}
