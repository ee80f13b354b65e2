//! Disassembly path generation and the scripted reversed-path follower.
//!
//! Assembly demonstrations are hard to script, but disassembly is easy:
//! start from the assembled pose, lift with small lateral noise until the
//! plug clears the socket, then wander to a randomized free pose. Reversed,
//! each path is a demonstration ending at the goal.

use rand_chacha::ChaCha8Rng;

use crate::env::{
    reset_with_boundary, step_with_boundary, EnvState, ObsPair, RewardWeights, RolloutPolicy,
    StepContext,
};
use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::mdp::Trajectory;
use crate::rng;
use crate::task::{RewardMode, TaskSpec};

/// Steps per generated disassembly trajectory.
pub const TRAJECTORY_LEN: usize = 64;

/// Generates `n_paths` disassembly trajectories, each `TRAJECTORY_LEN` steps.
/// Every path starts exactly at the goal pose, lifts until the plug is fully
/// above the socket mouth, then moves toward a randomized free pose. All
/// intermediate states pass through the contact projector, so the recorded
/// paths are penetration-free.
pub fn gen_disassembly(
    task: &TaskSpec,
    n_paths: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Trajectory>> {
    if n_paths == 0 {
        return Err(Error::invalid("n_paths must be >= 1"));
    }
    let boundary = task.collision_boundary();
    let weights = RewardWeights::default();
    let mut ctx = StepContext::new(RewardMode::Dense, &weights);
    ctx.horizon = usize::MAX; // generation manages its own length
    let bound = task.action_bound();
    let plug_height = task.plug_height();
    // Lateral noise must stay well inside the channel slack.
    let lateral = (0.3 * bound).min(task.clearance / 8.0);
    let angular = (0.2 * bound).min(0.02);

    let mut paths = Vec::with_capacity(n_paths);
    for _ in 0..n_paths {
        let goal = task.goal();
        let mut state = EnvState {
            pose: goal,
            velocity: [0.0; 3],
            goal_pose: goal,
            contact: false,
            step_index: 0,
        };
        let mut traj = Trajectory::default();
        // Free pose the second phase steers toward.
        let target = Pose::new(
            rng::uniform(rng, -0.9, 0.9),
            task.socket_depth + rng::uniform(rng, 0.3, 0.9),
            rng::uniform(rng, -0.25, 0.25),
        );
        let mut cleared = false;
        for step_idx in 0..TRAJECTORY_LEN {
            // The plug is clear once its lowest possible point is above the
            // mouth; pose.y - plug extent is a conservative bound under tilt.
            cleared = cleared
                || state.pose.y - 0.5 * plug_height * state.pose.theta.abs().sin()
                    >= task.socket_depth + 1e-9;
            let action = if !cleared {
                [
                    rng::uniform(rng, -1.0, 1.0) * lateral,
                    bound,
                    rng::uniform(rng, -1.0, 1.0) * angular,
                ]
            } else {
                [
                    (target.x - state.pose.x).clamp(-bound, bound)
                        + rng::uniform(rng, -0.2, 0.2) * bound,
                    (target.y - state.pose.y).clamp(-bound, bound)
                        + rng::uniform(rng, -0.2, 0.2) * bound,
                    (target.theta - state.pose.theta).clamp(-bound, bound),
                ]
            };
            let (transition, next) = step_with_boundary(task, &boundary, &state, &action, &ctx)?;
            traj.transitions.push(transition);
            state = next;
            if !cleared && step_idx + 1 == TRAJECTORY_LEN {
                return Err(Error::Generation(format!(
                    "task {}: lift failed to exit the socket within {TRAJECTORY_LEN} steps",
                    task.id
                )));
            }
        }
        debug_assert_eq!(traj.len(), TRAJECTORY_LEN);
        paths.push(traj);
    }
    Ok(paths)
}

/// Pose waypoints of a disassembly path in reverse order, ending at the goal.
pub fn reversed_waypoints(traj: &Trajectory) -> Vec<[f64; 3]> {
    let mut wps: Vec<[f64; 3]> = Vec::with_capacity(traj.len() + 1);
    if let Some(last) = traj.transitions.last() {
        wps.push([last.next_state[0], last.next_state[1], last.next_state[2]]);
    }
    for t in traj.transitions.iter().rev() {
        wps.push([t.state[0], t.state[1], t.state[2]]);
    }
    wps
}

/// Scripted policy that tracks the reversed disassembly waypoints: it joins
/// the path at the nearest waypoint, then greedily targets the farthest
/// waypoint reachable within one action bound.
#[derive(Clone, Debug)]
pub struct PathFollowPolicy {
    waypoints: Vec<[f64; 3]>,
    idx: usize,
}

impl PathFollowPolicy {
    pub fn from_disassembly(traj: &Trajectory) -> Self {
        PathFollowPolicy {
            waypoints: reversed_waypoints(traj),
            idx: 0,
        }
    }

    fn linf(pose: &Pose, wp: &[f64; 3]) -> f64 {
        (pose.x - wp[0])
            .abs()
            .max((pose.y - wp[1]).abs())
            .max((pose.theta - wp[2]).abs())
    }
}

impl RolloutPolicy for PathFollowPolicy {
    fn begin_episode(&mut self) {
        self.idx = 0;
    }

    fn act(&mut self, _obs: &ObsPair, state: &EnvState, task: &TaskSpec) -> [f64; 3] {
        let bound = task.action_bound();
        if self.idx == 0 {
            // Join at the nearest waypoint.
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, wp) in self.waypoints.iter().enumerate() {
                let d = Self::linf(&state.pose, wp);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            self.idx = best.max(1).min(self.waypoints.len() - 1);
        }
        // Advance past every waypoint already within reach.
        while self.idx + 1 < self.waypoints.len()
            && Self::linf(&state.pose, &self.waypoints[self.idx]) <= bound
        {
            self.idx += 1;
        }
        let wp = &self.waypoints[self.idx];
        [
            (wp[0] - state.pose.x).clamp(-bound, bound),
            (wp[1] - state.pose.y).clamp(-bound, bound),
            (wp[2] - state.pose.theta).clamp(-bound, bound),
        ]
    }
}

/// Runs one episode with a policy from a fresh full-difficulty reset;
/// actions are the policy's own (deterministic policies evaluate
/// deterministically). Returns success.
pub fn run_episode(
    policy: &mut dyn RolloutPolicy,
    task: &TaskSpec,
    horizon: usize,
    seed: u64,
) -> Result<bool> {
    let boundary = task.collision_boundary();
    let mut rng = rng::rng_from(seed);
    let mut state = reset_with_boundary(task, &boundary, &mut rng, None)?;
    let weights = RewardWeights::default();
    let mut ctx = StepContext::new(task.reward_mode, &weights);
    ctx.horizon = horizon;
    policy.begin_episode();
    for _ in 0..horizon {
        let obs = observe_noiseless(&state, task);
        let action = policy.act(&obs, &state, task);
        let (transition, next) = step_with_boundary(task, &boundary, &state, &action, &ctx)?;
        state = next;
        if transition.success {
            return Ok(true);
        }
        if transition.done {
            break;
        }
    }
    Ok(false)
}

/// Observation pair without noise injection (evaluation-time view).
pub fn observe_noiseless(state: &EnvState, _task: &TaskSpec) -> ObsPair {
    let pose = [state.pose.x, state.pose.y, state.pose.theta];
    let goal = [state.goal_pose.x, state.goal_pose.y, state.goal_pose.theta];
    let mut actor = Vec::with_capacity(9);
    actor.extend_from_slice(&pose);
    actor.extend_from_slice(&goal);
    actor.extend_from_slice(&[pose[0] - goal[0], pose[1] - goal[1], pose[2] - goal[2]]);
    let mut critic = actor.clone();
    critic.extend_from_slice(&state.velocity);
    critic.push(_task.friction);
    critic.push(if state.contact { 1.0 } else { 0.0 });
    ObsPair {
        actor_obs: actor,
        critic_obs: critic,
    }
}
