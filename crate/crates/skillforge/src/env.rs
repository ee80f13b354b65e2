//! The 2D insertion environment: contact stepping with collision projection
//! and a friction rule, dense/sparse rewards, success checks, reset
//! distributions, curriculum state, and boundary point clouds.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Pose};
use crate::mdp::{Trajectory, Transition};
use crate::rng;
use crate::task::{RewardMode, TaskSpec, PENETRATION_TOL, SUCCESS_THETA_TOL};

pub const ENV_STATE_DIM: usize = 6; // x, y, theta, dx, dy, dtheta
pub const ENV_ACTION_DIM: usize = 3;
pub const ACTOR_OBS_DIM: usize = 9;
pub const CRITIC_OBS_DIM: usize = 14;
/// Episode length of the environment.
pub const DEFAULT_HORIZON: usize = 64;
/// Highest curriculum level; level 0 starts almost inserted, the maximum
/// level starts fully above the socket.
pub const MAX_CURRICULUM_LEVEL: usize = 7;
/// Length-per-radian weight used in the pose distance.
pub const THETA_LENGTH_SCALE: f64 = 0.25;
/// Max push-out iterations before a step reverts.
const MAX_PROJECTION_ITERS: usize = 16;
/// Workspace bounds relative to the socket.
const WORKSPACE_X: f64 = 3.0;
const WORKSPACE_Y_MARGIN: f64 = 3.0;
const WORKSPACE_THETA: f64 = 1.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub pose: Pose,
    /// Achieved displacement of the previous step.
    pub velocity: [f64; 3],
    pub goal_pose: Pose,
    pub contact: bool,
    pub step_index: usize,
}

impl EnvState {
    /// Canonical state vector: pose then velocity.
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.pose.x,
            self.pose.y,
            self.pose.theta,
            self.velocity[0],
            self.velocity[1],
            self.velocity[2],
        ]
    }
}

/// Actor/critic observation pair. The critic sees privileged state the actor
/// does not (velocity, friction, contact).
#[derive(Clone, Debug, PartialEq)]
pub struct ObsPair {
    pub actor_obs: Vec<f64>,
    pub critic_obs: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    /// Distance-to-goal penalty.
    pub w_d: f64,
    /// Penetration penalty.
    pub w_p: f64,
    /// Curriculum level bonus.
    pub w_c: f64,
    /// Imitation (distance to the reversed disassembly path) penalty.
    pub w_i: f64,
    /// Success bonus.
    pub w_s: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_d: 1.0,
            w_p: 2.0,
            w_c: 0.1,
            w_i: 0.5,
            w_s: 10.0,
        }
    }
}

/// Success-rate-windowed curriculum over initial insertion depths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub level: usize,
    pub max_level: usize,
    pub window: Vec<bool>,
    pub window_len: usize,
    pub promote_threshold: f64,
    pub demote_threshold: f64,
}

impl Default for CurriculumState {
    fn default() -> Self {
        CurriculumState {
            level: 0,
            max_level: MAX_CURRICULUM_LEVEL,
            window: Vec::new(),
            window_len: 50,
            promote_threshold: 0.8,
            demote_threshold: 0.2,
        }
    }
}

/// Pushes one episode outcome into the window; once the window is full, a
/// mean at or above the promote threshold raises the level and a mean at or
/// below the demote threshold lowers it. The window clears on level change.
pub fn curriculum_update(mut curr: CurriculumState, episode_success: bool) -> CurriculumState {
    curr.window.push(episode_success);
    if curr.window.len() > curr.window_len {
        curr.window.remove(0);
    }
    if curr.window.len() == curr.window_len {
        let mean = curr.window.iter().filter(|s| **s).count() as f64 / curr.window_len as f64;
        if mean >= curr.promote_threshold && curr.level < curr.max_level {
            curr.level += 1;
            curr.window.clear();
        } else if mean <= curr.demote_threshold && curr.level > 0 {
            curr.level -= 1;
            curr.window.clear();
        }
    }
    curr
}

/// Success: the pose sits within the closed tolerance box around the goal.
/// Position tolerance is clearance/4 per axis; orientation tolerance 0.05 rad.
pub fn is_success(state: &EnvState, task: &TaskSpec) -> bool {
    let goal = task.goal();
    let eps = task.success_pos_tol();
    (state.pose.x - goal.x).abs() <= eps
        && (state.pose.y - goal.y).abs() <= eps
        && (state.pose.theta - goal.theta).abs() <= SUCCESS_THETA_TOL
}

pub fn sparse_reward(next_state: &EnvState, task: &TaskSpec) -> f64 {
    if is_success(next_state, task) {
        1.0
    } else {
        0.0
    }
}

/// Weighted pose distance used in the dense reward.
pub fn pose_distance(pose: &Pose, goal: &Pose) -> f64 {
    let dx = pose.x - goal.x;
    let dy = pose.y - goal.y;
    let dt = THETA_LENGTH_SCALE * (pose.theta - goal.theta);
    (dx * dx + dy * dy + dt * dt).sqrt()
}

/// Penetration depth of the plug at a pose, using the task's fixed boundary
/// samples.
pub fn plug_penetration(task: &TaskSpec, pose: &Pose) -> f64 {
    let boundary = task.collision_boundary();
    penetration_with_boundary(task, &boundary, pose).0
}

fn penetration_with_boundary(
    task: &TaskSpec,
    boundary: &[[f64; 2]],
    pose: &Pose,
) -> (f64, [f64; 2]) {
    let socket = task.socket();
    let mut depth = 0.0;
    let mut push = [0.0, 0.0];
    for p in boundary {
        let world = pose.transform_point(*p);
        let (d, v) = socket.point_penetration(world);
        if d > depth {
            depth = d;
            push = v;
        }
    }
    (depth, push)
}

/// Dense reward: distance-to-goal and penetration penalties, a curriculum
/// level bonus, an imitation penalty toward the disassembly path polyline,
/// and a success bonus.
pub fn dense_reward(
    _state: &EnvState,
    next_state: &EnvState,
    task: &TaskSpec,
    imitation_path: Option<&Trajectory>,
    curriculum_level: usize,
    weights: &RewardWeights,
) -> f64 {
    let polyline = imitation_path.map(trajectory_polyline);
    dense_reward_inner(
        next_state,
        task,
        polyline.as_deref(),
        curriculum_level,
        weights,
        None,
    )
}

fn dense_reward_inner(
    next_state: &EnvState,
    task: &TaskSpec,
    imitation: Option<&[[f64; 2]]>,
    curriculum_level: usize,
    weights: &RewardWeights,
    boundary: Option<&[[f64; 2]]>,
) -> f64 {
    let dist = pose_distance(&next_state.pose, &task.goal());
    let pen = match boundary {
        Some(b) => penetration_with_boundary(task, b, &next_state.pose).0,
        None => plug_penetration(task, &next_state.pose),
    };
    let imit = imitation
        .map(|poly| geom::point_polyline_distance([next_state.pose.x, next_state.pose.y], poly))
        .unwrap_or(0.0);
    let success = if is_success(next_state, task) {
        1.0
    } else {
        0.0
    };
    // The difficulty bonus pays out on success only; an unconditional
    // per-step bonus would reward loitering near the socket over inserting.
    -weights.w_d * dist - weights.w_p * pen + weights.w_c * curriculum_level as f64 * success
        - weights.w_i * imit
        + weights.w_s * success
}

/// The (x, y) polyline of a trajectory: every state pose plus the final
/// next-state pose.
pub fn trajectory_polyline(traj: &Trajectory) -> Vec<[f64; 2]> {
    let mut poly: Vec<[f64; 2]> = traj
        .transitions
        .iter()
        .map(|t| [t.state[0], t.state[1]])
        .collect();
    if let Some(last) = traj.transitions.last() {
        poly.push([last.next_state[0], last.next_state[1]]);
    }
    poly
}

/// Everything `step` needs beyond the kinematic state.
#[derive(Clone, Copy)]
pub struct StepContext<'a> {
    pub reward_mode: RewardMode,
    pub weights: &'a RewardWeights,
    pub imitation: Option<&'a [[f64; 2]]>,
    pub curriculum_level: usize,
    pub horizon: usize,
}

impl<'a> StepContext<'a> {
    pub fn new(reward_mode: RewardMode, weights: &'a RewardWeights) -> Self {
        StepContext {
            reward_mode,
            weights,
            imitation: None,
            curriculum_level: MAX_CURRICULUM_LEVEL,
            horizon: DEFAULT_HORIZON,
        }
    }
}

fn clamp_workspace(task: &TaskSpec, pose: &mut Pose) {
    let wx = WORKSPACE_X * task.socket_width;
    pose.x = pose.x.clamp(-wx, wx);
    pose.y = pose.y.clamp(
        0.0,
        task.socket_depth + WORKSPACE_Y_MARGIN * task.socket_width,
    );
    pose.theta = pose.theta.clamp(-WORKSPACE_THETA, WORKSPACE_THETA);
}

/// Iterative push-out. Returns the resolved pose, whether any contact
/// occurred, and the summed push direction; `None` when the pose cannot be
/// freed within the iteration budget.
fn project_free(
    task: &TaskSpec,
    boundary: &[[f64; 2]],
    mut pose: Pose,
) -> Option<(Pose, bool, [f64; 2])> {
    let mut contact = false;
    let mut push_sum = [0.0, 0.0];
    for _ in 0..MAX_PROJECTION_ITERS {
        let (depth, push) = penetration_with_boundary(task, boundary, &pose);
        if depth <= PENETRATION_TOL {
            return Some((pose, contact, push_sum));
        }
        contact = true;
        pose.x += push[0];
        pose.y += push[1];
        push_sum[0] += push[0];
        push_sum[1] += push[1];
    }
    None
}

/// One environment step from an explicit state. Deterministic: identical
/// inputs produce bitwise-identical outputs.
///
/// The action is clamped per axis to the task's action bound, the proposed
/// pose is projected out of collision, and while in contact the tangential
/// displacement is scaled by 1/(1+friction).
pub fn step(
    task: &TaskSpec,
    state: &EnvState,
    action: &[f64],
    ctx: &StepContext,
) -> Result<(Transition, EnvState)> {
    let boundary = task.collision_boundary();
    step_with_boundary(task, &boundary, state, action, ctx)
}

pub fn step_with_boundary(
    task: &TaskSpec,
    boundary: &[[f64; 2]],
    state: &EnvState,
    action: &[f64],
    ctx: &StepContext,
) -> Result<(Transition, EnvState)> {
    if action.len() != ENV_ACTION_DIM {
        return Err(Error::invalid(format!(
            "action length {} != 3",
            action.len()
        )));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::invalid("action contains NaN or infinity"));
    }
    let bound = task.action_bound();
    let delta = [
        action[0].clamp(-bound, bound),
        action[1].clamp(-bound, bound),
        action[2].clamp(-bound, bound),
    ];
    let old = state.pose;
    let mut proposed = Pose::new(old.x + delta[0], old.y + delta[1], old.theta + delta[2]);
    clamp_workspace(task, &mut proposed);

    let (resolved, contact, push_sum) = match project_free(task, boundary, proposed) {
        Some(r) => r,
        None => {
            // Rotation may have wedged the plug: retry with the old angle,
            // then fall back to not moving at all.
            let mut no_rot = Pose::new(proposed.x, proposed.y, old.theta);
            clamp_workspace(task, &mut no_rot);
            match project_free(task, boundary, no_rot) {
                Some((p, _, push)) => (p, true, push),
                None => (old, true, [0.0, 0.0]),
            }
        }
    };

    let mut new_pose = resolved;
    if contact {
        // Scale the tangential part of the achieved displacement by
        // 1/(1+friction); the push direction defines the contact normal.
        let norm = (push_sum[0] * push_sum[0] + push_sum[1] * push_sum[1]).sqrt();
        let achieved = [resolved.x - old.x, resolved.y - old.y];
        let (d_par, d_tan) = if norm > 0.0 {
            let n = [push_sum[0] / norm, push_sum[1] / norm];
            let dn = achieved[0] * n[0] + achieved[1] * n[1];
            let par = [dn * n[0], dn * n[1]];
            (par, [achieved[0] - par[0], achieved[1] - par[1]])
        } else {
            ([0.0, 0.0], achieved)
        };
        let scale = 1.0 / (1.0 + task.friction);
        let scaled = Pose::new(
            old.x + d_par[0] + d_tan[0] * scale,
            old.y + d_par[1] + d_tan[1] * scale,
            resolved.theta,
        );
        if let Some((p, _, _)) = project_free(task, boundary, scaled) {
            new_pose = p;
        }
    }

    let velocity = [
        new_pose.x - old.x,
        new_pose.y - old.y,
        new_pose.theta - old.theta,
    ];
    let mut next = EnvState {
        pose: new_pose,
        velocity,
        goal_pose: state.goal_pose,
        contact,
        step_index: state.step_index + 1,
    };
    let success = is_success(&next, task);
    let done = success || next.step_index >= ctx.horizon;
    let reward = match ctx.reward_mode {
        RewardMode::Sparse => sparse_reward(&next, task),
        RewardMode::Dense => dense_reward_inner(
            &next,
            task,
            ctx.imitation,
            ctx.curriculum_level,
            ctx.weights,
            Some(boundary),
        ),
    };
    next.contact = contact;
    let transition = Transition {
        state: state.to_vec(),
        action: delta.to_vec(),
        reward,
        next_state: next.to_vec(),
        done,
        success,
    };
    Ok((transition, next))
}

/// Samples an initial state. With a curriculum, each reset draws a level
/// uniformly from {0..current}, then starts in a disc around that level's
/// start height: level 0 sits one success tolerance above the goal, the
/// maximum level fully above the socket, so a promoted environment trains
/// on a mixture of depths up to full difficulty. Lateral and angular
/// randomization scale with the drawn level so shallow starts stay inside
/// the channel slack. `None` means full difficulty. Resamples up to 100
/// times for a penetration-free pose.
pub fn reset(
    task: &TaskSpec,
    rng: &mut ChaCha8Rng,
    curriculum: Option<&CurriculumState>,
) -> Result<EnvState> {
    let boundary = task.collision_boundary();
    reset_with_boundary(task, &boundary, rng, curriculum)
}

pub fn reset_with_boundary(
    task: &TaskSpec,
    boundary: &[[f64; 2]],
    rng: &mut ChaCha8Rng,
    curriculum: Option<&CurriculumState>,
) -> Result<EnvState> {
    let (level, max_level) = match curriculum {
        Some(c) => {
            let cap = c.level.min(c.max_level);
            let drawn = if cap > 0 {
                rng.random_range(0..=cap)
            } else {
                0
            };
            (drawn, c.max_level.max(1))
        }
        None => (MAX_CURRICULUM_LEVEL, MAX_CURRICULUM_LEVEL),
    };
    let frac = level as f64 / max_level as f64;
    let goal = task.goal();
    let easy_y = goal.y + task.success_pos_tol();
    let hard_y = task.socket_depth + 0.5 * task.socket_width;
    let start_y = easy_y + (hard_y - easy_y) * frac;
    let scale = frac.max(0.05);

    for _ in 0..100 {
        let r = task.init_radius * scale * rng::uniform(rng, 0.0, 1.0).sqrt();
        let ang = rng::uniform(rng, 0.0, std::f64::consts::TAU);
        let theta = goal.theta + rng::uniform(rng, -1.0, 1.0) * task.init_angle_range * scale;
        let mut pose = Pose::new(goal.x + r * ang.cos(), start_y + r * ang.sin(), theta);
        clamp_workspace(task, &mut pose);
        let (depth, _) = penetration_with_boundary(task, boundary, &pose);
        if depth <= PENETRATION_TOL {
            return Ok(EnvState {
                pose,
                velocity: [0.0; 3],
                goal_pose: goal,
                contact: false,
                step_index: 0,
            });
        }
    }
    Err(Error::Infeasible(format!(
        "task {}: no penetration-free reset pose in 100 tries at level {level}",
        task.id
    )))
}

/// Which boundary a point cloud is sampled from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudPart {
    Plug,
    Socket,
    Assembled,
}

/// Half-extent of the socket block used for its boundary polyline.
pub const BLOCK_HALF_EXTENT: f64 = 1.5;

/// Uniform-by-arc-length boundary point cloud of the plug (plug frame), the
/// socket, or the assembled pair (plug placed at the goal pose).
pub fn sample_point_cloud(
    task: &TaskSpec,
    which: CloudPart,
    n_points: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<[f64; 2]>> {
    if n_points < 3 {
        return Err(Error::invalid("point cloud needs at least 3 points"));
    }
    let socket_chain = task
        .socket()
        .boundary_polyline(BLOCK_HALF_EXTENT * task.socket_width);
    match which {
        CloudPart::Plug => {
            let chain = geom::closed_chain(&task.plug_profile);
            Ok(geom::sample_polylines(&[&chain], n_points, rng))
        }
        CloudPart::Socket => Ok(geom::sample_polylines(&[&socket_chain], n_points, rng)),
        CloudPart::Assembled => {
            let goal = task.goal();
            let plug_world: Vec<[f64; 2]> = task
                .plug_profile
                .iter()
                .map(|p| goal.transform_point(*p))
                .collect();
            let plug_chain = geom::closed_chain(&plug_world);
            Ok(geom::sample_polylines(
                &[&plug_chain, &socket_chain],
                n_points,
                rng,
            ))
        }
    }
}

/// A stateful environment owning its RNG, cached collision boundary, and
/// reward context. Batches of these are independent and can be stepped in
/// parallel.
#[derive(Clone)]
pub struct Env {
    pub task: TaskSpec,
    pub weights: RewardWeights,
    pub reward_mode: RewardMode,
    pub horizon: usize,
    pub imitation: Option<Vec<[f64; 2]>>,
    pub curriculum_level: Option<usize>,
    boundary: Vec<[f64; 2]>,
    state: EnvState,
    rng: ChaCha8Rng,
}

impl Env {
    pub fn new(task: TaskSpec, seed: u64) -> Result<Self> {
        let boundary = task.collision_boundary();
        let mut rng = rng::rng_from(seed);
        let state = reset_with_boundary(&task, &boundary, &mut rng, None)?;
        Ok(Env {
            weights: RewardWeights::default(),
            reward_mode: task.reward_mode,
            horizon: DEFAULT_HORIZON,
            imitation: None,
            curriculum_level: None,
            boundary,
            state,
            task,
            rng,
        })
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn set_rng(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }

    pub fn reset(&mut self) -> Result<&EnvState> {
        let curr = self.curriculum_level.map(|level| CurriculumState {
            level,
            ..CurriculumState::default()
        });
        self.state = reset_with_boundary(&self.task, &self.boundary, &mut self.rng, curr.as_ref())?;
        Ok(&self.state)
    }

    /// Steps the environment; the caller resets after `done`.
    pub fn step(&mut self, action: &[f64]) -> Result<Transition> {
        let ctx = StepContext {
            reward_mode: self.reward_mode,
            weights: &self.weights,
            imitation: self.imitation.as_deref(),
            curriculum_level: self.curriculum_level.unwrap_or(MAX_CURRICULUM_LEVEL),
            horizon: self.horizon,
        };
        let (transition, next) =
            step_with_boundary(&self.task, &self.boundary, &self.state, action, &ctx)?;
        self.state = next;
        Ok(transition)
    }

    /// Builds the observation pair for the current state, adding actor pose
    /// noise when the task requests it.
    pub fn observe(&mut self) -> ObsPair {
        let s = &self.state;
        let mut pose = [s.pose.x, s.pose.y, s.pose.theta];
        if self.task.obs_noise_std > 0.0 {
            for p in &mut pose {
                *p += self.task.obs_noise_std * rng::normal(&mut self.rng);
            }
        }
        let goal = [s.goal_pose.x, s.goal_pose.y, s.goal_pose.theta];
        let mut actor = Vec::with_capacity(ACTOR_OBS_DIM);
        actor.extend_from_slice(&pose);
        actor.extend_from_slice(&goal);
        actor.extend_from_slice(&[pose[0] - goal[0], pose[1] - goal[1], pose[2] - goal[2]]);
        let mut critic = actor.clone();
        critic.extend_from_slice(&s.velocity);
        critic.push(self.task.friction);
        critic.push(if s.contact { 1.0 } else { 0.0 });
        ObsPair {
            actor_obs: actor,
            critic_obs: critic,
        }
    }
}

/// Anything that can drive an environment rollout.
pub trait RolloutPolicy: Send {
    /// Called at the start of each episode.
    fn begin_episode(&mut self) {}
    fn act(&mut self, obs: &ObsPair, state: &EnvState, task: &TaskSpec) -> [f64; 3];
}

/// Always outputs zeros; useful as a do-nothing baseline.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroPolicy;

impl RolloutPolicy for ZeroPolicy {
    fn act(&mut self, _obs: &ObsPair, _state: &EnvState, _task: &TaskSpec) -> [f64; 3] {
        [0.0; 3]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use crate::task::make_task_family;

    fn wide_task() -> TaskSpec {
        // Hand-built task with a generous clearance so small offsets stay
        // contact-free.
        let w = 0.35;
        TaskSpec {
            schema_version: 1,
            id: "wide".into(),
            socket_width: 1.0,
            socket_depth: 1.0,
            profile_class: crate::task::ProfileClass::Rectangle,
            plug_profile: vec![[-w, 0.0], [w, 0.0], [w, 0.9], [-w, 0.9]],
            clearance: 1.0 - 2.0 * w,
            friction: 0.5,
            goal_pose: [0.0, 0.0, 0.0],
            init_radius: 0.25,
            init_angle_range: 0.3,
            reward_mode: RewardMode::Dense,
            obs_noise_std: 0.0,
        }
    }

    fn state_at(task: &TaskSpec, x: f64, y: f64, theta: f64) -> EnvState {
        EnvState {
            pose: Pose::new(x, y, theta),
            velocity: [0.0; 3],
            goal_pose: task.goal(),
            contact: false,
            step_index: 0,
        }
    }

    #[test]
    fn zero_action_in_free_space_is_identity() {
        let task = wide_task();
        let weights = RewardWeights::default();
        let ctx = StepContext::new(RewardMode::Dense, &weights);
        let state = state_at(&task, 0.0, 2.0, 0.0);
        let (tr, next) = step(&task, &state, &[0.0, 0.0, 0.0], &ctx).unwrap();
        assert_eq!(next.pose, state.pose);
        assert!(!next.contact);
        assert!(!tr.done);
        assert_eq!(next.velocity, [0.0; 3]);
    }

    #[test]
    fn step_is_bitwise_deterministic() {
        let task = make_task_family(1, 3).unwrap().pop().unwrap();
        let weights = RewardWeights::default();
        let ctx = StepContext::new(RewardMode::Dense, &weights);
        let state = state_at(&task, 0.1, 0.8, 0.05);
        let action = [0.03, -0.05, 0.01];
        let (a, sa) = step(&task, &state, &action, &ctx).unwrap();
        let (b, sb) = step(&task, &state, &action, &ctx).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn pushing_into_wall_stops_at_wall_with_contact() {
        let task = wide_task();
        let weights = RewardWeights::default();
        let ctx = StepContext::new(RewardMode::Dense, &weights);
        // Inside the channel, just left of the right wall.
        let x0 = 0.5 - 0.35 - 0.01; // wall at 0.5, plug half-width 0.35
        let state = state_at(&task, x0, 0.02, 0.0);
        let (_, next) = step(&task, &state, &[0.05, 0.0, 0.0], &ctx).unwrap();
        assert!(next.contact);
        let max_x = 0.5 - 0.35;
        assert!((next.pose.x - max_x).abs() < 1e-9, "x = {}", next.pose.x);
        // Result is penetration-free.
        assert!(plug_penetration(&task, &next.pose) <= PENETRATION_TOL);
    }

    #[test]
    fn friction_scales_tangential_progress_exactly() {
        let progress = |friction: f64| -> f64 {
            let mut task = wide_task();
            task.friction = friction;
            let weights = RewardWeights::default();
            let ctx = StepContext::new(RewardMode::Dense, &weights);
            // Hugging the right wall, push diagonally into it and downward.
            let x0 = 0.5 - 0.35;
            let y0 = 0.5;
            let state = state_at(&task, x0, y0, 0.0);
            let (_, next) = step(&task, &state, &[0.05, -0.05, 0.0], &ctx).unwrap();
            assert!(next.contact);
            y0 - next.pose.y
        };
        let p0 = progress(0.0);
        let p10 = progress(10.0);
        assert!(p0 > 0.0);
        // Ratio 1 : 1/11 means p0 / p10 == 11.
        assert!((p0 / p10 - 11.0).abs() < 1e-9, "ratio {}", p0 / p10);
    }

    #[test]
    fn success_tolerances_are_closed() {
        let task = wide_task();
        let eps = task.success_pos_tol();
        assert!(is_success(&state_at(&task, 0.0, 0.0, 0.0), &task));
        assert!(is_success(&state_at(&task, eps, 0.0, 0.0), &task));
        assert!(!is_success(&state_at(&task, 2.0 * eps, 0.0, 0.0), &task));
        assert!(is_success(
            &state_at(&task, 0.0, eps, SUCCESS_THETA_TOL),
            &task
        ));
        assert!(!is_success(
            &state_at(&task, 0.0, 0.0, 1.5 * SUCCESS_THETA_TOL),
            &task
        ));
    }

    #[test]
    fn sparse_reward_iff_success() {
        let task = wide_task();
        let mut rng = rng_from(0);
        for _ in 0..2000 {
            let s = state_at(
                &task,
                rng::uniform(&mut rng, -0.5, 0.5),
                rng::uniform(&mut rng, 0.0, 2.0),
                rng::uniform(&mut rng, -0.3, 0.3),
            );
            let r = sparse_reward(&s, &task);
            assert_eq!(r == 1.0, is_success(&s, &task));
            assert!(r == 0.0 || r == 1.0);
        }
    }

    #[test]
    fn dense_reward_hand_cases() {
        let task = wide_task();
        // Fixed offset (0.1, 0, 0) with weights (1, 1, 0, 0, 0): reward is
        // exactly -0.1 because the offset stays contact-free.
        let w = RewardWeights {
            w_d: 1.0,
            w_p: 1.0,
            w_c: 0.0,
            w_i: 0.0,
            w_s: 0.0,
        };
        let s0 = state_at(&task, 0.0, 1.5, 0.0);
        let s1 = state_at(&task, 0.1, 0.0, 0.0);
        let r = dense_reward(&s0, &s1, &task, None, 0, &w);
        assert!((r + 0.1).abs() < 1e-12, "r = {r}");

        // At the goal with success: only the level bonus and success bonus.
        let w2 = RewardWeights::default();
        let goal_state = state_at(&task, 0.0, 0.0, 0.0);
        let r2 = dense_reward(&s0, &goal_state, &task, None, 3, &w2);
        assert!((r2 - (w2.w_c * 3.0 + w2.w_s)).abs() < 1e-12, "r = {r2}");
    }

    #[test]
    fn on_path_imitation_term_is_zero() {
        let task = wide_task();
        let w = RewardWeights {
            w_d: 0.0,
            w_p: 0.0,
            w_c: 0.0,
            w_i: 1.0,
            w_s: 0.0,
        };
        // Build a tiny trajectory passing through (0.2, 1.0).
        let tr = |a: [f64; 3], b: [f64; 3]| Transition {
            state: vec![a[0], a[1], a[2], 0.0, 0.0, 0.0],
            action: vec![0.0; 3],
            reward: 0.0,
            next_state: vec![b[0], b[1], b[2], 0.0, 0.0, 0.0],
            done: false,
            success: false,
        };
        let traj = Trajectory {
            transitions: vec![
                tr([0.2, 0.5, 0.0], [0.2, 1.0, 0.0]),
                tr([0.2, 1.0, 0.0], [0.2, 1.5, 0.0]),
            ],
            returns: None,
        };
        let s0 = state_at(&task, 0.0, 2.0, 0.0);
        let on_path = state_at(&task, 0.2, 1.0, 0.0);
        let r = dense_reward(&s0, &on_path, &task, Some(&traj), 0, &w);
        assert_eq!(r, 0.0);
        let off_path = state_at(&task, 0.7, 1.0, 0.0);
        assert!(dense_reward(&s0, &off_path, &task, Some(&traj), 0, &w) < 0.0);
    }

    #[test]
    fn reset_level_zero_with_no_randomization_is_exact() {
        let mut task = wide_task();
        task.init_radius = 0.0;
        task.init_angle_range = 0.0;
        let mut rng = rng_from(1);
        let curr = CurriculumState::default(); // level 0
        let s = reset(&task, &mut rng, Some(&curr)).unwrap();
        assert_eq!(s.pose.x, 0.0);
        assert_eq!(s.pose.theta, 0.0);
        assert!((s.pose.y - task.success_pos_tol()).abs() < 1e-12);
        assert_eq!(s.velocity, [0.0; 3]);
        assert_eq!(s.step_index, 0);
    }

    #[test]
    fn resets_are_penetration_free_across_levels() {
        let tasks = make_task_family(6, 11).unwrap();
        let mut rng = rng_from(2);
        for task in &tasks {
            for level in 0..=MAX_CURRICULUM_LEVEL {
                let curr = CurriculumState {
                    level,
                    ..CurriculumState::default()
                };
                for _ in 0..40 {
                    let s = reset(&task.clone(), &mut rng, Some(&curr)).unwrap();
                    assert!(plug_penetration(task, &s.pose) <= PENETRATION_TOL);
                }
            }
            // Full difficulty starts above the socket mouth.
            let s = reset(task, &mut rng, None).unwrap();
            assert!(s.pose.y > task.socket_depth);
        }
    }

    #[test]
    fn random_steps_never_penetrate() {
        let tasks = make_task_family(4, 7).unwrap();
        let mut rng = rng_from(3);
        let weights = RewardWeights::default();
        for task in &tasks {
            let boundary = task.collision_boundary();
            let ctx = StepContext::new(RewardMode::Dense, &weights);
            let mut state = reset(task, &mut rng, None).unwrap();
            for i in 0..5000 {
                let action = [
                    rng::uniform(&mut rng, -0.1, 0.1),
                    rng::uniform(&mut rng, -0.1, 0.1),
                    rng::uniform(&mut rng, -0.05, 0.05),
                ];
                let (_, next) = step_with_boundary(task, &boundary, &state, &action, &ctx).unwrap();
                let (depth, _) = penetration_with_boundary(task, &boundary, &next.pose);
                assert!(depth <= PENETRATION_TOL, "step {i}: depth {depth}");
                state = next;
                if state.step_index >= ctx.horizon {
                    state = reset(task, &mut rng, None).unwrap();
                }
            }
        }
    }

    #[test]
    fn nan_action_rejected() {
        let task = wide_task();
        let weights = RewardWeights::default();
        let ctx = StepContext::new(RewardMode::Dense, &weights);
        let state = state_at(&task, 0.0, 2.0, 0.0);
        assert!(step(&task, &state, &[f64::NAN, 0.0, 0.0], &ctx).is_err());
        assert!(step(&task, &state, &[0.0, 0.0], &ctx).is_err());
    }

    #[test]
    fn curriculum_update_thresholds() {
        let base = CurriculumState {
            window_len: 4,
            ..CurriculumState::default()
        };
        // Empty window: unchanged.
        let c = curriculum_update(base.clone(), true);
        assert_eq!(c.level, 0);
        // Full window of successes promotes and clears.
        let mut c = base.clone();
        for _ in 0..4 {
            c = curriculum_update(c, true);
        }
        assert_eq!(c.level, 1);
        assert!(c.window.is_empty());
        // Mean between thresholds: unchanged.
        let mut c2 = base.clone();
        for outcome in [true, false, true, false] {
            c2 = curriculum_update(c2, outcome);
        }
        assert_eq!(c2.level, 0);
        // Demotion floors at zero.
        let mut c3 = base;
        for _ in 0..4 {
            c3 = curriculum_update(c3, false);
        }
        assert_eq!(c3.level, 0);
    }

    #[test]
    fn observation_dimensions_and_privilege() {
        let task = wide_task();
        let mut env = Env::new(task, 5).unwrap();
        let obs = env.observe();
        assert_eq!(obs.actor_obs.len(), ACTOR_OBS_DIM);
        assert_eq!(obs.critic_obs.len(), CRITIC_OBS_DIM);
        assert_eq!(&obs.critic_obs[..ACTOR_OBS_DIM], &obs.actor_obs[..]);
    }

    #[test]
    fn impossible_reset_is_task_infeasible() {
        // A huge randomization disc with a sliver of clearance: level-0
        // resets cannot find a free pose in 100 tries.
        let mut task = make_task_family(1, 17).unwrap().pop().unwrap();
        task.clearance = 0.02;
        let w = (task.socket_width - task.clearance) / 2.0;
        let h = task.plug_height();
        task.plug_profile = vec![[-w, 0.0], [w, 0.0], [w, h], [-w, h]];
        task.profile_class = crate::task::ProfileClass::Rectangle;
        task.init_radius = 20.0;
        task.validate().unwrap();
        let curr = CurriculumState::default();
        let err = reset(&task, &mut rng_from(1), Some(&curr)).unwrap_err();
        assert!(matches!(err, crate::error::Error::Infeasible(_)), "{err}");
    }

    #[test]
    fn obs_noise_perturbs_actor_pose_consistently() {
        let mut task = wide_task();
        task.obs_noise_std = 0.05;
        let mut env = Env::new(task, 3).unwrap();
        let a = env.observe();
        let b = env.observe();
        // Fresh noise per observation, applied to the pose and its goal
        // difference consistently; the goal itself is exact.
        assert_ne!(a.actor_obs[..3], b.actor_obs[..3]);
        assert_eq!(a.actor_obs[3..6], b.actor_obs[3..6]);
        for i in 0..3 {
            let diff = a.actor_obs[6 + i];
            assert!((diff - (a.actor_obs[i] - a.actor_obs[3 + i])).abs() < 1e-12);
        }
        // Noise-free tasks observe exactly.
        let mut quiet = Env::new(wide_task(), 3).unwrap();
        let q1 = quiet.observe();
        let q2 = quiet.observe();
        assert_eq!(q1, q2);
    }

    #[test]
    fn point_cloud_determinism_and_parts() {
        let task = make_task_family(1, 21).unwrap().pop().unwrap();
        let a = sample_point_cloud(&task, CloudPart::Assembled, 256, &mut rng_from(4)).unwrap();
        let b = sample_point_cloud(&task, CloudPart::Assembled, 256, &mut rng_from(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 256);
        assert!(sample_point_cloud(&task, CloudPart::Plug, 2, &mut rng_from(0)).is_err());
        // Socket points lie on the socket boundary (y in [0, depth]).
        let s = sample_point_cloud(&task, CloudPart::Socket, 64, &mut rng_from(6)).unwrap();
        for p in &s {
            assert!(p[1] >= -1e-12 && p[1] <= task.socket_depth + 1e-12);
        }
    }
}
