//! Skill retrieval strategies: nearest path signature, nearest behavior
//! embedding, nearest forward-dynamics embedding, nearest geometry
//! embedding, and predicted-transfer-success ranking with top-k candidate
//! evaluation.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::TaskClouds;
use crate::features::{segment_at, window_count, FeatureEncoders};
use crate::library::SkillLibrary;
use crate::mdp::Trajectory;
use crate::predictor::{eval_zero_shot, predict_transfer, PredictorF};
use crate::rl::MeanActionPolicy;
use crate::rng;
use crate::signature::{path_signature, SignatureVector};
use crate::task::TaskSpec;
use crate::vae::BehaviorVae;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Signature,
    Behavior,
    Forward,
    Geometry,
    Srsa,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Strategy::Signature => "signature",
            Strategy::Behavior => "behavior",
            Strategy::Forward => "forward",
            Strategy::Geometry => "geometry",
            Strategy::Srsa => "srsa",
        };
        f.write_str(name)
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signature" => Ok(Strategy::Signature),
            "behavior" => Ok(Strategy::Behavior),
            "forward" => Ok(Strategy::Forward),
            "geometry" => Ok(Strategy::Geometry),
            "srsa" => Ok(Strategy::Srsa),
            other => Err(Error::invalid(format!(
                "unknown retrieval strategy {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Candidates kept from the predictor ranking for ground-truth
    /// evaluation.
    pub top_k: usize,
    /// Feature draws averaged per prediction.
    pub m_draws: usize,
    /// Zero-shot episodes per top-k candidate.
    pub candidate_eval_episodes: usize,
    /// Cap on state-action pairs per task for the behavior baseline.
    pub max_behavior_pairs: usize,
    /// Cap on segment windows per task for the forward baseline.
    pub forward_segments_per_task: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            top_k: 5,
            m_draws: 8,
            candidate_eval_episodes: 100,
            max_behavior_pairs: 512,
            forward_segments_per_task: 128,
        }
    }
}

/// Outcome of one retrieval: the full library ranked by relevance and the
/// chosen source task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub strategy: Strategy,
    pub chosen: String,
    pub ranked: Vec<(String, f64)>,
}

/// Sorts scores descending, breaking ties by lexicographically smaller id,
/// and picks the head. Deterministic for equal scores.
fn rank_and_choose(strategy: Strategy, mut scores: Vec<(String, f64)>) -> Result<RetrievalResult> {
    if scores.is_empty() {
        return Err(Error::invalid("retrieval over an empty library"));
    }
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(RetrievalResult {
        strategy,
        chosen: scores[0].0.clone(),
        ranked: scores,
    })
}

/// Pose channel (x, y, theta) of a trajectory as a path of points.
fn pose_path(traj: &Trajectory) -> Vec<Vec<f64>> {
    let mut path: Vec<Vec<f64>> = traj
        .transitions
        .iter()
        .map(|t| t.state[..3].to_vec())
        .collect();
    if let Some(last) = traj.transitions.last() {
        path.push(last.next_state[..3].to_vec());
    }
    path
}

/// Signature baseline: each target trajectory votes for the library task
/// owning the nearest trajectory signature.
pub fn retrieve_signature(
    library: &SkillLibrary,
    target_trajs: &[Trajectory],
) -> Result<RetrievalResult> {
    if library.is_empty() {
        return Err(Error::invalid("retrieval over an empty library"));
    }
    if target_trajs.is_empty() {
        return Err(Error::invalid(
            "signature retrieval needs target trajectories",
        ));
    }
    let mut source_sigs: Vec<(usize, SignatureVector)> = Vec::new();
    for (ti, record) in library.records().iter().enumerate() {
        for traj in &record.disassembly {
            source_sigs.push((ti, path_signature(&pose_path(traj), 2)?));
        }
    }
    let mut votes = vec![0usize; library.len()];
    for traj in target_trajs {
        let sig = path_signature(&pose_path(traj), 2)?;
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (ti, ssig) in &source_sigs {
            let d = sig.euclidean_distance(ssig);
            if d < best_d {
                best_d = d;
                best = *ti;
            }
        }
        votes[best] += 1;
    }
    let scores = library
        .records()
        .iter()
        .zip(votes.iter())
        .map(|(r, v)| (r.id().to_string(), *v as f64))
        .collect();
    rank_and_choose(Strategy::Signature, scores)
}

/// Deterministic stride subsample of at most `cap` items.
fn stride_indices(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let stride = n.div_ceil(cap);
    (0..n).step_by(stride).collect()
}

fn state_action_pairs(trajs: &[Trajectory]) -> Vec<Vec<f64>> {
    let mut pairs = Vec::new();
    for traj in trajs {
        for t in &traj.transitions {
            let mut pair = t.state.clone();
            pair.extend_from_slice(&t.action);
            pairs.push(pair);
        }
    }
    pairs
}

/// Behavior baseline: each target state-action pair votes for the task
/// owning the nearest VAE latent mean.
pub fn retrieve_behavior(
    library: &SkillLibrary,
    target_trajs: &[Trajectory],
    vae: &BehaviorVae,
    cfg: &RetrievalConfig,
) -> Result<RetrievalResult> {
    if library.is_empty() {
        return Err(Error::invalid("retrieval over an empty library"));
    }
    let mut source_latents: Vec<(usize, Vec<f64>)> = Vec::new();
    for (ti, record) in library.records().iter().enumerate() {
        let pairs = state_action_pairs(&record.disassembly);
        for i in stride_indices(pairs.len(), cfg.max_behavior_pairs) {
            source_latents.push((ti, vae.latent_mean(&pairs[i])?));
        }
    }
    let target_pairs = state_action_pairs(target_trajs);
    if target_pairs.is_empty() {
        return Err(Error::invalid("behavior retrieval needs target pairs"));
    }
    let mut votes = vec![0usize; library.len()];
    for i in stride_indices(target_pairs.len(), cfg.max_behavior_pairs) {
        let z = vae.latent_mean(&target_pairs[i])?;
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (ti, sz) in &source_latents {
            let d: f64 = z
                .iter()
                .zip(sz.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best_d {
                best_d = d;
                best = *ti;
            }
        }
        votes[best] += 1;
    }
    let scores = library
        .records()
        .iter()
        .zip(votes.iter())
        .map(|(r, v)| (r.id().to_string(), *v as f64))
        .collect();
    rank_and_choose(Strategy::Behavior, scores)
}

/// Mean dynamics embedding of a task's trajectories over a deterministic
/// subsample of segment windows.
fn mean_dynamics_embedding(
    trajs: &[Trajectory],
    encoders: &FeatureEncoders,
    cap: usize,
) -> Result<Vec<f64>> {
    let h = encoders.cfg.segment_len;
    let mut windows: Vec<(usize, usize)> = Vec::new();
    for (i, traj) in trajs.iter().enumerate() {
        for start in 0..window_count(traj, h) {
            windows.push((i, start));
        }
    }
    if windows.is_empty() {
        return Err(Error::invalid("no segment windows for dynamics embedding"));
    }
    let picks = stride_indices(windows.len(), cap);
    let dim = encoders.dynamics.output_dim();
    let mut mean = vec![0.0; dim];
    for &w in &picks {
        let (i, start) = windows[w];
        let seg = segment_at(&trajs[i], h, start);
        let z = encoders
            .dynamics
            .forward(&seg.flatten(&encoders.normalizer))?;
        for (m, zi) in mean.iter_mut().zip(z.iter()) {
            *m += zi;
        }
    }
    let inv = 1.0 / picks.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    Ok(mean)
}

/// Forward baseline: nearest per-task mean dynamics embedding.
pub fn retrieve_forward(
    library: &SkillLibrary,
    target_trajs: &[Trajectory],
    encoders: &FeatureEncoders,
    cfg: &RetrievalConfig,
) -> Result<RetrievalResult> {
    if library.is_empty() {
        return Err(Error::invalid("retrieval over an empty library"));
    }
    let target = mean_dynamics_embedding(target_trajs, encoders, cfg.forward_segments_per_task)?;
    let mut scores = Vec::with_capacity(library.len());
    for record in library.records() {
        let z =
            mean_dynamics_embedding(&record.disassembly, encoders, cfg.forward_segments_per_task)?;
        let d: f64 = target
            .iter()
            .zip(z.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        scores.push((record.id().to_string(), -d));
    }
    rank_and_choose(Strategy::Forward, scores)
}

fn geometry_embedding(clouds: &TaskClouds, encoders: &FeatureEncoders) -> Result<Vec<f64>> {
    let mut z = encoders.geom.encode(&clouds.plug)?;
    z.extend(encoders.geom.encode(&clouds.socket)?);
    z.extend(encoders.geom.encode(&clouds.assembled)?);
    Ok(z)
}

/// Geometry baseline: nearest concatenated (plug, socket, assembled)
/// point-cloud embedding over the stored clouds.
pub fn retrieve_geometry(
    library: &SkillLibrary,
    target_clouds: &TaskClouds,
    encoders: &FeatureEncoders,
) -> Result<RetrievalResult> {
    if library.is_empty() {
        return Err(Error::invalid("retrieval over an empty library"));
    }
    let target = geometry_embedding(target_clouds, encoders)?;
    let mut scores = Vec::with_capacity(library.len());
    for record in library.records() {
        let z = geometry_embedding(&record.clouds, encoders)?;
        let d: f64 = target
            .iter()
            .zip(z.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        scores.push((record.id().to_string(), -d));
    }
    rank_and_choose(Strategy::Geometry, scores)
}

/// Picks the candidate with the highest measured success, breaking ties by
/// higher predicted score, then lexicographic id.
fn select_candidate(candidates: &[(String, f64, f64)]) -> String {
    let mut best = &candidates[0];
    for c in &candidates[1..] {
        let better = c.2.total_cmp(&best.2).then(c.1.total_cmp(&best.1));
        if better == std::cmp::Ordering::Greater
            || (better == std::cmp::Ordering::Equal && c.0 < best.0)
        {
            best = c;
        }
    }
    best.0.clone()
}

/// Predictor-guided retrieval: rank every source by averaged predicted
/// transfer success, evaluate the top-k candidates zero-shot on the target,
/// and choose the best measured candidate.
pub fn retrieve_srsa(
    library: &SkillLibrary,
    target: (&TaskSpec, &[Trajectory]),
    f: &PredictorF,
    encoders: &FeatureEncoders,
    cfg: &RetrievalConfig,
    seed: u64,
) -> Result<RetrievalResult> {
    if library.is_empty() {
        return Err(Error::invalid("retrieval over an empty library"));
    }
    if cfg.top_k == 0 {
        return Err(Error::invalid("top_k must be >= 1"));
    }
    let mut scores = Vec::with_capacity(library.len());
    for (si, record) in library.records().iter().enumerate() {
        let src_success = f.include_source_success.then_some(record.train_success);
        let pred = predict_transfer(
            f,
            (&record.task, record.disassembly.as_slice()),
            target,
            encoders,
            src_success,
            cfg.m_draws,
            rng::mix_seed(seed, si as u64),
        )?;
        scores.push((record.id().to_string(), pred));
    }
    let ranked = rank_and_choose(Strategy::Srsa, scores)?.ranked;

    let k = cfg.top_k.min(ranked.len());
    let mut candidates = Vec::with_capacity(k);
    for (rank, (id, pred)) in ranked.iter().take(k).enumerate() {
        let record = library.get(id).unwrap();
        let policy = MeanActionPolicy {
            policy: &record.policy,
        };
        let measured = eval_zero_shot(
            &policy,
            target.0,
            cfg.candidate_eval_episodes,
            rng::mix_seed(seed, 0xEAA0 + rank as u64),
        )?;
        candidates.push((id.clone(), *pred, measured));
    }
    let chosen = select_candidate(&candidates);
    Ok(RetrievalResult {
        strategy: Strategy::Srsa,
        chosen,
        ranked,
    })
}

/// Diagnostic: exhaustively evaluates every source policy on the target and
/// ranks by measured success. Too expensive for the main pipeline; used for
/// the per-task optimal reference.
pub fn oracle_best_source(
    library: &SkillLibrary,
    target: &TaskSpec,
    episodes: usize,
    seed: u64,
) -> Result<RetrievalResult> {
    if library.is_empty() {
        return Err(Error::invalid("retrieval over an empty library"));
    }
    let mut scores = Vec::with_capacity(library.len());
    for (si, record) in library.records().iter().enumerate() {
        let policy = MeanActionPolicy {
            policy: &record.policy,
        };
        let measured = eval_zero_shot(&policy, target, episodes, rng::mix_seed(seed, si as u64))?;
        scores.push((record.id().to_string(), measured));
    }
    let mut result = rank_and_choose(Strategy::Srsa, scores)?;
    result.strategy = Strategy::Srsa;
    Ok(result)
}
