//! Transition segments sampled from disassembly trajectories, plus the
//! per-dimension state normalizer shared by the segment encoders.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Trajectory;

/// Window length of a transition segment.
pub const SEGMENT_LEN: usize = 10;

/// `h` consecutive (state, action) pairs from one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Segment {
    pub fn h(&self) -> usize {
        self.pairs.len()
    }

    /// Flattens to `[s_0, a_0, s_1, a_1, ...]`, normalizing states.
    pub fn flatten(&self, norm: &StateNormalizer) -> Vec<f64> {
        let mut out =
            Vec::with_capacity(self.pairs.len() * (self.pairs[0].0.len() + self.pairs[0].1.len()));
        for (s, a) in &self.pairs {
            out.extend(norm.apply(s));
            out.extend_from_slice(a);
        }
        out
    }

    /// Flattened action sequence `[a_0, a_1, ...]` (reconstruction target).
    pub fn actions_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (_, a) in &self.pairs {
            out.extend_from_slice(a);
        }
        out
    }
}

/// Segment plus the probe transition right after it, for next-state
/// prediction: predict `next` from (segment context, `state`, `action`).
#[derive(Clone, Debug)]
pub struct SegmentSample {
    pub segment: Segment,
    pub probe_state: Vec<f64>,
    pub probe_action: Vec<f64>,
    pub probe_next: Vec<f64>,
}

/// Uniformly samples one contiguous window of `h` pairs; the trajectory must
/// leave at least one transition after the window for the probe.
pub fn sample_segment(traj: &Trajectory, h: usize, rng: &mut ChaCha8Rng) -> Result<Segment> {
    let start = sample_start(traj, h, rng)?;
    Ok(segment_at(traj, h, start))
}

/// As `sample_segment`, also returning the probe transition after the window.
pub fn sample_segment_with_probe(
    traj: &Trajectory,
    h: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SegmentSample> {
    let start = sample_start(traj, h, rng)?;
    Ok(segment_sample_at(traj, h, start))
}

fn sample_start(traj: &Trajectory, h: usize, rng: &mut ChaCha8Rng) -> Result<usize> {
    if h == 0 {
        return Err(Error::invalid("segment length must be >= 1"));
    }
    if traj.len() < h + 1 {
        return Err(Error::invalid(format!(
            "trajectory of length {} too short for segment length {h}",
            traj.len()
        )));
    }
    Ok(rng.random_range(0..traj.len() - h))
}

pub fn segment_at(traj: &Trajectory, h: usize, start: usize) -> Segment {
    let pairs = traj.transitions[start..start + h]
        .iter()
        .map(|t| (t.state.clone(), t.action.clone()))
        .collect();
    Segment { pairs }
}

pub fn segment_sample_at(traj: &Trajectory, h: usize, start: usize) -> SegmentSample {
    let probe = &traj.transitions[start + h];
    SegmentSample {
        segment: segment_at(traj, h, start),
        probe_state: probe.state.clone(),
        probe_action: probe.action.clone(),
        probe_next: probe.next_state.clone(),
    }
}

/// All valid window starts of a trajectory (each has a probe after it).
pub fn window_count(traj: &Trajectory, h: usize) -> usize {
    traj.len().saturating_sub(h)
}

/// Per-dimension affine normalizer fitted on trajectory states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StateNormalizer {
    pub fn identity(dim: usize) -> Self {
        StateNormalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits mean and std over every state (and final next state) in the
    /// given trajectories.
    pub fn fit<'a>(trajs: impl Iterator<Item = &'a Trajectory> + Clone, dim: usize) -> Self {
        let mut mean = vec![0.0; dim];
        let mut count = 0usize;
        for traj in trajs.clone() {
            for t in &traj.transitions {
                for (m, x) in mean.iter_mut().zip(t.state.iter()) {
                    *m += x;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Self::identity(dim);
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; dim];
        for traj in trajs {
            for t in &traj.transitions {
                for (v, (x, m)) in var.iter_mut().zip(t.state.iter().zip(mean.iter())) {
                    *v += (x - m) * (x - m);
                }
            }
        }
        let std = var
            .iter()
            .map(|v| (v / count as f64).sqrt().max(1e-8))
            .collect();
        StateNormalizer { mean, std }
    }

    pub fn apply(&self, state: &[f64]) -> Vec<f64> {
        state
            .iter()
            .zip(self.mean.iter().zip(self.std.iter()))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}
