//! Segment-based feature trainers: the dynamics context encoder with a
//! next-state prediction head, and the expert-action autoencoder.

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::segment::{segment_sample_at, window_count, StateNormalizer};
use crate::features::{
    action_decoder_arch, action_encoder_arch, dynamics_decoder_arch, dynamics_encoder_arch,
    FeatureConfig,
};
use crate::mdp::Trajectory;
use crate::nn::dense::{DenseNet, ForwardCache};
use crate::nn::AdamState;
use crate::parallel;
use crate::rng;

const GRAD_CHUNK: usize = 16;

/// Pre-extracted training windows pooled over tasks: flattened segments,
/// normalized probe inputs/targets for the dynamics head, and flattened
/// action sequences for the action autoencoder.
#[derive(Clone, Debug, Default)]
pub struct SegmentDataset {
    pub seg_flat: Vec<Vec<f64>>,
    /// `[normalized probe state, probe action]`.
    pub probe_in: Vec<Vec<f64>>,
    /// Normalized probe next state.
    pub probe_target: Vec<Vec<f64>>,
    pub actions_flat: Vec<Vec<f64>>,
}

impl SegmentDataset {
    pub fn len(&self) -> usize {
        self.seg_flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seg_flat.is_empty()
    }

    /// Draws up to `cfg.windows_per_task` segment windows per task,
    /// deterministically in `seed`.
    pub fn build(
        per_task_trajs: &[&[Trajectory]],
        norm: &StateNormalizer,
        cfg: &FeatureConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut out = SegmentDataset::default();
        let h = cfg.segment_len;
        for (task_idx, trajs) in per_task_trajs.iter().enumerate() {
            let mut rng = rng::rng_from(rng::mix_seed(seed, task_idx as u64));
            let usable: Vec<&Trajectory> =
                trajs.iter().filter(|t| window_count(t, h) > 0).collect();
            if usable.is_empty() {
                return Err(Error::invalid(format!(
                    "task index {task_idx}: no trajectory long enough for segments"
                )));
            }
            for _ in 0..cfg.windows_per_task {
                let traj = usable[rng.random_range(0..usable.len())];
                let start = rng.random_range(0..window_count(traj, h));
                let sample = segment_sample_at(traj, h, start);
                out.seg_flat.push(sample.segment.flatten(norm));
                let mut probe_in = norm.apply(&sample.probe_state);
                probe_in.extend_from_slice(&sample.probe_action);
                out.probe_in.push(probe_in);
                out.probe_target.push(norm.apply(&sample.probe_next));
                out.actions_flat.push(sample.segment.actions_flat());
            }
        }
        Ok(out)
    }
}

struct PairPartial {
    loss: f64,
    enc_grad: Vec<f64>,
    dec_grad: Vec<f64>,
}

/// Shared encoder/decoder training loop over the dataset. `probe` selects
/// dynamics mode (decoder input is `[latent, probe_in]` and the prediction
/// is residual on the probe state) versus action-reconstruction mode
/// (decoder input is the latent alone).
fn train_pair(
    mut enc: DenseNet,
    mut dec: DenseNet,
    data: &SegmentDataset,
    targets: &[Vec<f64>],
    probe: bool,
    cfg: &FeatureConfig,
    seed: u64,
) -> Result<(DenseNet, DenseNet, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::invalid("empty segment dataset"));
    }
    let latent_dim = enc.output_dim();
    let mut opt_enc = AdamState::new(enc.param_count(), cfg.seg_lr);
    let mut opt_dec = AdamState::new(dec.param_count(), cfg.seg_lr);
    let mut batch_rng = rng::rng_from(rng::mix_seed(seed, 10));
    let mut curve = Vec::with_capacity(cfg.seg_steps);

    for step in 0..cfg.seg_steps {
        let batch: Vec<usize> = (0..cfg.seg_batch)
            .map(|_| batch_rng.random_range(0..data.len()))
            .collect();
        let partials = parallel::map_chunks(batch.len(), GRAD_CHUNK, |range| {
            let mut partial = PairPartial {
                loss: 0.0,
                enc_grad: vec![0.0; enc.param_count()],
                dec_grad: vec![0.0; dec.param_count()],
            };
            let mut enc_cache = ForwardCache::default();
            let mut dec_cache = ForwardCache::default();
            let mut scratch = Vec::new();
            let mut dec_in = Vec::new();
            for bi in range {
                let i = batch[bi];
                enc.forward_cached(&data.seg_flat[i], &mut enc_cache)
                    .unwrap();
                let latent = enc_cache.acts.last().unwrap();
                dec_in.clear();
                dec_in.extend_from_slice(latent);
                if probe {
                    dec_in.extend_from_slice(&data.probe_in[i]);
                }
                dec.forward_cached(&dec_in, &mut dec_cache).unwrap();
                let raw = dec_cache.acts.last().unwrap();
                let target = &targets[i];
                // Residual prediction for dynamics: the decoder emits the
                // state delta on top of the probe state.
                let mut upstream = vec![0.0; raw.len()];
                let inv_dim = 1.0 / raw.len() as f64;
                for d in 0..raw.len() {
                    let pred = if probe {
                        raw[d] + data.probe_in[i][d]
                    } else {
                        raw[d]
                    };
                    let err = pred - target[d];
                    partial.loss += inv_dim * err * err;
                    upstream[d] = 2.0 * inv_dim * err;
                }
                let mut dec_in_grad = Vec::new();
                dec.backward_cached(
                    &dec_cache,
                    &upstream,
                    &mut partial.dec_grad,
                    &mut dec_in_grad,
                    &mut scratch,
                );
                let mut enc_in_grad = Vec::new();
                enc.backward_cached(
                    &enc_cache,
                    &dec_in_grad[..latent_dim],
                    &mut partial.enc_grad,
                    &mut enc_in_grad,
                    &mut scratch,
                );
            }
            partial
        });

        let mut enc_grad = vec![0.0; enc.param_count()];
        let mut dec_grad = vec![0.0; dec.param_count()];
        let mut loss_sum = 0.0;
        for p in &partials {
            loss_sum += p.loss;
            parallel::fold_grads(&mut enc_grad, std::slice::from_ref(&p.enc_grad));
            parallel::fold_grads(&mut dec_grad, std::slice::from_ref(&p.dec_grad));
        }
        let inv = 1.0 / cfg.seg_batch as f64;
        enc_grad.iter_mut().for_each(|g| *g *= inv);
        dec_grad.iter_mut().for_each(|g| *g *= inv);
        let mean_loss = loss_sum * inv;
        if !mean_loss.is_finite() {
            return Err(Error::Training(format!(
                "segment trainer loss became {mean_loss} at step {step}"
            )));
        }
        opt_enc.step(&mut enc.params, &enc_grad)?;
        opt_dec.step(&mut dec.params, &dec_grad)?;
        curve.push(mean_loss);
    }
    Ok((enc, dec, curve))
}

/// Trains the dynamics context encoder E_D and next-state head D_D:
/// minimizes the squared error of predicting the probe next state from
/// `(E_D(segment), probe state, probe action)`.
pub fn train_dynamics(
    data: &SegmentDataset,
    cfg: &FeatureConfig,
    seed: u64,
) -> Result<(DenseNet, DenseNet, Vec<f64>)> {
    let mut enc = dynamics_encoder_arch(cfg);
    enc.init_params(rng::mix_seed(seed, 20));
    let mut dec = dynamics_decoder_arch(cfg);
    dec.init_params(rng::mix_seed(seed, 21));
    train_pair(enc, dec, data, &data.probe_target, true, cfg, seed)
}

/// Trains the expert-action autoencoder E_A / D_A: reconstructs the
/// flattened action sequence of each segment from the latent alone.
pub fn train_action_ae(
    data: &SegmentDataset,
    cfg: &FeatureConfig,
    seed: u64,
) -> Result<(DenseNet, DenseNet, Vec<f64>)> {
    let mut enc = action_encoder_arch(cfg);
    enc.init_params(rng::mix_seed(seed, 30));
    let mut dec = action_decoder_arch(cfg);
    dec.init_params(rng::mix_seed(seed, 31));
    train_pair(enc, dec, data, &data.actions_flat, false, cfg, seed)
}

/// Mean squared prediction error of the trained dynamics pair over a dataset.
pub fn dynamics_mse(enc: &DenseNet, dec: &DenseNet, data: &SegmentDataset) -> f64 {
    let mut total = 0.0;
    for i in 0..data.len() {
        let latent = enc.forward(&data.seg_flat[i]).unwrap();
        let mut dec_in = latent;
        dec_in.extend_from_slice(&data.probe_in[i]);
        let raw = dec.forward(&dec_in).unwrap();
        let target = &data.probe_target[i];
        let mse: f64 = raw
            .iter()
            .enumerate()
            .map(|(d, r)| {
                let pred = r + data.probe_in[i][d];
                (pred - target[d]) * (pred - target[d])
            })
            .sum::<f64>()
            / raw.len() as f64;
        total += mse;
    }
    total / data.len() as f64
}

/// Mean squared reconstruction error of the trained action pair.
pub fn action_mse(enc: &DenseNet, dec: &DenseNet, data: &SegmentDataset) -> f64 {
    let mut total = 0.0;
    for i in 0..data.len() {
        let latent = enc.forward(&data.seg_flat[i]).unwrap();
        let raw = dec.forward(&latent).unwrap();
        let target = &data.actions_flat[i];
        let mse: f64 = raw
            .iter()
            .zip(target.iter())
            .map(|(r, t)| (r - t) * (r - t))
            .sum::<f64>()
            / raw.len() as f64;
        total += mse;
    }
    total / data.len() as f64
}

/// Variance of the probe next states around their mean (the
/// predict-the-mean baseline for the dynamics trainer).
pub fn target_variance(targets: &[Vec<f64>]) -> f64 {
    let n = targets.len() as f64;
    let dim = targets[0].len();
    let mut mean = vec![0.0; dim];
    for t in targets {
        for (m, x) in mean.iter_mut().zip(t.iter()) {
            *m += x / n;
        }
    }
    let mut var = 0.0;
    for t in targets {
        for (m, x) in mean.iter().zip(t.iter()) {
            var += (x - m) * (x - m) / (n * dim as f64);
        }
    }
    var
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Transition;

    fn constant_dynamics_dataset(cfg: &FeatureConfig) -> SegmentDataset {
        // s' = s with varying states and random actions.
        let mut rng = rng::rng_from(0);
        let mut trajs = Vec::new();
        for _ in 0..4 {
            let mut transitions = Vec::new();
            let state: Vec<f64> = (0..6).map(|_| rng::uniform(&mut rng, -1.0, 1.0)).collect();
            for _ in 0..cfg.segment_len + 6 {
                let action: Vec<f64> = (0..3)
                    .map(|_| rng::uniform(&mut rng, -0.05, 0.05))
                    .collect();
                transitions.push(Transition {
                    state: state.clone(),
                    action,
                    reward: 0.0,
                    next_state: state.clone(),
                    done: false,
                    success: false,
                });
            }
            trajs.push(Trajectory {
                transitions,
                returns: None,
            });
        }
        let refs: Vec<&[Trajectory]> = vec![&trajs[..]];
        let norm = StateNormalizer::identity(6);
        SegmentDataset::build(&refs, &norm, cfg, 1).unwrap()
    }

    fn quick_cfg(steps: usize) -> FeatureConfig {
        FeatureConfig {
            seg_steps: steps,
            seg_batch: 32,
            windows_per_task: 60,
            ..FeatureConfig::default()
        }
    }

    #[test]
    fn constant_dynamics_reach_tiny_mse() {
        let cfg = quick_cfg(150);
        let data = constant_dynamics_dataset(&cfg);
        let (enc, dec, curve) = train_dynamics(&data, &cfg, 2).unwrap();
        let mse = dynamics_mse(&enc, &dec, &data);
        assert!(mse < 1e-3, "mse {mse}");
        assert!(curve.last().unwrap() < curve.first().unwrap());
    }

    #[test]
    fn dynamics_beats_predict_the_mean() {
        // Varying dynamics: next = state + action influence.
        let mut rng = rng::rng_from(5);
        let cfg = quick_cfg(250);
        let mut trajs = Vec::new();
        for _ in 0..6 {
            let mut transitions = Vec::new();
            let mut state: Vec<f64> = (0..6).map(|_| rng::uniform(&mut rng, -0.5, 0.5)).collect();
            for _ in 0..cfg.segment_len + 8 {
                let action: Vec<f64> = (0..3).map(|_| rng::uniform(&mut rng, -0.2, 0.2)).collect();
                let mut next = state.clone();
                for d in 0..3 {
                    next[d] += action[d];
                }
                transitions.push(Transition {
                    state: state.clone(),
                    action,
                    reward: 0.0,
                    next_state: next.clone(),
                    done: false,
                    success: false,
                });
                state = next;
            }
            trajs.push(Trajectory {
                transitions,
                returns: None,
            });
        }
        let refs: Vec<&[Trajectory]> = vec![&trajs[..]];
        let norm = StateNormalizer::identity(6);
        let data = SegmentDataset::build(&refs, &norm, &cfg, 3).unwrap();
        let (enc, dec, _) = train_dynamics(&data, &cfg, 4).unwrap();
        let mse = dynamics_mse(&enc, &dec, &data);
        let baseline = target_variance(&data.probe_target);
        assert!(mse < baseline, "mse {mse} vs variance {baseline}");
    }

    #[test]
    fn constant_actions_reconstruct_exactly() {
        // Segments whose actions are constant per trajectory.
        let cfg = quick_cfg(200);
        let mut trajs = Vec::new();
        for k in 0..3 {
            let action = vec![0.01 * k as f64, -0.02, 0.03];
            let transitions = (0..cfg.segment_len + 4)
                .map(|i| Transition {
                    state: vec![i as f64 * 0.01; 6],
                    action: action.clone(),
                    reward: 0.0,
                    next_state: vec![(i + 1) as f64 * 0.01; 6],
                    done: false,
                    success: false,
                })
                .collect();
            trajs.push(Trajectory {
                transitions,
                returns: None,
            });
        }
        let refs: Vec<&[Trajectory]> = vec![&trajs[..]];
        let norm = StateNormalizer::identity(6);
        let data = SegmentDataset::build(&refs, &norm, &cfg, 5).unwrap();
        let (enc, dec, curve) = train_action_ae(&data, &cfg, 6).unwrap();
        let mse = action_mse(&enc, &dec, &data);
        assert!(mse < 1e-3, "mse {mse}");
        assert!(curve.last().unwrap() < curve.first().unwrap());
        // Output length is h * action_dim.
        let latent = enc.forward(&data.seg_flat[0]).unwrap();
        assert_eq!(dec.forward(&latent).unwrap().len(), cfg.segment_len * 3);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = quick_cfg(10);
        let data = constant_dynamics_dataset(&cfg);
        let (_, _, a) = train_dynamics(&data, &cfg, 9).unwrap();
        let (_, _, b) = train_dynamics(&data, &cfg, 9).unwrap();
        assert_eq!(a, b);
    }
}
