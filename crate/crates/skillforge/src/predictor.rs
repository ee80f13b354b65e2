//! Transfer-success prediction: the source-target evaluation dataset, the
//! predictor network trained on task-feature pairs, and averaged inference.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disassembly::run_episode;
use crate::env::{RolloutPolicy, DEFAULT_HORIZON};
use crate::error::{Error, Result};
use crate::features::{embed_task, FeatureEncoders, TaskFeature, TASK_FEATURE_DIM};
use crate::library::SkillLibrary;
use crate::mdp::Trajectory;
use crate::nn::dense::{Activation, DenseNet, ForwardCache};
use crate::nn::AdamState;
use crate::parallel;
use crate::rl::MeanActionPolicy;
use crate::rng;
use crate::task::TaskSpec;

/// One measured zero-shot transfer outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub src_id: String,
    pub trg_id: String,
    pub success: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Joint feature draws cached per task for training-time resampling.
    pub feature_pool: usize,
    /// Draws averaged at inference.
    pub m_draws: usize,
    /// Episodes per zero-shot evaluation when building the dataset.
    pub eval_episodes: usize,
    /// Appends the source policy's own training success to the input.
    pub include_source_success: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            epochs: 50,
            batch: 64,
            lr: 1e-3,
            feature_pool: 32,
            m_draws: 8,
            eval_episodes: 256,
            include_source_success: false,
        }
    }
}

/// The transfer-success regressor: one hidden layer of 128 on the
/// concatenated source and target features. The output head is linear and
/// unbounded during training; predictions clamp to [0, 1] only at inference.
#[derive(Clone, Debug)]
pub struct PredictorF {
    pub mlp: DenseNet,
    pub include_source_success: bool,
}

impl PredictorF {
    pub fn new(include_source_success: bool, seed: u64) -> Self {
        let input = 2 * TASK_FEATURE_DIM + usize::from(include_source_success);
        let mut mlp = DenseNet::mlp(input, &[128], 1, Activation::Relu);
        mlp.init_params(seed);
        PredictorF {
            mlp,
            include_source_success,
        }
    }

    fn input(
        &self,
        z_src: &TaskFeature,
        z_trg: &TaskFeature,
        src_success: Option<f64>,
    ) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.mlp.input_dim());
        x.extend_from_slice(&z_src.0);
        x.extend_from_slice(&z_trg.0);
        if self.include_source_success {
            x.push(src_success.unwrap_or(0.0));
        }
        x
    }

    pub fn raw_output(
        &self,
        z_src: &TaskFeature,
        z_trg: &TaskFeature,
        src_success: Option<f64>,
    ) -> Result<f64> {
        Ok(self.mlp.forward(&self.input(z_src, z_trg, src_success))?[0])
    }
}

/// Fraction of evaluation episodes a policy solves on a task, acting
/// deterministically from randomized full-difficulty initial states.
/// Episodes evaluate in parallel with per-episode seed streams.
pub fn eval_zero_shot<P>(policy: &P, task: &TaskSpec, episodes: usize, seed: u64) -> Result<f64>
where
    P: RolloutPolicy + Clone + Sync,
{
    if episodes == 0 {
        return Err(Error::invalid("eval_zero_shot needs at least one episode"));
    }
    let results: Vec<Result<bool>> = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let mut p = policy.clone();
            run_episode(&mut p, task, DEFAULT_HORIZON, rng::mix_seed(seed, i as u64))
        })
        .collect();
    let mut successes = 0usize;
    for r in results {
        successes += r? as usize;
    }
    Ok(successes as f64 / episodes as f64)
}

/// Evaluates every (source, target) pair in the library, self-pairs
/// included: exactly n^2 records, ordered source-major by id.
pub fn build_transfer_dataset(
    library: &SkillLibrary,
    episodes: usize,
    seed: u64,
) -> Result<Vec<TransferRecord>> {
    if library.is_empty() {
        return Err(Error::invalid("transfer dataset needs a nonempty library"));
    }
    let mut ids = library.ids();
    ids.sort();
    let mut records = Vec::with_capacity(ids.len() * ids.len());
    for src_id in &ids {
        let src = library
            .get(src_id)
            .ok_or_else(|| Error::Integrity(format!("missing policy for task {src_id}")))?;
        for trg_id in &ids {
            let trg = library.get(trg_id).unwrap();
            let policy = MeanActionPolicy {
                policy: &src.policy,
            };
            let success = eval_zero_shot(
                &policy,
                &trg.task,
                episodes,
                pair_seed(seed, src_id, trg_id),
            )?;
            records.push(TransferRecord {
                src_id: src_id.clone(),
                trg_id: trg_id.clone(),
                success,
            });
        }
    }
    Ok(records)
}

/// Evaluation seed for one (source, target) pair, derived from the ids so
/// the measurement is stable as the library grows.
pub fn pair_seed(seed: u64, src_id: &str, trg_id: &str) -> u64 {
    rng::mix_seed(
        seed,
        rng::hash_str(src_id) ^ rng::hash_str(trg_id).rotate_left(17),
    )
}

/// Pre-draws a pool of joint feature samples for each task.
pub fn build_feature_pools(
    tasks: &BTreeMap<String, (&TaskSpec, &[Trajectory])>,
    encoders: &FeatureEncoders,
    pool: usize,
    seed: u64,
) -> Result<BTreeMap<String, Vec<TaskFeature>>> {
    let entries: Vec<(&String, &(&TaskSpec, &[Trajectory]))> = tasks.iter().collect();
    let draws: Vec<Result<(String, Vec<TaskFeature>)>> = entries
        .par_iter()
        .enumerate()
        .map(|(i, (id, (task, trajs)))| {
            let mut rng = rng::rng_from(rng::mix_seed(seed, i as u64));
            let feats: Result<Vec<TaskFeature>> = (0..pool)
                .map(|_| embed_task(task, trajs, encoders, &mut rng))
                .collect();
            Ok(((*id).clone(), feats?))
        })
        .collect();
    let mut pools = BTreeMap::new();
    for d in draws {
        let (id, feats) = d?;
        pools.insert(id, feats);
    }
    Ok(pools)
}

struct PredPartial {
    loss: f64,
    grad: Vec<f64>,
}

/// Trains the predictor on the measured transfer records, resampling the
/// (cloud, segment) feature draw for each minibatch element from the
/// per-task pools each epoch. Encoders stay frozen. Returns the model and
/// the per-epoch mean squared error.
pub fn train_predictor(
    records: &[TransferRecord],
    pools: &BTreeMap<String, Vec<TaskFeature>>,
    src_success: Option<&BTreeMap<String, f64>>,
    cfg: &PredictorConfig,
    seed: u64,
) -> Result<(PredictorF, Vec<f64>)> {
    if records.len() < 2 {
        return Err(Error::invalid(
            "predictor training needs at least 2 records",
        ));
    }
    for r in records {
        if !pools.contains_key(&r.src_id) || !pools.contains_key(&r.trg_id) {
            return Err(Error::invalid(format!(
                "record ({}, {}) references a task without feature draws",
                r.src_id, r.trg_id
            )));
        }
    }
    let mut f = PredictorF::new(cfg.include_source_success, rng::mix_seed(seed, 1));
    let mut opt = AdamState::new(f.mlp.param_count(), cfg.lr);
    let mut shuffle_rng = rng::rng_from(rng::mix_seed(seed, 2));
    let mut curve = Vec::with_capacity(cfg.epochs);

    let mut order: Vec<usize> = (0..records.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut count = 0usize;
        for mb in order.chunks(cfg.batch) {
            // One fresh draw index pair per element per epoch.
            let draws: Vec<(usize, usize, usize)> = mb
                .iter()
                .map(|ri| {
                    let a = shuffle_rng.random_range(0..cfg.feature_pool);
                    let b = shuffle_rng.random_range(0..cfg.feature_pool);
                    (*ri, a, b)
                })
                .collect();
            let mb_n = draws.len() as f64;
            let partials = parallel::map_chunks(draws.len(), 16, |range| {
                let mut p = PredPartial {
                    loss: 0.0,
                    grad: vec![0.0; f.mlp.param_count()],
                };
                let mut cache = ForwardCache::default();
                let mut scratch = Vec::new();
                for k in range {
                    let (ri, da, db) = draws[k];
                    let r = &records[ri];
                    let z_src = &pools[&r.src_id][da % pools[&r.src_id].len()];
                    let z_trg = &pools[&r.trg_id][db % pools[&r.trg_id].len()];
                    let ss = src_success.map(|m| m.get(&r.src_id).copied().unwrap_or(0.0));
                    let x = f.input(z_src, z_trg, ss);
                    f.mlp.forward_cached(&x, &mut cache).unwrap();
                    let pred = cache.acts.last().unwrap()[0];
                    let err = pred - r.success;
                    p.loss += err * err / mb_n;
                    let mut input_grad = Vec::new();
                    f.mlp.backward_cached(
                        &cache,
                        &[2.0 * err / mb_n],
                        &mut p.grad,
                        &mut input_grad,
                        &mut scratch,
                    );
                }
                p
            });
            let mut grad = vec![0.0; f.mlp.param_count()];
            let mut loss = 0.0;
            for p in &partials {
                loss += p.loss;
                parallel::fold_grads(&mut grad, std::slice::from_ref(&p.grad));
            }
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "predictor loss became {loss} at epoch {epoch}"
                )));
            }
            opt.step(&mut f.mlp.params, &grad)?;
            epoch_loss += loss * mb_n;
            count += draws.len();
        }
        curve.push(epoch_loss / count as f64);
    }
    Ok((f, curve))
}

/// Averaged transfer prediction: the mean over `m` joint feature draws of
/// the predictor output, clamped to [0, 1].
pub fn predict_transfer(
    f: &PredictorF,
    src: (&TaskSpec, &[Trajectory]),
    trg: (&TaskSpec, &[Trajectory]),
    encoders: &FeatureEncoders,
    src_success: Option<f64>,
    m: usize,
    seed: u64,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::invalid("predict_transfer needs m >= 1"));
    }
    let mut rng = rng::rng_from(seed);
    let mut total = 0.0;
    for _ in 0..m {
        let z_src = embed_task(src.0, src.1, encoders, &mut rng)?;
        let z_trg = embed_task(trg.0, trg.1, encoders, &mut rng)?;
        total += f.raw_output(&z_src, &z_trg, src_success)?.clamp(0.0, 1.0);
    }
    Ok(total / m as f64)
}

/// Population variance of the record labels.
pub fn label_variance(records: &[TransferRecord]) -> f64 {
    let n = records.len() as f64;
    let mean = records.iter().map(|r| r.success).sum::<f64>() / n;
    records
        .iter()
        .map(|r| (r.success - mean) * (r.success - mean))
        .sum::<f64>()
        / n
}

pub const TRANSFER_CSV_HEADER: &str = "src_id,trg_id,success";

pub fn write_transfer_csv(path: &Path, records: &[TransferRecord]) -> Result<()> {
    let mut out = String::from(TRANSFER_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!("{},{},{}\n", r.src_id, r.trg_id, r.success));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_transfer_csv(path: &Path) -> Result<Vec<TransferRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRANSFER_CSV_HEADER => {}
        _ => {
            return Err(Error::Format(format!(
                "{}: missing transfer header",
                path.display()
            )))
        }
    }
    let mut records = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Format(format!(
                "{}: bad transfer row",
                path.display()
            )));
        }
        records.push(TransferRecord {
            src_id: fields[0].to_string(),
            trg_id: fields[1].to_string(),
            success: fields[2]
                .parse()
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?,
        });
    }
    Ok(records)
}
