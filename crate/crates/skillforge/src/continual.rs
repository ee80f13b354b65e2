//! Continual learning driver: grow the skill library batch by batch,
//! retraining the feature encoders and transfer predictor once per batch,
//! retrieving a source skill for each new task, fine-tuning it over several
//! seeds, and adding the best checkpoint to the library.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    train_action_ae, train_dynamics, train_geometry_ae, FeatureConfig, FeatureEncoders,
    SegmentDataset, StateNormalizer, TaskData,
};
use crate::library::{add_skill, choose_strategy, ContinualConfig, SkillLibrary, SkillRecord};
use crate::mdp::Trajectory;
use crate::predictor::{
    build_feature_pools, eval_zero_shot, pair_seed, train_predictor, PredictorConfig, PredictorF,
    TransferRecord,
};
use crate::retrieval::{retrieve_geometry, retrieve_srsa, RetrievalConfig, Strategy};
use crate::rl::MeanActionPolicy;
use crate::rl::{finetune, TrainConfig};
use crate::rng;
use crate::task::TaskSpec;
use crate::vae::VaeConfig;

/// Module configurations for the full pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub features: FeatureConfig,
    pub predictor: PredictorConfig,
    pub retrieval: RetrievalConfig,
    pub vae: VaeConfig,
    pub train: TrainConfig,
    /// Disassembly trajectories generated per task.
    pub n_disassembly: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            features: FeatureConfig::default(),
            predictor: PredictorConfig::default(),
            retrieval: RetrievalConfig::default(),
            vae: VaeConfig::default(),
            train: TrainConfig::default(),
            n_disassembly: 100,
        }
    }
}

/// Trains all three feature learners on the current library contents.
pub fn train_feature_encoders(
    library: &SkillLibrary,
    cfg: &FeatureConfig,
    seed: u64,
) -> Result<FeatureEncoders> {
    if library.is_empty() {
        return Err(Error::invalid("feature training needs a nonempty library"));
    }
    let mut clouds: Vec<Vec<[f64; 2]>> = Vec::with_capacity(3 * library.len());
    for record in library.records() {
        clouds.push(record.clouds.plug.clone());
        clouds.push(record.clouds.socket.clone());
        clouds.push(record.clouds.assembled.clone());
    }
    let normalizer = StateNormalizer::fit(
        library.records().iter().flat_map(|r| r.disassembly.iter()),
        crate::env::ENV_STATE_DIM,
    );
    let per_task: Vec<&[Trajectory]> = library
        .records()
        .iter()
        .map(|r| r.disassembly.as_slice())
        .collect();
    let dataset = SegmentDataset::build(&per_task, &normalizer, cfg, rng::mix_seed(seed, 1))?;

    let (geom, geom_dec, _) = train_geometry_ae(&clouds, cfg, rng::mix_seed(seed, 2))?;
    let (dynamics, dynamics_dec, _) = train_dynamics(&dataset, cfg, rng::mix_seed(seed, 3))?;
    let (action, action_dec, _) = train_action_ae(&dataset, cfg, rng::mix_seed(seed, 4))?;
    Ok(FeatureEncoders {
        geom,
        geom_dec,
        dynamics,
        dynamics_dec,
        action,
        action_dec,
        normalizer,
        cfg: *cfg,
    })
}

/// Transfer dataset over the current library, reusing previously measured
/// pairs from `cache` and evaluating only new ones.
pub fn transfer_dataset_cached(
    library: &SkillLibrary,
    episodes: usize,
    seed: u64,
    cache: &mut BTreeMap<(String, String), f64>,
) -> Result<Vec<TransferRecord>> {
    let mut ids = library.ids();
    ids.sort();
    let mut records = Vec::with_capacity(ids.len() * ids.len());
    for src_id in &ids {
        let src = library.get(src_id).unwrap();
        for trg_id in &ids {
            let key = (src_id.clone(), trg_id.clone());
            let success = match cache.get(&key) {
                Some(v) => *v,
                None => {
                    let trg = library.get(trg_id).unwrap();
                    let policy = MeanActionPolicy {
                        policy: &src.policy,
                    };
                    let v = eval_zero_shot(
                        &policy,
                        &trg.task,
                        episodes,
                        pair_seed(seed, src_id, trg_id),
                    )?;
                    cache.insert(key, v);
                    v
                }
            };
            records.push(TransferRecord {
                src_id: src_id.clone(),
                trg_id: trg_id.clone(),
                success,
            });
        }
    }
    Ok(records)
}

/// Feature pools plus a trained predictor for the current library.
pub fn train_library_predictor(
    library: &SkillLibrary,
    encoders: &FeatureEncoders,
    records: &[TransferRecord],
    cfg: &PredictorConfig,
    seed: u64,
) -> Result<PredictorF> {
    let tasks: BTreeMap<String, (&TaskSpec, &[Trajectory])> = library
        .records()
        .iter()
        .map(|r| (r.id().to_string(), (&r.task, r.disassembly.as_slice())))
        .collect();
    let pools = build_feature_pools(&tasks, encoders, cfg.feature_pool, rng::mix_seed(seed, 5))?;
    let src_success: BTreeMap<String, f64> = library
        .records()
        .iter()
        .map(|r| (r.id().to_string(), r.train_success))
        .collect();
    let src = cfg.include_source_success.then_some(&src_success);
    let (f, _) = train_predictor(records, &pools, src, cfg, rng::mix_seed(seed, 6))?;
    Ok(f)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinualReportRow {
    pub task_id: String,
    pub batch: usize,
    pub strategy: Strategy,
    pub chosen_source: String,
    pub epochs_to_target: Option<usize>,
    pub final_success: f64,
    pub flagged: bool,
}

pub const CONTINUAL_CSV_HEADER: &str =
    "task_id,batch,strategy,chosen_source,epochs_to_target,final_success,flagged";

pub fn write_continual_csv(path: &Path, rows: &[ContinualReportRow]) -> Result<()> {
    let mut out = String::from(CONTINUAL_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.task_id,
            r.batch,
            r.strategy,
            r.chosen_source,
            r.epochs_to_target
                .map(|e| e.to_string())
                .unwrap_or_default(),
            r.final_success,
            r.flagged
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Runs the continual schedule: for each batch, refresh the retrieval
/// machinery on the current library, then for each task retrieve a source
/// skill, fine-tune it across seeds, and add the best checkpoint. Tasks
/// that miss the success target are still added, flagged in the report.
pub fn continual_run(
    mut library: SkillLibrary,
    tasks: &[TaskSpec],
    cfg: &ContinualConfig,
    pipe: &PipelineConfig,
    global_seed: u64,
) -> Result<(SkillLibrary, Vec<ContinualReportRow>)> {
    cfg.validate()?;
    if library.is_empty() {
        return Err(Error::invalid(
            "continual run needs a nonempty initial library",
        ));
    }
    let lookup: BTreeMap<&str, &TaskSpec> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    for batch in &cfg.batch_schedule {
        for id in batch {
            if !lookup.contains_key(id.as_str()) {
                return Err(Error::invalid(format!(
                    "batch task {id} not in the task set"
                )));
            }
            if library.get(id).is_some() {
                return Err(Error::invalid(format!(
                    "batch task {id} already in the library"
                )));
            }
        }
    }

    let mut transfer_cache: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut report = Vec::new();

    for (batch_idx, batch) in cfg.batch_schedule.iter().enumerate() {
        if batch.is_empty() {
            continue;
        }
        let strategy = choose_strategy(library.len(), cfg);
        let batch_seed = rng::mix_seed(global_seed, 0xBA7C + batch_idx as u64);
        let encoders = train_feature_encoders(&library, &pipe.features, batch_seed)?;
        let predictor = if strategy == Strategy::Srsa {
            let records = transfer_dataset_cached(
                &library,
                pipe.predictor.eval_episodes,
                global_seed,
                &mut transfer_cache,
            )?;
            Some(train_library_predictor(
                &library,
                &encoders,
                &records,
                &pipe.predictor,
                batch_seed,
            )?)
        } else {
            None
        };

        for task_id in batch {
            let task = (*lookup.get(task_id.as_str()).unwrap()).clone();
            let data_seed = rng::mix_seed(global_seed, rng::hash_str(task_id));
            let data = TaskData::generate(
                &task,
                pipe.n_disassembly,
                pipe.features.cloud_points,
                data_seed,
            )?;
            let retrieval = match &predictor {
                Some(f) => retrieve_srsa(
                    &library,
                    (&task, data.disassembly.as_slice()),
                    f,
                    &encoders,
                    &pipe.retrieval,
                    rng::mix_seed(data_seed, 0x3E7),
                )?,
                None => retrieve_geometry(&library, &data.clouds, &encoders)?,
            };
            let source = library.get(&retrieval.chosen).unwrap().policy.clone();

            let mut best: Option<crate::rl::FinetuneResult> = None;
            let mut best_epochs: Option<usize> = None;
            for seed_idx in 0..cfg.seeds_per_task {
                let run_seed = rng::mix_seed(data_seed, 0xF1E + seed_idx as u64);
                let result = finetune(&source, &task, &pipe.train, true, run_seed)?;
                let epochs = crate::rl::epochs_to_target(&result.curve, cfg.success_target);
                best_epochs = match (best_epochs, epochs) {
                    (None, e) => e,
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (Some(a), None) => Some(a),
                };
                let replace = match &best {
                    None => true,
                    Some(b) => result.best_success > b.best_success,
                };
                if replace {
                    best = Some(result);
                }
            }
            let best = best.unwrap();
            let flagged = best.best_success < cfg.success_target;
            report.push(ContinualReportRow {
                task_id: task_id.clone(),
                batch: batch_idx,
                strategy,
                chosen_source: retrieval.chosen.clone(),
                epochs_to_target: best_epochs,
                final_success: best.best_success,
                flagged,
            });
            add_skill(
                &mut library,
                SkillRecord {
                    task,
                    policy: best.best_policy,
                    train_success: best.best_success,
                    disassembly: data.disassembly,
                    clouds: data.clouds,
                    feature_cache: None,
                    epochs_to_target: best_epochs,
                },
            )?;
        }
    }
    Ok((library, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::{PolicyPair, PpoConfig};
    use crate::task::make_task_family;

    fn tiny_pipeline() -> PipelineConfig {
        PipelineConfig {
            features: FeatureConfig {
                cloud_points: 32,
                decoder_points: 32,
                geom_steps: 3,
                geom_batch: 4,
                seg_steps: 3,
                seg_batch: 8,
                windows_per_task: 10,
                ..FeatureConfig::default()
            },
            predictor: PredictorConfig {
                epochs: 2,
                batch: 4,
                feature_pool: 2,
                m_draws: 1,
                eval_episodes: 2,
                ..PredictorConfig::default()
            },
            retrieval: RetrievalConfig {
                top_k: 2,
                m_draws: 1,
                candidate_eval_episodes: 2,
                ..RetrievalConfig::default()
            },
            vae: VaeConfig::default(),
            train: TrainConfig {
                ppo: PpoConfig {
                    n_envs: 2,
                    horizon: 8,
                    minibatch_size: 16,
                    minibatch_epochs: 1,
                    total_epochs: 1,
                    ..PpoConfig::default()
                },
                eval_episodes: 4,
                ..TrainConfig::default()
            },
            n_disassembly: 2,
        }
    }

    fn seeded_library(tasks: &[TaskSpec]) -> SkillLibrary {
        let mut lib = SkillLibrary::new();
        for (i, task) in tasks.iter().enumerate() {
            let data = TaskData::generate(task, 2, 32, i as u64).unwrap();
            add_skill(
                &mut lib,
                SkillRecord {
                    task: task.clone(),
                    policy: PolicyPair::new(i as u64),
                    train_success: 0.5,
                    disassembly: data.disassembly,
                    clouds: data.clouds,
                    feature_cache: None,
                    epochs_to_target: Some(3),
                },
            )
            .unwrap();
        }
        lib
    }

    #[test]
    fn empty_schedule_changes_nothing() {
        let tasks = make_task_family(3, 71).unwrap();
        let lib = seeded_library(&tasks[..2]);
        let cfg = ContinualConfig::default();
        let (out, report) = continual_run(lib, &tasks, &cfg, &tiny_pipeline(), 1).unwrap();
        assert_eq!(out.len(), 2);
        assert!(report.is_empty());
    }

    #[test]
    fn library_grows_by_schedule_size_and_reports_every_task() {
        let tasks = make_task_family(5, 72).unwrap();
        let lib = seeded_library(&tasks[..2]);
        let cfg = ContinualConfig {
            batch_schedule: vec![
                vec![tasks[2].id.clone(), tasks[3].id.clone()],
                vec![tasks[4].id.clone()],
            ],
            seeds_per_task: 2,
            ..ContinualConfig::default()
        };
        let (out, report) = continual_run(lib, &tasks, &cfg, &tiny_pipeline(), 2).unwrap();
        assert_eq!(out.len(), 2 + 3);
        assert_eq!(report.len(), 3);
        // Library of 2 < 8 keeps geometry retrieval for both batches.
        assert!(report.iter().all(|r| r.strategy == Strategy::Geometry));
        for row in &report {
            assert!(out.get(&row.task_id).is_some());
            assert!(out.get(&row.chosen_source).is_some());
        }
        // Unknown and duplicate ids are rejected up front.
        let bad = ContinualConfig {
            batch_schedule: vec![vec!["task-9999".into()]],
            ..ContinualConfig::default()
        };
        assert!(continual_run(out.clone(), &tasks, &bad, &tiny_pipeline(), 3).is_err());
    }

    #[test]
    fn continual_csv_writes_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let rows = vec![ContinualReportRow {
            task_id: "task-0003".into(),
            batch: 0,
            strategy: Strategy::Geometry,
            chosen_source: "task-0001".into(),
            epochs_to_target: None,
            final_success: 0.25,
            flagged: true,
        }];
        write_continual_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(CONTINUAL_CSV_HEADER));
        assert!(text.contains("task-0003,0,geometry,task-0001,,0.25,true"));
    }
}
