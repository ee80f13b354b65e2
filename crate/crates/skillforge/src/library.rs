//! Persistent skill library: specialist policies plus their task geometry,
//! disassembly trajectories, and point clouds, stored one directory per task.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{TaskClouds, TaskFeature};
use crate::mdp::{Trajectory, Transition};
use crate::rl::PolicyPair;
use crate::task::{load_task_json, save_task_json, TaskSpec};

pub const META_SCHEMA_VERSION: u32 = 1;

/// One library entry: a task, its specialist policy, the training success
/// it reached, and the task data used for retrieval.
#[derive(Clone, Debug)]
pub struct SkillRecord {
    pub task: TaskSpec,
    pub policy: PolicyPair,
    pub train_success: f64,
    pub disassembly: Vec<Trajectory>,
    pub clouds: TaskClouds,
    /// Cached feature draws; never persisted, rebuilt on demand.
    pub feature_cache: Option<Vec<TaskFeature>>,
    /// Epochs the specialist needed to reach the training target, if it did.
    pub epochs_to_target: Option<usize>,
}

impl SkillRecord {
    pub fn id(&self) -> &str {
        &self.task.id
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        if !(0.0..=1.0).contains(&self.train_success) {
            return Err(Error::invalid(format!(
                "record {}: train_success {} outside [0, 1]",
                self.task.id, self.train_success
            )));
        }
        for t in &self.disassembly {
            t.validate_chain()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct SkillLibrary {
    records: Vec<SkillRecord>,
}

impl SkillLibrary {
    pub fn new() -> Self {
        SkillLibrary::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SkillRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&SkillRecord> {
        self.records.iter().find(|r| r.id() == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id().to_string()).collect()
    }

    /// All state-action pairs from every stored disassembly trajectory.
    pub fn state_action_pairs(&self) -> Vec<Vec<f64>> {
        let mut pairs = Vec::new();
        for record in &self.records {
            for traj in &record.disassembly {
                for t in &traj.transitions {
                    let mut pair = t.state.clone();
                    pair.extend_from_slice(&t.action);
                    pairs.push(pair);
                }
            }
        }
        pairs
    }
}

/// Adds a record; a duplicate id is a conflict.
pub fn add_skill(library: &mut SkillLibrary, record: SkillRecord) -> Result<()> {
    record.validate()?;
    if library.get(record.id()).is_some() {
        return Err(Error::Conflict(format!(
            "skill {} already in the library",
            record.id()
        )));
    }
    library.records.push(record);
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Meta {
    schema_version: u32,
    train_success: f64,
    epochs_to_target: Option<usize>,
}

fn record_dir(dir: &Path, id: &str) -> PathBuf {
    dir.join(id)
}

/// Persists the library as `dir/<task_id>/{task.json, policy.ckpt,
/// disassembly.jsonl, clouds.json, meta.json}`.
pub fn save_library(library: &SkillLibrary, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for record in &library.records {
        let rdir = record_dir(dir, record.id());
        std::fs::create_dir_all(&rdir)?;
        std::fs::write(rdir.join("task.json"), save_task_json(&record.task)?)?;
        record.policy.save(&rdir.join("policy.ckpt"))?;
        let mut jsonl = std::fs::File::create(rdir.join("disassembly.jsonl"))?;
        for traj in &record.disassembly {
            for t in &traj.transitions {
                serde_json::to_writer(&mut jsonl, t)?;
                jsonl.write_all(b"\n")?;
            }
            // Blank line separates trajectories.
            jsonl.write_all(b"\n")?;
        }
        std::fs::write(
            rdir.join("clouds.json"),
            serde_json::to_string(&record.clouds)?,
        )?;
        let meta = Meta {
            schema_version: META_SCHEMA_VERSION,
            train_success: record.train_success,
            epochs_to_target: record.epochs_to_target,
        };
        std::fs::write(rdir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    }
    Ok(())
}

fn require(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Integrity(format!("missing file {}", path.display())));
    }
    Ok(())
}

fn read_disassembly_jsonl(path: &Path) -> Result<Vec<Trajectory>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Integrity(format!("cannot open {}: {e}", path.display())))?;
    let reader = std::io::BufReader::new(file);
    let mut trajs = Vec::new();
    let mut current = Trajectory::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            if !current.is_empty() {
                trajs.push(std::mem::take(&mut current));
            }
            continue;
        }
        let t: Transition = serde_json::from_str(&line)
            .map_err(|e| Error::Integrity(format!("corrupt {}: {e}", path.display())))?;
        current.transitions.push(t);
    }
    if !current.is_empty() {
        trajs.push(current);
    }
    Ok(trajs)
}

/// Loads a library directory, validating every record. Missing or corrupt
/// files produce an integrity error naming the file; an empty or absent
/// directory loads as an empty library.
pub fn load_library(dir: &Path) -> Result<SkillLibrary> {
    let mut library = SkillLibrary::new();
    if !dir.exists() {
        return Ok(library);
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for rdir in subdirs {
        let task_path = rdir.join("task.json");
        let policy_path = rdir.join("policy.ckpt");
        let disassembly_path = rdir.join("disassembly.jsonl");
        let clouds_path = rdir.join("clouds.json");
        let meta_path = rdir.join("meta.json");
        for p in [
            &task_path,
            &policy_path,
            &disassembly_path,
            &clouds_path,
            &meta_path,
        ] {
            require(p)?;
        }
        let task = load_task_json(&std::fs::read_to_string(&task_path)?)
            .map_err(|e| Error::Integrity(format!("{}: {e}", task_path.display())))?;
        let dir_name = rdir
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .to_string();
        if task.id != dir_name {
            return Err(Error::Integrity(format!(
                "{}: task id {} does not match directory",
                task_path.display(),
                task.id
            )));
        }
        let policy = PolicyPair::load(&policy_path)
            .map_err(|e| Error::Integrity(format!("{}: {e}", policy_path.display())))?;
        let disassembly = read_disassembly_jsonl(&disassembly_path)?;
        let clouds: TaskClouds = serde_json::from_str(&std::fs::read_to_string(&clouds_path)?)
            .map_err(|e| Error::Integrity(format!("{}: {e}", clouds_path.display())))?;
        let meta: Meta = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)
            .map_err(|e| Error::Integrity(format!("{}: {e}", meta_path.display())))?;
        if meta.schema_version != META_SCHEMA_VERSION {
            return Err(Error::Integrity(format!(
                "{}: unsupported schema_version {}",
                meta_path.display(),
                meta.schema_version
            )));
        }
        let record = SkillRecord {
            task,
            policy,
            train_success: meta.train_success,
            disassembly,
            clouds,
            feature_cache: None,
            epochs_to_target: meta.epochs_to_target,
        };
        record
            .validate()
            .map_err(|e| Error::Integrity(format!("{}: {e}", rdir.display())))?;
        add_skill(&mut library, record)?;
    }
    Ok(library)
}

/// Schedule and thresholds for the continual driver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinualConfig {
    /// Ordered batches of task ids to learn.
    pub batch_schedule: Vec<Vec<String>>,
    /// Library size at which retrieval switches from geometry-only to the
    /// transfer-success predictor.
    pub predictor_min_library: usize,
    pub seeds_per_task: usize,
    pub success_target: f64,
}

impl Default for ContinualConfig {
    fn default() -> Self {
        ContinualConfig {
            batch_schedule: Vec::new(),
            predictor_min_library: 8,
            seeds_per_task: 3,
            success_target: 0.8,
        }
    }
}

impl ContinualConfig {
    pub fn validate(&self) -> Result<()> {
        if self.predictor_min_library < 1 {
            return Err(Error::invalid("predictor_min_library must be >= 1"));
        }
        if self.seeds_per_task < 1 {
            return Err(Error::invalid("seeds_per_task must be >= 1"));
        }
        let mut seen = BTreeSet::new();
        for batch in &self.batch_schedule {
            for id in batch {
                if !seen.insert(id.clone()) {
                    return Err(Error::invalid(format!("task {id} appears in two batches")));
                }
            }
        }
        Ok(())
    }
}

/// Retrieval strategy choice as a pure threshold on library size: geometry
/// embeddings while the library is small, the transfer-success predictor
/// once enough source-target pairs exist.
pub fn choose_strategy(library_size: usize, cfg: &ContinualConfig) -> crate::retrieval::Strategy {
    if library_size < cfg.predictor_min_library {
        crate::retrieval::Strategy::Geometry
    } else {
        crate::retrieval::Strategy::Srsa
    }
}
