//! Run configuration: task family parameters, prior/test split, and the
//! per-module pipeline configs, loaded from JSON with full defaults.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use skillforge::continual::PipelineConfig;
use skillforge::library::ContinualConfig;
use skillforge::task::{make_task_family, TaskSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FamilyConfig {
    pub count: usize,
    pub seed: u64,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        FamilyConfig { count: 30, seed: 1 }
    }
}

/// Prior/test split: explicit id lists win over the count-based split of
/// the generated family (first `prior_count` prior, next `test_count` test).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub prior: Option<Vec<String>>,
    pub test: Option<Vec<String>>,
    pub prior_count: Option<usize>,
    pub test_count: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub task_family: FamilyConfig,
    pub split: SplitConfig,
    pub pipeline: PipelineConfig,
    pub continual: ContinualConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            output_dir: PathBuf::from("out"),
            task_family: FamilyConfig::default(),
            split: SplitConfig::default(),
            pipeline: PipelineConfig::default(),
            continual: ContinualConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                let cfg: RunConfig = serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?;
                Ok(cfg)
            }
        }
    }

    pub fn tasks(&self) -> Result<Vec<TaskSpec>> {
        Ok(make_task_family(
            self.task_family.count,
            self.task_family.seed,
        )?)
    }

    /// Resolves the prior/test id split and checks its invariants: the sets
    /// are disjoint and every id exists in the family.
    pub fn resolve_split(&self, tasks: &[TaskSpec]) -> Result<(Vec<String>, Vec<String>)> {
        let known: BTreeSet<&str> = tasks.iter().map(|t| t.id.as_str()).collect();
        let (prior, test) = match (&self.split.prior, &self.split.test) {
            (Some(p), Some(t)) => (p.clone(), t.clone()),
            (None, None) => {
                let prior_n = self.split.prior_count.unwrap_or(24).min(tasks.len());
                let test_n = self
                    .split
                    .test_count
                    .unwrap_or(6)
                    .min(tasks.len().saturating_sub(prior_n));
                let prior = tasks[..prior_n].iter().map(|t| t.id.clone()).collect();
                let test = tasks[prior_n..prior_n + test_n]
                    .iter()
                    .map(|t| t.id.clone())
                    .collect();
                (prior, test)
            }
            _ => bail!("split must set both prior and test id lists, or neither"),
        };
        for id in prior.iter().chain(test.iter()) {
            if !known.contains(id.as_str()) {
                bail!("split references unknown task {id}");
            }
        }
        let prior_set: BTreeSet<&String> = prior.iter().collect();
        if test.iter().any(|id| prior_set.contains(id)) {
            bail!("prior and test splits overlap");
        }
        Ok((prior, test))
    }

    pub fn tasks_dir(&self) -> PathBuf {
        self.output_dir.join("tasks")
    }

    pub fn library_dir(&self) -> PathBuf {
        self.output_dir.join("library")
    }

    pub fn features_dir(&self) -> PathBuf {
        self.output_dir.join("features")
    }

    pub fn predictor_dir(&self) -> PathBuf {
        self.output_dir.join("predictor")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.output_dir.join("runs")
    }
}

/// FNV-1a over the canonical JSON serialization: changes exactly when a
/// config field changes. The output directory is where results go, not what
/// they are, so it is excluded.
pub fn config_hash(cfg: &RunConfig) -> String {
    let mut canonical = cfg.clone();
    canonical.output_dir = PathBuf::new();
    let json = serde_json::to_string(&canonical).expect("config serializes");
    format!("{:016x}", skillforge::rng::hash_str(&json))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_split_is_24_6() {
        let cfg = RunConfig::default();
        let tasks = cfg.tasks().unwrap();
        let (prior, test) = cfg.resolve_split(&tasks).unwrap();
        assert_eq!(prior.len(), 24);
        assert_eq!(test.len(), 6);
        assert!(prior.iter().all(|id| !test.contains(id)));
    }

    #[test]
    fn overlapping_split_rejected() {
        let mut cfg = RunConfig::default();
        cfg.split.prior = Some(vec!["task-0000".into()]);
        cfg.split.test = Some(vec!["task-0000".into()]);
        let tasks = cfg.tasks().unwrap();
        assert!(cfg.resolve_split(&tasks).is_err());
    }

    #[test]
    fn unknown_id_rejected() {
        let mut cfg = RunConfig::default();
        cfg.split.prior = Some(vec!["task-9999".into()]);
        cfg.split.test = Some(vec![]);
        let tasks = cfg.tasks().unwrap();
        assert!(cfg.resolve_split(&tasks).is_err());
    }

    #[test]
    fn hash_changes_iff_config_changes() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.seed = 2;
        assert_ne!(config_hash(&a), config_hash(&b));
        let mut c = RunConfig::default();
        c.pipeline.train.ppo.total_epochs += 1;
        assert_ne!(config_hash(&a), config_hash(&c));
    }

    #[test]
    fn empty_json_parses_to_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }
}
