//! Aggregation of completed runs into summary tables and plot-ready curves.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use skillforge::rl::train::read_curve_csv;
use skillforge::rl::CurvePoint;

/// Metadata each training subcommand writes next to its curve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunResult {
    pub task_id: String,
    /// Grouping label, e.g. "scratch-dense" or "srsa-dense".
    pub method: String,
    pub seed: u64,
    pub sil_enabled: bool,
    pub reward_mode: String,
    pub strategy: Option<String>,
    pub source: Option<String>,
    pub final_success: f64,
    pub best_success: f64,
    pub epochs_to_target: Option<usize>,
}

pub struct LoadedRun {
    pub result: RunResult,
    pub curve: Vec<CurvePoint>,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let result_path = dir.join("result.json");
    let curve_path = dir.join("curve.csv");
    if !result_path.is_file() {
        bail!("missing {}", result_path.display());
    }
    if !curve_path.is_file() {
        bail!("missing {}", curve_path.display());
    }
    let result: RunResult = serde_json::from_str(
        &std::fs::read_to_string(&result_path)
            .with_context(|| format!("reading {}", result_path.display()))?,
    )?;
    let curve = read_curve_csv(&curve_path)
        .map_err(|e| anyhow::anyhow!("{}: {e}", curve_path.display()))?;
    Ok(LoadedRun { result, curve })
}

fn mean_std_population(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Serialize)]
struct CurveBundle {
    epochs: Vec<usize>,
    mean: Vec<f64>,
    /// Population standard deviation per epoch over the runs present there.
    std: Vec<f64>,
    n_runs: usize,
}

/// Writes `summary.csv` (mean and population std of final success per task
/// and method) and `curves.json` (per-epoch mean and std success curves).
pub fn write_report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<()> {
    if run_dirs.is_empty() {
        bail!("report needs at least one run directory");
    }
    let mut groups: BTreeMap<(String, String), Vec<LoadedRun>> = BTreeMap::new();
    for dir in run_dirs {
        let run = load_run(dir)?;
        groups
            .entry((run.result.task_id.clone(), run.result.method.clone()))
            .or_default()
            .push(run);
    }
    std::fs::create_dir_all(out_dir)?;

    // Population (not sample) standard deviation throughout.
    let mut summary = String::from(
        "task_id,method,n_runs,mean_final_success,std_final_success_population,mean_epochs_to_target\n",
    );
    let mut curves: BTreeMap<String, CurveBundle> = BTreeMap::new();
    for ((task, method), runs) in &groups {
        let finals: Vec<f64> = runs.iter().map(|r| r.result.final_success).collect();
        let (mean, std) = mean_std_population(&finals);
        let epochs: Vec<usize> = runs
            .iter()
            .filter_map(|r| r.result.epochs_to_target)
            .collect();
        let mean_epochs = if epochs.is_empty() {
            String::new()
        } else {
            format!(
                "{}",
                epochs.iter().sum::<usize>() as f64 / epochs.len() as f64
            )
        };
        summary.push_str(&format!(
            "{task},{method},{},{mean},{std},{mean_epochs}\n",
            runs.len()
        ));

        // Align curves by epoch index; early-stopped runs simply drop out of
        // later indices.
        let max_len = runs.iter().map(|r| r.curve.len()).max().unwrap_or(0);
        let mut mean_curve = Vec::with_capacity(max_len);
        let mut std_curve = Vec::with_capacity(max_len);
        let mut epoch_idx = Vec::with_capacity(max_len);
        for e in 0..max_len {
            let vals: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.curve.get(e).map(|p| p.success_rate))
                .collect();
            let (m, s) = mean_std_population(&vals);
            epoch_idx.push(e);
            mean_curve.push(m);
            std_curve.push(s);
        }
        curves.insert(
            format!("{task}/{method}"),
            CurveBundle {
                epochs: epoch_idx,
                mean: mean_curve,
                std: std_curve,
                n_runs: runs.len(),
            },
        );
    }
    std::fs::write(out_dir.join("summary.csv"), summary)?;
    std::fs::write(
        out_dir.join("curves.json"),
        serde_json::to_string_pretty(&curves)?,
    )?;
    Ok(())
}
