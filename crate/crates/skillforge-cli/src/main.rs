//! Pipeline driver: generates task families, trains specialists, builds the
//! skill library, learns task features and the transfer predictor, runs
//! retrieval and fine-tuning, and drives the continual-learning loop. Each
//! subcommand composes with the others through files under the output
//! directory.

mod config;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use skillforge::continual::{
    continual_run, train_feature_encoders, train_library_predictor, transfer_dataset_cached,
    write_continual_csv,
};
use skillforge::features::{FeatureEncoders, TaskData};
use skillforge::library::{add_skill, load_library, save_library, SkillLibrary, SkillRecord};
use skillforge::nn::checkpoint;
use skillforge::predictor::{eval_zero_shot, write_transfer_csv, PredictorF};
use skillforge::retrieval::{
    retrieve_behavior, retrieve_forward, retrieve_geometry, retrieve_signature, retrieve_srsa,
    RetrievalResult, Strategy,
};
use skillforge::rl::train::write_curve_csv;
use skillforge::rl::{epochs_to_target, finetune, train_scratch, FinetuneResult, MeanActionPolicy};
use skillforge::rng::{hash_str, mix_seed};
use skillforge::task::{save_task_json, RewardMode, TaskSpec};
use skillforge::vae::train_behavior_vae;

use config::{config_hash, RunConfig};
use report::RunResult;

#[derive(Parser)]
#[command(
    name = "skillforge",
    version,
    about = "2D insertion skill library pipeline"
)]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the task family as one JSON file per task.
    GenTasks {
        /// Overrides the family size.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train one specialist policy from scratch.
    TrainScratch {
        #[arg(long)]
        task: String,
        #[arg(long, value_parser = parse_reward)]
        reward: Option<RewardMode>,
        /// Overrides the training epoch budget.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train specialists for every prior task and assemble the library.
    BuildLibrary {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the geometry, dynamics, and action feature learners.
    LearnFeatures {
        #[arg(long, value_name = "DIR")]
        library: Option<PathBuf>,
    },
    /// Evaluate all source-target pairs and train the transfer predictor.
    TrainPredictor {
        #[arg(long, value_name = "DIR")]
        library: Option<PathBuf>,
        /// Zero-shot episodes per source-target pair.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Retrieve a source skill for every test task with one strategy.
    EvalRetrieval {
        #[arg(long, value_parser = parse_strategy)]
        strategy: Strategy,
        #[arg(long, value_name = "DIR")]
        library: Option<PathBuf>,
        /// Candidates evaluated for the predictor-guided strategy.
        #[arg(long)]
        top_k: Option<usize>,
        /// Episodes for measuring the chosen skill.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Retrieve and fine-tune a policy on one task.
    Finetune {
        #[arg(long)]
        task: String,
        /// Retrieval strategy used to pick the source skill.
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<Strategy>,
        /// Skip retrieval and fine-tune from this library entry.
        #[arg(long)]
        source: Option<String>,
        /// Disable the self-imitation update.
        #[arg(long)]
        no_sil: bool,
        #[arg(long, value_parser = parse_reward)]
        reward: Option<RewardMode>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long, value_name = "DIR")]
        library: Option<PathBuf>,
    },
    /// Run the continual-learning schedule, growing the library.
    Continual {
        #[arg(long, value_name = "DIR")]
        library: Option<PathBuf>,
    },
    /// Aggregate run directories into summary.csv and curves.json.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn parse_reward(s: &str) -> Result<RewardMode, String> {
    match s {
        "dense" => Ok(RewardMode::Dense),
        "sparse" => Ok(RewardMode::Sparse),
        other => Err(format!("unknown reward mode {other:?} (dense|sparse)")),
    }
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e| format!("{e}"))
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    created_unix: u64,
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = Manifest {
        command,
        config_hash: config_hash(cfg),
        seed: cfg.seed,
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

fn find_task(tasks: &[TaskSpec], id: &str) -> Result<TaskSpec> {
    tasks
        .iter()
        .find(|t| t.id == id)
        .cloned()
        .ok_or_else(|| anyhow!("task {id} not in the generated family"))
}

/// Seed for everything derived from one task within a run.
fn task_seed(cfg: &RunConfig, task_id: &str) -> u64 {
    mix_seed(cfg.seed, hash_str(task_id))
}

fn generate_task_data(cfg: &RunConfig, task: &TaskSpec) -> Result<TaskData> {
    Ok(TaskData::generate(
        task,
        cfg.pipeline.n_disassembly,
        cfg.pipeline.features.cloud_points,
        mix_seed(task_seed(cfg, &task.id), 0xDA7A),
    )?)
}

fn save_run(
    dir: &Path,
    cfg: &RunConfig,
    command: &str,
    result: &FinetuneResult,
    meta: RunResult,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_curve_csv(&dir.join("curve.csv"), &result.curve)?;
    result.policy.save(&dir.join("final.ckpt"))?;
    result.best_policy.save(&dir.join("best.ckpt"))?;
    std::fs::write(
        dir.join("result.json"),
        serde_json::to_string_pretty(&meta)?,
    )?;
    write_manifest(dir, command, cfg)?;
    if let Some(msg) = &result.aborted {
        eprintln!("warning: {}: {msg}", dir.display());
    }
    Ok(())
}

fn reward_name(mode: RewardMode) -> &'static str {
    match mode {
        RewardMode::Dense => "dense",
        RewardMode::Sparse => "sparse",
    }
}

fn load_encoders(cfg: &RunConfig) -> Result<FeatureEncoders> {
    let dir = cfg.features_dir();
    FeatureEncoders::load(&dir.join("encoders.ckpt"), &dir.join("encoders.json")).map_err(|e| {
        anyhow!(
            "loading feature encoders from {}: {e} (run learn-features first)",
            dir.display()
        )
    })
}

fn load_predictor(cfg: &RunConfig) -> Result<PredictorF> {
    let path = cfg.predictor_dir().join("predictor.ckpt");
    let nets = checkpoint::load_checkpoint(&path).map_err(|e| {
        anyhow!(
            "loading predictor from {}: {e} (run train-predictor first)",
            path.display()
        )
    })?;
    let params = checkpoint::find_net(&nets, "F").map_err(|e| anyhow!("{e}"))?;
    let meta_path = cfg.predictor_dir().join("meta.json");
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)?;
    let include = meta["include_source_success"].as_bool().unwrap_or(false);
    let mut f = PredictorF::new(include, 0);
    if f.mlp.params.len() != params.len() {
        bail!(
            "predictor checkpoint {} has {} params, expected {}",
            path.display(),
            params.len(),
            f.mlp.params.len()
        );
    }
    f.mlp.params.copy_from_slice(params);
    Ok(f)
}

fn load_library_dir(cfg: &RunConfig, explicit: Option<&PathBuf>) -> Result<SkillLibrary> {
    let dir = explicit.cloned().unwrap_or_else(|| cfg.library_dir());
    let lib = load_library(&dir)?;
    if lib.is_empty() {
        bail!(
            "library at {} is empty (run build-library first)",
            dir.display()
        );
    }
    Ok(lib)
}

fn cmd_gen_tasks(cfg: &RunConfig, count: Option<usize>) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(c) = count {
        cfg.task_family.count = c;
    }
    let tasks = cfg.tasks()?;
    let dir = cfg.tasks_dir();
    std::fs::create_dir_all(&dir)?;
    for task in &tasks {
        std::fs::write(dir.join(format!("{}.json", task.id)), save_task_json(task)?)?;
    }
    write_manifest(&dir, "gen-tasks", &cfg)?;
    println!("wrote {} tasks to {}", tasks.len(), dir.display());
    Ok(())
}

fn scratch_one(
    cfg: &RunConfig,
    task: &TaskSpec,
    reward: Option<RewardMode>,
    epochs: Option<usize>,
) -> Result<(FinetuneResult, RunResult)> {
    let mut train = cfg.pipeline.train;
    if let Some(r) = reward {
        train.reward_mode = r;
    }
    if let Some(e) = epochs {
        train.ppo.total_epochs = e;
    }
    let seed = task_seed(cfg, &task.id);
    let result = train_scratch(task, &train, seed)?;
    let meta = RunResult {
        task_id: task.id.clone(),
        method: format!("scratch-{}", reward_name(train.reward_mode)),
        seed,
        sil_enabled: false,
        reward_mode: reward_name(train.reward_mode).into(),
        strategy: None,
        source: None,
        final_success: result.final_success,
        best_success: result.best_success,
        epochs_to_target: epochs_to_target(&result.curve, train.success_target),
    };
    Ok((result, meta))
}

fn cmd_train_scratch(
    cfg: &RunConfig,
    task_id: &str,
    reward: Option<RewardMode>,
    epochs: Option<usize>,
) -> Result<()> {
    let tasks = cfg.tasks()?;
    let task = find_task(&tasks, task_id)?;
    let (result, meta) = scratch_one(cfg, &task, reward, epochs)?;
    let dir = cfg
        .runs_dir()
        .join(format!("{}-{}-s{}", task.id, meta.method, meta.seed));
    save_run(&dir, cfg, "train-scratch", &result, meta)?;
    println!(
        "{}: final success {:.3}, best {:.3} -> {}",
        task.id,
        result.final_success,
        result.best_success,
        dir.display()
    );
    Ok(())
}

fn cmd_build_library(cfg: &RunConfig, epochs: Option<usize>) -> Result<()> {
    let tasks = cfg.tasks()?;
    let (prior, _) = cfg.resolve_split(&tasks)?;
    let mut library = SkillLibrary::new();
    for id in &prior {
        let task = find_task(&tasks, id)?;
        let data = generate_task_data(cfg, &task)?;
        let (result, meta) = scratch_one(cfg, &task, None, epochs)?;
        println!(
            "{}: best success {:.3} in {} epochs",
            id,
            result.best_success,
            result.curve.len()
        );
        let run_dir = cfg
            .runs_dir()
            .join(format!("{}-{}-s{}", task.id, meta.method, meta.seed));
        let epochs_to = meta.epochs_to_target;
        save_run(&run_dir, cfg, "build-library", &result, meta)?;
        add_skill(
            &mut library,
            SkillRecord {
                task,
                policy: result.best_policy,
                train_success: result.best_success,
                disassembly: data.disassembly,
                clouds: data.clouds,
                feature_cache: None,
                epochs_to_target: epochs_to,
            },
        )?;
    }
    let dir = cfg.library_dir();
    save_library(&library, &dir)?;
    write_manifest(&dir, "build-library", cfg)?;
    println!("library of {} skills at {}", library.len(), dir.display());
    Ok(())
}

fn cmd_learn_features(cfg: &RunConfig, library: Option<&PathBuf>) -> Result<()> {
    let lib = load_library_dir(cfg, library)?;
    let encoders =
        train_feature_encoders(&lib, &cfg.pipeline.features, mix_seed(cfg.seed, 0xFEA7))?;
    let dir = cfg.features_dir();
    std::fs::create_dir_all(&dir)?;
    encoders.save(&dir.join("encoders.ckpt"), &dir.join("encoders.json"))?;
    write_manifest(&dir, "learn-features", cfg)?;
    println!("feature encoders at {}", dir.display());
    Ok(())
}

fn cmd_train_predictor(
    cfg: &RunConfig,
    library: Option<&PathBuf>,
    episodes: Option<usize>,
) -> Result<()> {
    let lib = load_library_dir(cfg, library)?;
    let encoders = load_encoders(cfg)?;
    let episodes = episodes.unwrap_or(cfg.pipeline.predictor.eval_episodes);
    let mut cache = BTreeMap::new();
    let records = transfer_dataset_cached(&lib, episodes, cfg.seed, &mut cache)?;
    let dir = cfg.predictor_dir();
    std::fs::create_dir_all(&dir)?;
    write_transfer_csv(&dir.join("transfer.csv"), &records)?;
    let f = train_library_predictor(
        &lib,
        &encoders,
        &records,
        &cfg.pipeline.predictor,
        mix_seed(cfg.seed, 0xF00D),
    )?;
    checkpoint::save_checkpoint(&dir.join("predictor.ckpt"), &[("F", &f.mlp.params)])?;
    let label_var = skillforge::predictor::label_variance(&records);
    std::fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "include_source_success": f.include_source_success,
            "n_records": records.len(),
            "label_variance": label_var,
            "eval_episodes": episodes,
        }))?,
    )?;
    write_manifest(&dir, "train-predictor", cfg)?;
    println!("predictor on {} pairs at {}", records.len(), dir.display());
    Ok(())
}

fn run_retrieval(
    cfg: &RunConfig,
    lib: &SkillLibrary,
    encoders: &FeatureEncoders,
    strategy: Strategy,
    task: &TaskSpec,
    data: &TaskData,
    top_k: Option<usize>,
) -> Result<RetrievalResult> {
    let mut rcfg = cfg.pipeline.retrieval;
    if let Some(k) = top_k {
        rcfg.top_k = k;
    }
    let result = match strategy {
        Strategy::Signature => retrieve_signature(lib, &data.disassembly)?,
        Strategy::Geometry => retrieve_geometry(lib, &data.clouds, encoders)?,
        Strategy::Forward => retrieve_forward(lib, &data.disassembly, encoders, &rcfg)?,
        Strategy::Behavior => {
            let pairs = lib.state_action_pairs();
            let (vae, _) =
                train_behavior_vae(&pairs, &cfg.pipeline.vae, mix_seed(cfg.seed, 0xBEAE))?;
            retrieve_behavior(lib, &data.disassembly, &vae, &rcfg)?
        }
        Strategy::Srsa => {
            let f = load_predictor(cfg)?;
            retrieve_srsa(
                lib,
                (task, data.disassembly.as_slice()),
                &f,
                encoders,
                &rcfg,
                mix_seed(task_seed(cfg, &task.id), 0x3E7),
            )?
        }
    };
    Ok(result)
}

fn cmd_eval_retrieval(
    cfg: &RunConfig,
    strategy: Strategy,
    library: Option<&PathBuf>,
    top_k: Option<usize>,
    episodes: Option<usize>,
) -> Result<()> {
    let tasks = cfg.tasks()?;
    let (_, test) = cfg.resolve_split(&tasks)?;
    let lib = load_library_dir(cfg, library)?;
    let encoders = load_encoders(cfg)?;
    let episodes = episodes.unwrap_or(cfg.pipeline.predictor.eval_episodes);
    let dir = cfg.output_dir.join("retrieval").join(strategy.to_string());
    std::fs::create_dir_all(&dir)?;
    let mut scores = String::from("task_id,strategy,chosen,score,measured_success\n");
    for id in &test {
        let task = find_task(&tasks, id)?;
        let data = generate_task_data(cfg, &task)?;
        let result = run_retrieval(cfg, &lib, &encoders, strategy, &task, &data, top_k)?;
        let chosen = lib.get(&result.chosen).unwrap();
        let measured = eval_zero_shot(
            &MeanActionPolicy {
                policy: &chosen.policy,
            },
            &task,
            episodes,
            mix_seed(task_seed(cfg, id), 0x2EA1),
        )?;
        let score = result
            .ranked
            .iter()
            .find(|(rid, _)| *rid == result.chosen)
            .map(|(_, s)| *s)
            .unwrap_or(0.0);
        scores.push_str(&format!(
            "{id},{strategy},{},{score},{measured}\n",
            result.chosen
        ));
        std::fs::write(
            dir.join(format!("{id}.json")),
            serde_json::to_string_pretty(&result)?,
        )?;
        println!(
            "{id}: {strategy} chose {} (measured {measured:.3})",
            result.chosen
        );
    }
    std::fs::write(dir.join("scores.csv"), scores)?;
    write_manifest(&dir, "eval-retrieval", cfg)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_finetune(
    cfg: &RunConfig,
    task_id: &str,
    strategy: Option<Strategy>,
    source: Option<&String>,
    no_sil: bool,
    reward: Option<RewardMode>,
    epochs: Option<usize>,
    top_k: Option<usize>,
    library: Option<&PathBuf>,
) -> Result<()> {
    let tasks = cfg.tasks()?;
    let task = find_task(&tasks, task_id)?;
    let lib = load_library_dir(cfg, library)?;
    let (source_id, label) = match (source, strategy) {
        (Some(src), _) => (src.clone(), format!("src-{src}")),
        (None, strategy) => {
            let strategy = strategy.unwrap_or(Strategy::Srsa);
            let encoders = load_encoders(cfg)?;
            let data = generate_task_data(cfg, &task)?;
            let result = run_retrieval(cfg, &lib, &encoders, strategy, &task, &data, top_k)?;
            (result.chosen, strategy.to_string())
        }
    };
    let record = lib
        .get(&source_id)
        .ok_or_else(|| anyhow!("source skill {source_id} not in the library"))?;

    let mut train = cfg.pipeline.train;
    if let Some(r) = reward {
        train.reward_mode = r;
    }
    if let Some(e) = epochs {
        train.ppo.total_epochs = e;
    }
    let sil_enabled = !no_sil;
    let seed = task_seed(cfg, &task.id);
    let result = finetune(&record.policy, &task, &train, sil_enabled, seed)?;
    let method = format!(
        "ft-{label}-{}{}",
        reward_name(train.reward_mode),
        if sil_enabled { "" } else { "-nosil" }
    );
    let meta = RunResult {
        task_id: task.id.clone(),
        method: method.clone(),
        seed,
        sil_enabled,
        reward_mode: reward_name(train.reward_mode).into(),
        strategy: strategy.map(|s| s.to_string()),
        source: Some(source_id.clone()),
        final_success: result.final_success,
        best_success: result.best_success,
        epochs_to_target: epochs_to_target(&result.curve, train.success_target),
    };
    let dir = cfg.runs_dir().join(format!("{}-{method}-s{seed}", task.id));
    save_run(&dir, cfg, "finetune", &result, meta)?;
    println!(
        "{}: fine-tuned from {source_id}, final success {:.3} -> {}",
        task.id,
        result.final_success,
        dir.display()
    );
    Ok(())
}

fn cmd_continual(cfg: &RunConfig, library: Option<&PathBuf>) -> Result<()> {
    let tasks = cfg.tasks()?;
    let lib = load_library_dir(cfg, library)?;
    let mut ccfg = cfg.continual.clone();
    if ccfg.batch_schedule.is_empty() {
        // Default schedule: the first 12 family tasks not yet in the
        // library, in three batches of four.
        let pending: Vec<String> = tasks
            .iter()
            .map(|t| t.id.clone())
            .filter(|id| lib.get(id).is_none())
            .take(12)
            .collect();
        ccfg.batch_schedule = pending.chunks(4).map(|c| c.to_vec()).collect();
        println!(
            "using default schedule of {} batches",
            ccfg.batch_schedule.len()
        );
    }
    let (final_lib, rows) = continual_run(lib, &tasks, &ccfg, &cfg.pipeline, cfg.seed)?;
    let dir = cfg.output_dir.join("continual");
    std::fs::create_dir_all(&dir)?;
    write_continual_csv(&dir.join("report.csv"), &rows)?;
    save_library(&final_lib, &dir.join("library"))?;
    write_manifest(&dir, "continual", cfg)?;
    for row in &rows {
        println!(
            "{} (batch {}): {} from {}, success {:.3}{}",
            row.task_id,
            row.batch,
            row.strategy,
            row.chosen_source,
            row.final_success,
            if row.flagged { " [below target]" } else { "" }
        );
    }
    println!(
        "final library of {} skills at {}",
        final_lib.len(),
        dir.join("library").display()
    );
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("SKILLFORGE_THREADS") {
        let n: usize = threads
            .parse()
            .with_context(|| format!("SKILLFORGE_THREADS={threads} is not a number"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .ok();
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    match &cli.command {
        Command::GenTasks { count } => cmd_gen_tasks(&cfg, *count),
        Command::TrainScratch {
            task,
            reward,
            epochs,
        } => cmd_train_scratch(&cfg, task, *reward, *epochs),
        Command::BuildLibrary { epochs } => cmd_build_library(&cfg, *epochs),
        Command::LearnFeatures { library } => cmd_learn_features(&cfg, library.as_ref()),
        Command::TrainPredictor { library, episodes } => {
            cmd_train_predictor(&cfg, library.as_ref(), *episodes)
        }
        Command::EvalRetrieval {
            strategy,
            library,
            top_k,
            episodes,
        } => cmd_eval_retrieval(&cfg, *strategy, library.as_ref(), *top_k, *episodes),
        Command::Finetune {
            task,
            strategy,
            source,
            no_sil,
            reward,
            epochs,
            top_k,
            library,
        } => cmd_finetune(
            &cfg,
            task,
            *strategy,
            source.as_ref(),
            *no_sil,
            *reward,
            *epochs,
            *top_k,
            library.as_ref(),
        ),
        Command::Continual { library } => cmd_continual(&cfg, library.as_ref()),
        Command::Report { runs } => {
            let out = cfg.output_dir.join("report");
            report::write_report(runs, &out)?;
            println!("report at {}", out.display());
            Ok(())
        }
    }
}
