//! End-to-end checks of the command-line surface: reproducible artifacts,
//! manifest behavior, and usage errors.

use std::path::Path;
use std::process::Command;

fn skillforge_bin() -> &'static str {
    env!("CARGO_BIN_EXE_skillforge")
}

fn run(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(skillforge_bin())
        .args(args)
        .current_dir(dir)
        .env("SKILLFORGE_THREADS", "2")
        .output()
        .expect("spawn skillforge")
}

fn read_dir_sorted(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().to_string())
        .collect();
    names.sort();
    names
}

#[test]
fn gen_tasks_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = run(
        &["gen-tasks", "--count", "8", "--seed", "1", "--out", "a"],
        tmp.path(),
    );
    assert!(
        out_a.status.success(),
        "{}",
        String::from_utf8_lossy(&out_a.stderr)
    );
    let out_b = run(
        &["gen-tasks", "--count", "8", "--seed", "1", "--out", "b"],
        tmp.path(),
    );
    assert!(out_b.status.success());

    let dir_a = tmp.path().join("a/tasks");
    let dir_b = tmp.path().join("b/tasks");
    let names = read_dir_sorted(&dir_a);
    assert!(names.contains(&"task-0000.json".to_string()));
    assert_eq!(names, read_dir_sorted(&dir_b));
    for name in names
        .iter()
        .filter(|n| n.ends_with(".json") && *n != "manifest.json")
    {
        let a = std::fs::read(dir_a.join(name)).unwrap();
        let b = std::fs::read(dir_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    // Manifests agree except for the timestamp.
    let manifest_a: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir_a.join("manifest.json")).unwrap())
            .unwrap();
    let manifest_b: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir_b.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest_a["config_hash"], manifest_b["config_hash"]);
    assert_eq!(manifest_a["seed"], manifest_b["seed"]);
    assert_eq!(manifest_a["command"], "gen-tasks");
}

#[test]
fn manifest_hash_tracks_config_changes() {
    let tmp = tempfile::tempdir().unwrap();
    run(
        &["gen-tasks", "--count", "3", "--seed", "1", "--out", "a"],
        tmp.path(),
    );
    run(
        &["gen-tasks", "--count", "3", "--seed", "2", "--out", "b"],
        tmp.path(),
    );
    let read = |p: &str| -> serde_json::Value {
        serde_json::from_str(
            &std::fs::read_to_string(tmp.path().join(p).join("tasks/manifest.json")).unwrap(),
        )
        .unwrap()
    };
    assert_ne!(read("a")["config_hash"], read("b")["config_hash"]);
}

#[test]
fn unknown_subcommand_and_bad_flags_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["frobnicate"], tmp.path());
    assert!(!out.status.success());
    let out = run(&["eval-retrieval", "--strategy", "psychic"], tmp.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("psychic"), "{err}");
    let out = run(
        &["finetune", "--task", "task-0000", "--reward", "bogus"],
        tmp.path(),
    );
    assert!(!out.status.success());
}

#[test]
fn finetune_without_library_is_a_clear_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["finetune", "--task", "task-0000"], tmp.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("build-library"), "{err}");
}

#[test]
fn train_scratch_writes_run_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "seed": 5,
        "output_dir": "exp",
        "task_family": { "count": 2, "seed": 9 },
        "split": { "prior_count": 1, "test_count": 1 },
        "pipeline": {
            "train": {
                "ppo": { "n_envs": 2, "horizon": 8, "minibatch_size": 16,
                         "minibatch_epochs": 1, "total_epochs": 2 },
                "eval_episodes": 4
            },
            "n_disassembly": 2
        }
    });
    std::fs::write(tmp.path().join("cfg.json"), config.to_string()).unwrap();
    let out = run(
        &[
            "train-scratch",
            "--task",
            "task-0001",
            "--config",
            "cfg.json",
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let runs = tmp.path().join("exp/runs");
    let entries = read_dir_sorted(&runs);
    assert_eq!(entries.len(), 1);
    let run_dir = runs.join(&entries[0]);
    for f in [
        "curve.csv",
        "result.json",
        "final.ckpt",
        "best.ckpt",
        "manifest.json",
    ] {
        assert!(run_dir.join(f).is_file(), "missing {f}");
    }
    let result: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("result.json")).unwrap())
            .unwrap();
    assert_eq!(result["task_id"], "task-0001");
    assert_eq!(result["sil_enabled"], false);

    // The report command aggregates the single run with zero std.
    let out = run(
        &[
            "report",
            "--config",
            "cfg.json",
            &format!("exp/runs/{}", entries[0]),
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = std::fs::read_to_string(tmp.path().join("exp/report/summary.csv")).unwrap();
    assert!(summary.contains("task-0001"));
    assert!(tmp.path().join("exp/report/curves.json").is_file());
}
