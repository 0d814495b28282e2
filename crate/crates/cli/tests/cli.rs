use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[train]
algorithm = "prco"
steps = 4
warmup_steps = 2
rollout_batch = 3
eval_interval = 2
eval_size = 30
master_seed = 5
"#;

fn prco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prco")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn train_tiny(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let run = dir.join("run");
    let out = prco(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--dump-trees",
        "--checkpoint-every",
        "3",
    ]);
    let summary: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(summary["steps"], 4);
    run
}

#[test]
fn train_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_tiny(dir.path());
    for f in ["metrics.jsonl", "metrics.csv", "curves.svg", "evals.jsonl", "config.toml", "params.txt", "trees.jsonl"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    assert!(run.join("checkpoint").join("state.json").is_file());
    let metrics = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    assert_eq!(fs::read_to_string(run.join("trees.jsonl")).unwrap().lines().count(), 12);
    // evaluations at steps 0 and 2, plus the final one
    assert_eq!(fs::read_to_string(run.join("evals.jsonl")).unwrap().lines().count(), 3);
    assert!(fs::read_to_string(run.join("curves.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn resume_reproduces_the_metrics_log() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_tiny(dir.path());
    let resumed = dir.path().join("resumed");
    let out = prco(&["train", "--resume", run.join("checkpoint").to_str().unwrap(), "--out", resumed.to_str().unwrap()]);
    stdout(&out);
    assert_eq!(fs::read(run.join("metrics.jsonl")).unwrap(), fs::read(resumed.join("metrics.jsonl")).unwrap());
    assert_eq!(fs::read(run.join("params.txt")).unwrap(), fs::read(resumed.join("params.txt")).unwrap());
}

#[test]
fn eval_passk_and_diagnose_read_trained_params() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_tiny(dir.path());
    let params = run.join("params.txt");
    let p = params.to_str().unwrap();

    let out = stdout(&prco(&["eval", "--params", p, "--eval-size", "40"]));
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    let acc = v["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(v["instances"], 40);

    let out = stdout(&prco(&["passk", "--params", p, "--eval-size", "20", "--k", "1,2,4"]));
    let vals: Vec<f64> = out
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["pass_at_k"].as_f64().unwrap())
        .collect();
    assert_eq!(vals.len(), 3);
    assert!(vals.windows(2).all(|w| w[0] <= w[1]));

    let out = stdout(&prco(&["diagnose", "--params", p, "--eval-size", "30", "--show", "2", "--pipeline", "direct"]));
    assert!(out.lines().next().unwrap().contains("perception"));
    assert_eq!(out.lines().count(), 1 + 4 + 2);
}

#[test]
fn errors_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = prco(&["eval", "--params", dir.path().join("missing.txt").to_str().unwrap()]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert!(err["error"].as_str().unwrap().contains("missing.txt"));

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\ng_o = 1\n").unwrap();
    let out = prco(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert!(err["error"].as_str().unwrap().contains("g_o"));

    let out = prco(&["train", "--config", cfg.to_str().unwrap(), "--set", "train.g_o=4", "--set", "train.steps=0", "--set", "train.warmup_steps=0", "--out", dir.path().join("zero").to_str().unwrap()]);
    stdout(&out);
}
