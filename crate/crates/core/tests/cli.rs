use std::path::Path;
use std::process::{Command, Output};

use gradalign::harness::read_metrics;

const SMALL: &str = r#"
[experiment]
total_steps = 20
eval_every = 5
n_train = 4
rollouts_per_training_problem = 8
validation_size = 16
test_size = 32

[scenario]
pool_size = 32

[selection]
pool_size = 32
"#;

fn gradalign(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gradalign"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

#[test]
fn run_writes_metrics_and_is_reproducible() {
    let dir = setup();
    let d = dir.path();
    for out in ["a.csv", "b.csv"] {
        let o = gradalign(
            &["run", "--config", "small.toml", "--seed", "3", "--out", out],
            d,
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(d.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.csv")).unwrap());
    let rows = read_metrics(&d.join("a.csv")).unwrap();
    assert_eq!(rows.iter().filter(|r| r.val_acc.is_some()).count(), 5);
    assert!(rows.iter().all(|r| r.seed == 3));
}

#[test]
fn run_requires_a_seed() {
    let dir = setup();
    let o = gradalign(&["run", "--config", "small.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), "[selection]\nselection_ratio = 1\n").unwrap();
    for args in [
        vec!["run", "--config", "bad.toml", "--seed", "1"],
        vec!["run", "--config", "missing.toml", "--seed", "1"],
        vec![
            "run",
            "--config",
            "small.toml",
            "--seed",
            "1",
            "--set",
            "grpo.nope=3",
        ],
        vec![
            "run",
            "--config",
            "small.toml",
            "--seed",
            "1",
            "--selector",
            "greedy",
        ],
    ] {
        let o = gradalign(&args, d);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn numeric_abort_exits_with_three_and_keeps_partial_metrics() {
    let dir = setup();
    let d = dir.path();
    let o = gradalign(
        &[
            "run",
            "--config",
            "small.toml",
            "--seed",
            "1",
            "--set",
            "grpo.learning_rate=1e308",
            "--set",
            "grpo.weight_decay=0.0",
            "--out",
            "m.csv",
        ],
        d,
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite"));
    let rows = read_metrics(&d.join("m.csv")).unwrap();
    assert!(!rows.is_empty());
}

#[test]
fn checkpoint_resume_reproduces_the_metrics_file() {
    let dir = setup();
    let d = dir.path();
    let straight = gradalign(
        &[
            "run",
            "--config",
            "small.toml",
            "--seed",
            "4",
            "--out",
            "straight.csv",
        ],
        d,
    );
    assert!(straight.status.success());
    let first = gradalign(
        &[
            "run",
            "--config",
            "small.toml",
            "--seed",
            "4",
            "--steps",
            "20",
            "--checkpoint",
            "cp.json",
            "--checkpoint-every",
            "7",
            "--out",
            "first.csv",
        ],
        d,
    );
    assert!(first.status.success());
    // Rewind: a checkpoint from step 14 of the same run, then resume it.
    let mut cp = gradalign::harness::Runner::new(
        gradalign::harness::ExperimentConfig::load(
            &d.join("small.toml"),
            &["experiment.seed=4".into()],
        )
        .unwrap(),
    )
    .unwrap();
    cp.advance_to(14).unwrap();
    cp.checkpoint().save(&d.join("mid.json")).unwrap();
    let resumed = gradalign(
        &[
            "run",
            "--seed",
            "4",
            "--resume",
            "mid.json",
            "--out",
            "resumed.csv",
        ],
        d,
    );
    assert!(
        resumed.status.success(),
        "{}",
        String::from_utf8_lossy(&resumed.stderr)
    );
    let s = std::fs::read(d.join("straight.csv")).unwrap();
    assert_eq!(s, std::fs::read(d.join("first.csv")).unwrap());
    assert_eq!(s, std::fs::read(d.join("resumed.csv")).unwrap());
    let wrong_seed = gradalign(&["run", "--seed", "5", "--resume", "mid.json"], d);
    assert_eq!(wrong_seed.status.code(), Some(2));
}

#[test]
fn compare_report_and_ablations() {
    let dir = setup();
    let d = dir.path();
    let o = gradalign(
        &[
            "compare",
            "--config",
            "small.toml",
            "--seeds",
            "1,2",
            "--selectors",
            "gradalign,random",
            "--out",
            "cmp.csv",
        ],
        d,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_metrics(&d.join("cmp.csv")).unwrap();
    let mut keys: Vec<(String, u64)> = rows
        .iter()
        .map(|r| (r.selector.to_string(), r.seed))
        .collect();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), 4);

    let report = gradalign(&["report", "cmp.csv"], d);
    assert!(report.status.success());
    let text = String::from_utf8_lossy(&report.stdout);
    assert!(text.contains("gradalign") && text.contains("random"));

    let kv = gradalign(
        &[
            "ablate-kv",
            "--config",
            "small.toml",
            "--k-values",
            "4,16",
            "--seeds",
            "1,2",
            "--out",
            "kv.json",
        ],
        d,
    );
    assert!(
        kv.status.success(),
        "{}",
        String::from_utf8_lossy(&kv.stderr)
    );
    let points: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("kv.json")).unwrap()).unwrap();
    assert_eq!(points.as_array().unwrap().len(), 2);
    let bad_kv = gradalign(&["ablate-kv", "--config", "small.toml", "--seeds", "1"], d);
    assert_eq!(bad_kv.status.code(), Some(2));

    let am = gradalign(
        &[
            "ablate-metric",
            "--config",
            "small.toml",
            "--seed",
            "1",
            "--out",
            "am.csv",
            "--scores",
            "scores.json",
        ],
        d,
    );
    assert!(
        am.status.success(),
        "{}",
        String::from_utf8_lossy(&am.stderr)
    );
    let rows = read_metrics(&d.join("am.csv")).unwrap();
    assert!(rows
        .iter()
        .any(|r| r.metric.map(|m| m.as_str()) == Some("inner_product")));
    assert!(d.join("scores.json").exists());
}

#[test]
fn report_rejects_foreign_files() {
    let dir = setup();
    std::fs::write(dir.path().join("x.csv"), "a,b\n").unwrap();
    let o = gradalign(&["report", "x.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
