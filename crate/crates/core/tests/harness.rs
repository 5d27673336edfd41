use std::path::Path;
use std::process::Command;

use fairk::error::Error;
use fairk::harness::{self, read_metrics, ExperimentConfig, MetricsWriter};
use fairk::selection::PolicyKind;
use fairk::training::{build_clients, RoundMetrics, Simulation, TaskKind};

const SMALL: &str = r#"
seed = 7
rounds = 3
clients = 6
batch_size = 10

[data]
classes = 3
features = 5
train_per_class = 40
test_per_class = 10
"#;

fn small(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(SMALL, "inline").unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn three_rounds_give_three_records_and_one_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let s = harness::run(&cfg).unwrap();
    assert_eq!(s.rounds_completed, 3);
    assert_eq!(lines(&dir.path().join("metrics.jsonl")), 3);
    assert_eq!(lines(&dir.path().join("summary.csv")), 2);
    // The stored config reloads to the one that ran.
    assert_eq!(ExperimentConfig::load(&dir.path().join("config.toml")).unwrap(), cfg);
}

#[test]
fn records_written_before_an_abort_are_kept() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { rounds: 100, ..small(dir.path()) };
    let prepared = harness::prepare(&cfg).unwrap();
    let policy = cfg.policy.resolve(PolicyKind::FairK, prepared.task.dim()).unwrap();
    let clients = build_clients(&prepared.train, cfg.clients, cfg.dir_alpha, cfg.batch_size, cfg.seed).unwrap();
    let mut sim = Simulation::new(prepared.task, clients, None, harness::training_settings(&cfg, policy)).unwrap();
    let path = dir.path().join("metrics.jsonl");
    let mut writer = MetricsWriter::create(&path).unwrap();
    let outcome = sim.run(cfg.rounds, |m: &RoundMetrics| {
        if m.round == 5 {
            return Err(Error::Config(fairk::error::ConfigError(vec!["stop".into()])));
        }
        writer.write(m)
    });
    assert!(outcome.is_err());
    // Read while the writer is still alive: every record is already flushed.
    assert_eq!(read_metrics(&path).unwrap().len(), 5);
}

#[test]
fn divergence_keeps_partial_metrics_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.rounds = 100;
    cfg.task.kind = TaskKind::SyntheticQuadratic;
    cfg.data.train_samples = 200;
    cfg.data.test_samples = 20;
    cfg.eta = 10.0;
    cfg.eta_l = 1.0;
    let err = harness::run(&cfg).unwrap_err();
    assert!(err.to_string().contains("diverge"), "{err}");
    let kept = lines(&dir.path().join("metrics.jsonl"));
    assert!(kept < 100);
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let row = summary.lines().nth(1).unwrap();
    assert!(row.starts_with(&format!("fair_k,{kept},")), "{row}");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = small(&dir.path().join("a"));
    a.rounds = 20;
    let b = ExperimentConfig { out: dir.path().join("b"), workers: 3, ..a.clone() };
    harness::run(&a).unwrap();
    harness::run(&b).unwrap();
    let read = |c: &ExperimentConfig| std::fs::read(c.out.join("metrics.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn compare_writes_one_row_per_round_and_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let summaries = harness::compare(&cfg).unwrap();
    assert_eq!(summaries.len(), PolicyKind::ALL.len());
    assert_eq!(lines(&dir.path().join("compare.csv")), 1 + 3 * PolicyKind::ALL.len());
    assert_eq!(lines(&dir.path().join("summary.csv")), 1 + PolicyKind::ALL.len());
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fairk")).args(args).output().unwrap()
}

#[test]
fn cli_reports_a_missing_config() {
    let out = cli(&["run", "--config", "/no/such/config.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/config.toml"));
}

#[test]
fn cli_rejects_an_invalid_config_with_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "clients = 0\neta = -1.0\n").unwrap();
    let out = cli(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("clients") && err.contains("eta"), "{err}");
}

#[test]
fn cli_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.toml");
    std::fs::write(&path, SMALL).unwrap();
    let out_dir = dir.path().join("run");
    let out = cli(&[
        "run",
        "--config",
        path.to_str().unwrap(),
        "--rounds",
        "4",
        "--policy",
        "top_rand",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(lines(&out_dir.join("metrics.jsonl")), 4);
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().starts_with("top_rand,4,ok"));
}

#[test]
fn cli_writes_the_staleness_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["aou-dist", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("aou_dist.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("l,analytic_prob,empirical_prob"));
}

#[test]
fn guide_config_example_is_the_default() {
    let guide = include_str!("../../../book/src/experiments.md");
    let block = guide.split("```toml\n").nth(1).unwrap().split("```").next().unwrap();
    assert_eq!(ExperimentConfig::from_toml(block, "guide").unwrap(), ExperimentConfig::default());
}
