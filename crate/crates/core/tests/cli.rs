use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use allab::config::parse_config;
use allab::report::RunManifest;

const BASE: &str = r#"{
  "name": "cli-test",
  "dataset": {"source": {"kind": "gaussian_mixture", "num_classes": 3, "dim": 4, "n_per_class": 40, "class_sep": 3.0, "seed": 2}},
  "strategy": "STRATEGY",
  "num_cycles": 3,
  "budget_per_cycle": 8,
  "split": {"initial_labeled": 16, "seed": 1},
  "trials": 2,
  "mc_samples": 4,
  "learner": {"hidden_sizes": [8], "epochs": 4, "batch_size": 16}
}"#;

fn write_config(dir: &Path, name: &str, strategy: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, BASE.replace("STRATEGY", strategy)).unwrap();
    p
}

fn allab(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_allab"));
    cmd.args(args).env_remove("ALLAB_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_is_byte_reproducible_and_manifest_is_complete() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "entropy");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = allab(&["run", "--config", s(&cfg), "--out", s(out), "--jobs", "1"], &[]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["results.csv", "selections.csv", "scores/trial1_cycle1.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let text = fs::read_to_string(a.join("results.csv")).unwrap();
    assert!(text.starts_with("strategy,cycle,labeled,mean_acc,std_acc,trial_0,trial_1\n"));
    assert_eq!(text.lines().count(), 4);
    let m = RunManifest::read(&a).unwrap();
    assert!(m.artifacts_exist(&a));
    assert_eq!(m.config_hash, parse_config(&cfg).unwrap().hash());
    assert!(m.trials.iter().all(|t| t.status == "completed" && t.cycle_seconds.len() == 3));
}

#[test]
fn json_format_writes_results_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "var_ratio");
    let out = dir.path().join("o");
    let o = allab(&["run", "--config", s(&cfg), "--out", s(&out), "--format", "json"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 3);
    assert_eq!(v[2]["labeled"], 32);
}

#[test]
fn seed_flag_beats_env_var_which_beats_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "random");
    let hash_with = |seed: u64| {
        let mut c = parse_config(&cfg).unwrap();
        c.base_seed = seed;
        c.hash()
    };
    let out = dir.path().join("env");
    assert_eq!(allab(&["run", "--config", s(&cfg), "--out", s(&out)], &[("ALLAB_SEED", "9")]).status.code(), Some(0));
    assert_eq!(RunManifest::read(&out).unwrap().config_hash, hash_with(9));
    let out = dir.path().join("flag");
    let o = allab(&["run", "--config", s(&cfg), "--out", s(&out), "--seed", "3"], &[("ALLAB_SEED", "9")]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(RunManifest::read(&out).unwrap().config_hash, hash_with(3));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let bad = dir.path().join("bad.json");
    fs::write(&bad, BASE.replace("STRATEGY", "entropy").replace("\"trials\"", "\"trails\": 1, \"trials\"")).unwrap();
    let o = allab(&["run", "--config", s(&bad), "--out", s(&out)], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("trails"));

    fs::write(&bad, BASE.replace("STRATEGY", "")).unwrap();
    let o = allab(&["run", "--config", s(&bad), "--out", s(&out)], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("strategy"));

    let o = allab(&["run", "--config", s(&dir.path().join("missing.json")), "--out", s(&out)], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(allab(&["frobnicate"], &[]).status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "random");
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = allab(&["run", "--config", s(&cfg), "--out", s(&blocker.join("sub"))], &[]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn compare_emits_deltas_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfgs: Vec<PathBuf> = ["random", "entropy", "coreset"]
        .iter()
        .map(|st| write_config(dir.path(), &format!("{st}.json"), st))
        .collect();
    let out = dir.path().join("cmp");
    let o = allab(&["compare", "--config", s(&cfgs[0]), s(&cfgs[1]), s(&cfgs[2]), "--out", s(&out)], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("strategy,cycle,labeled,mean_acc,std_acc,delta_vs_random_pp"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3 * 3);
    assert!(rows[..3].iter().all(|r| r.ends_with(",0")));
    let plot = fs::read_to_string(out.join("plot_data.csv")).unwrap();
    assert_eq!(plot.lines().count(), 1 + 9);
    assert!(RunManifest::read(&out).unwrap().artifacts_exist(&out));

    let mut other = BASE.replace("STRATEGY", "entropy");
    other = other.replace("\"class_sep\": 3.0", "\"class_sep\": 2.0");
    let mismatched = dir.path().join("mismatch.json");
    fs::write(&mismatched, other).unwrap();
    let o = allab(&["compare", "--config", s(&cfgs[0]), s(&mismatched), "--out", s(&dir.path().join("x"))], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mismatch"));
}

#[test]
fn sweep_budget_matches_totals() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "random");
    let out = dir.path().join("sweep");
    let o = allab(&["sweep-budget", "--config", s(&cfg), "--budgets", "8,16", "--total", "32", "--out", s(&out)], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let finals: Vec<&str> = table.lines().filter(|l| l.contains(",32,")).collect();
    assert_eq!(finals.len(), 2);
    let o = allab(&["sweep-budget", "--config", s(&cfg), "--budgets", "12", "--total", "32", "--out", s(&out)], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn explain_reports_scores_and_duplicate_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let text = BASE
        .replace("STRATEGY", "entropy")
        .replace("\"seed\": 2}}", "\"seed\": 2}, \"duplicate_factor\": 3}");
    let cfg = dir.path().join("dup.json");
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("o");
    assert_eq!(allab(&["run", "--config", s(&cfg), "--out", s(&out)], &[]).status.code(), Some(0));
    let o = allab(&["explain", "--config", s(&cfg), "--out", s(&out), "--cycle", "1", "--trial", "1"], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("selected_per_group,groups"));
    let m = RunManifest::read(&out).unwrap();
    let scores = fs::read_to_string(out.join("explain_trial1_cycle1.csv")).unwrap();
    // pool at cycle 1 = train size - (16 + 8) labels
    assert_eq!(scores.lines().count() - 1, m.train_size - 24);

    let o = allab(&["explain", "--config", s(&cfg), "--out", s(&out), "--cycle", "2"], &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing results"));
    let o = allab(&["explain", "--config", s(&cfg), "--out", s(&dir.path().join("none")), "--cycle", "0"], &[]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn inspect_reads_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "llal");
    let out = dir.path().join("o");
    assert_eq!(allab(&["run", "--config", s(&cfg), "--out", s(&out)], &[]).status.code(), Some(0));
    let o = allab(&["inspect", s(&out.join("models/trial0.bin")), "--format", "json"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["loss_head"], true);
    assert_eq!(v["epoch"], 4);
    fs::write(dir.path().join("junk.bin"), b"not a model").unwrap();
    assert_eq!(allab(&["inspect", s(&dir.path().join("junk.bin"))], &[]).status.code(), Some(3));
}
