//! Result files, score logs and run manifests.
//!
//! Layout of a run directory:
//!
//! ```text
//! results.csv | results.json     per-cycle mean/std and per-trial accuracies
//! selections.csv                 every acquired sample, in selection order
//! scores/trial{t}_cycle{k}.csv   full pool scores at each acquisition
//! models/trial{t}.bin            final model checkpoint of each trial
//! manifest.json                  config hash, artifacts, timings, trial status
//! ```
//!
//! Comparisons and budget sweeps write a combined table at the top level and one
//! such run directory per strategy or budget.
//!
//! Floats are written in shortest round-trip form, so identical runs produce
//! identical bytes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::experiment::{Comparison, ExperimentResult, TrialStatus};
use crate::learner::save_checkpoint;

pub const RESULTS_HEADER: [&str; 5] = ["strategy", "cycle", "labeled", "mean_acc", "std_acc"];
pub const SCORES_HEADER: [&str; 5] = ["position", "index", "dup_group", "score", "selected"];
pub const SELECTIONS_HEADER: [&str; 7] = ["trial", "cycle", "rank", "position", "index", "dup_group", "score"];
pub const PLOT_HEADER: [&str; 5] = ["strategy", "cycle", "labeled", "mean", "std"];
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::validation("format", format!("expected csv or json, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialManifest {
    pub trial: usize,
    pub seed: u64,
    /// `completed` or `failed`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub completed_cycles: usize,
    pub accuracies: Vec<f64>,
    pub cycle_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    pub name: String,
    pub strategies: Vec<String>,
    pub train_size: usize,
    pub test_size: usize,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub trials: Vec<TrialManifest>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingResults(format!("no manifest at {}", path.display())),
            _ => Error::io(&path, e),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path,
            location: format!("line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        })
    }

    /// Every listed artifact exists under `dir`.
    pub fn artifacts_exist(&self, dir: &Path) -> bool {
        self.artifacts.iter().all(|a| dir.join(a).is_file())
    }
}

fn trial_manifests(result: &ExperimentResult) -> Vec<TrialManifest> {
    result
        .trials
        .iter()
        .map(|t| {
            let (status, error) = match &t.status {
                TrialStatus::Completed => ("completed".to_string(), None),
                TrialStatus::Failed { cycle, message } => ("failed".to_string(), Some(format!("cycle {cycle}: {message}"))),
            };
            TrialManifest {
                trial: t.trial,
                seed: t.seed,
                status,
                error,
                completed_cycles: t.accuracies.len(),
                accuracies: t.accuracies.clone(),
                cycle_seconds: t.cycle_seconds.clone(),
            }
        })
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid("csv", format!("{}: {other:?}", path.display())),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn num(x: f64) -> String {
    if x.is_nan() { String::new() } else { x.to_string() }
}

/// Writes `strategy,cycle,labeled,mean_acc,std_acc,trial_0..` rows for each result.
/// Trial columns of failed trials are left empty from the failing cycle on.
pub fn write_results_csv(out: impl Write, results: &[&ExperimentResult]) -> csv::Result<()> {
    let trials = results.iter().map(|r| r.trials.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = RESULTS_HEADER.iter().map(|s| s.to_string()).collect();
    header.extend((0..trials).map(|t| format!("trial_{t}")));
    w.write_record(&header)?;
    for r in results {
        for rec in &r.records {
            let mut row = vec![
                r.config.strategy.to_string(),
                rec.cycle.to_string(),
                rec.labeled_count.to_string(),
                num(rec.mean),
                num(rec.std),
            ];
            for t in 0..trials {
                let acc = r
                    .trials
                    .get(t)
                    .filter(|o| o.status.is_completed())
                    .and_then(|o| o.accuracies.get(rec.cycle));
                row.push(acc.map(|a| a.to_string()).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct JsonRecord<'a> {
    strategy: String,
    cycle: usize,
    labeled: usize,
    mean_acc: f64,
    std_acc: f64,
    trial_accuracies: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_vs_random_pp: Option<f64>,
}

fn json_records<'a>(result: &'a ExperimentResult, deltas: Option<&[Option<f64>]>) -> Vec<JsonRecord<'a>> {
    result
        .records
        .iter()
        .map(|rec| JsonRecord {
            strategy: result.config.strategy.to_string(),
            cycle: rec.cycle,
            labeled: rec.labeled_count,
            mean_acc: rec.mean,
            std_acc: rec.std,
            trial_accuracies: &rec.trial_accuracies,
            delta_vs_random_pp: deltas.and_then(|d| d[rec.cycle]),
        })
        .collect()
}

/// Per-sample pool scores of one acquisition.
pub fn write_scores(out: impl Write, ds: &Dataset, sel: &crate::experiment::CycleSelection) -> csv::Result<()> {
    let mut chosen = vec![false; sel.pool.len()];
    for &p in &sel.positions {
        chosen[p] = true;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCORES_HEADER)?;
    for (p, (&i, &s)) in sel.pool.iter().zip(sel.scores.scores()).enumerate() {
        w.write_record([
            p.to_string(),
            i.to_string(),
            ds.dup_group()[i].to_string(),
            s.to_string(),
            u8::from(chosen[p]).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_selections(out: impl Write, ds: &Dataset, result: &ExperimentResult) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SELECTIONS_HEADER)?;
    for t in &result.trials {
        for sel in &t.selections {
            for (rank, (&p, &i)) in sel.positions.iter().zip(&sel.indices).enumerate() {
                w.write_record([
                    t.trial.to_string(),
                    sel.cycle.to_string(),
                    rank.to_string(),
                    p.to_string(),
                    i.to_string(),
                    ds.dup_group()[i].to_string(),
                    sel.scores.scores()[p].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn scores_path(trial: usize, cycle: usize) -> PathBuf {
    Path::new("scores").join(format!("trial{trial}_cycle{cycle}.csv"))
}

fn write_csv_file(dir: &Path, rel: &Path, f: impl FnOnce(BufWriter<File>) -> csv::Result<()>) -> Result<String> {
    let path = dir.join(rel);
    f(create(&path)?).map_err(|e| csv_err(&path, e))?;
    Ok(rel.to_string_lossy().replace('\\', "/"))
}

fn write_json_file(dir: &Path, rel: &str, value: &impl Serialize) -> Result<String> {
    let path = dir.join(rel);
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::io(&path, e.into()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;
    Ok(rel.to_string())
}

/// Writes selections, score logs and checkpoints of one run under `dir`.
/// Returns the relative artifact paths.
fn write_run_logs(dir: &Path, train: &Dataset, result: &ExperimentResult) -> Result<Vec<String>> {
    let mut artifacts = vec![write_csv_file(dir, Path::new("selections.csv"), |w| write_selections(w, train, result))?];
    for t in &result.trials {
        for sel in &t.selections {
            artifacts.push(write_csv_file(dir, &scores_path(t.trial, sel.cycle), |w| write_scores(w, train, sel))?);
        }
        if let Some(m) = &t.final_model {
            let rel = format!("models/trial{}.bin", t.trial);
            let path = dir.join(&rel);
            let parent = path.parent().expect("models dir");
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            save_checkpoint(m, &path)?;
            artifacts.push(rel);
        }
    }
    Ok(artifacts)
}

fn write_manifest(dir: &Path, mut manifest: RunManifest) -> Result<RunManifest> {
    manifest.artifacts.push(MANIFEST_FILE.to_string());
    write_json_file(dir, MANIFEST_FILE, &manifest)?;
    Ok(manifest)
}

fn base_manifest(command: &str, result: &ExperimentResult) -> RunManifest {
    RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config_hash: result.config.hash(),
        name: result.config.name.clone(),
        strategies: vec![result.config.strategy.to_string()],
        train_size: result.train_size,
        test_size: result.test_size,
        artifacts: Vec::new(),
        trials: trial_manifests(result),
    }
}

/// Writes every artifact of a single run and its manifest.
pub fn write_run(dir: &Path, train: &Dataset, result: &ExperimentResult, format: OutputFormat) -> Result<RunManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = base_manifest("run", result);
    manifest.artifacts.push(match format {
        OutputFormat::Csv => write_csv_file(dir, Path::new("results.csv"), |w| write_results_csv(w, &[result]))?,
        OutputFormat::Json => write_json_file(dir, "results.json", &json_records(result, None))?,
    });
    manifest.artifacts.extend(write_run_logs(dir, train, result)?);
    write_manifest(dir, manifest)
}

/// `strategy,cycle,labeled,mean_acc,std_acc,delta_vs_random_pp` rows.
pub fn write_comparison_csv(out: impl Write, cmp: &Comparison) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = RESULTS_HEADER.to_vec();
    header.push("delta_vs_random_pp");
    w.write_record(&header)?;
    for (r, deltas) in cmp.results.iter().zip(&cmp.delta_vs_random_pp) {
        for rec in &r.records {
            w.write_record([
                r.config.strategy.to_string(),
                rec.cycle.to_string(),
                rec.labeled_count.to_string(),
                num(rec.mean),
                num(rec.std),
                deltas[rec.cycle].map(num).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Plot-ready `strategy,cycle,labeled,mean,std` rows.
pub fn write_plot_data(out: impl Write, results: &[&ExperimentResult]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PLOT_HEADER)?;
    for r in results {
        for rec in &r.records {
            w.write_record([
                r.config.strategy.to_string(),
                rec.cycle.to_string(),
                rec.labeled_count.to_string(),
                num(rec.mean),
                num(rec.std),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Sub-directory holding the full logs of the `i`-th run of a comparison.
pub fn run_dir_name(i: usize, r: &ExperimentResult) -> String {
    format!("runs/{i}_{}", r.config.strategy)
}

/// Writes the combined table, plot data and per-strategy logs of a comparison.
pub fn write_comparison(dir: &Path, train: &Dataset, cmp: &Comparison, format: OutputFormat) -> Result<RunManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let first = cmp.results.first().ok_or_else(|| Error::MissingResults("empty comparison".into()))?;
    let mut manifest = base_manifest("compare", first);
    manifest.strategies = cmp.results.iter().map(|r| r.config.strategy.to_string()).collect();
    manifest.trials = cmp.results.iter().flat_map(trial_manifests).collect();
    let refs: Vec<&ExperimentResult> = cmp.results.iter().collect();
    manifest.artifacts.push(match format {
        OutputFormat::Csv => write_csv_file(dir, Path::new("comparison.csv"), |w| write_comparison_csv(w, cmp))?,
        OutputFormat::Json => {
            let rows: Vec<JsonRecord<'_>> = cmp
                .results
                .iter()
                .zip(&cmp.delta_vs_random_pp)
                .flat_map(|(r, d)| json_records(r, Some(d)))
                .collect();
            write_json_file(dir, "comparison.json", &rows)?
        }
    });
    manifest.artifacts.push(write_csv_file(dir, Path::new("results.csv"), |w| write_results_csv(w, &refs))?);
    manifest.artifacts.push(write_csv_file(dir, Path::new("plot_data.csv"), |w| write_plot_data(w, &refs))?);
    for (i, r) in cmp.results.iter().enumerate() {
        let sub = run_dir_name(i, r);
        let run = write_run(&dir.join(&sub), train, r, format)?;
        manifest.artifacts.extend(run.artifacts.into_iter().map(|a| format!("{sub}/{a}")));
    }
    write_manifest(dir, manifest)
}

/// Writes a budget sweep: one run directory per budget plus a combined table.
pub fn write_sweep(dir: &Path, train: &Dataset, results: &[ExperimentResult], format: OutputFormat) -> Result<RunManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let first = results.first().ok_or_else(|| Error::MissingResults("empty sweep".into()))?;
    let mut manifest = base_manifest("sweep-budget", first);
    manifest.trials = results.iter().flat_map(trial_manifests).collect();
    let rel = write_csv_file(dir, Path::new("sweep.csv"), |out| {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["budget", "num_cycles", "strategy", "cycle", "labeled", "mean_acc", "std_acc"])?;
        for r in results {
            for rec in &r.records {
                w.write_record([
                    r.config.budget_per_cycle.to_string(),
                    r.config.num_cycles.to_string(),
                    r.config.strategy.to_string(),
                    rec.cycle.to_string(),
                    rec.labeled_count.to_string(),
                    num(rec.mean),
                    num(rec.std),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    manifest.artifacts.push(rel);
    for r in results {
        let sub = format!("budget_{}", r.config.budget_per_cycle);
        let run = write_run(&dir.join(&sub), train, r, format)?;
        manifest.artifacts.extend(run.artifacts.into_iter().map(|a| format!("{sub}/{a}")));
    }
    write_manifest(dir, manifest)
}

/// One row of a score log.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ScoreRow {
    pub position: usize,
    pub index: usize,
    pub dup_group: usize,
    pub score: f64,
    pub selected: u8,
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            Error::MissingResults(format!("no score log at {}", path.display()))
        }
        _ => csv_err(path, e),
    })?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// How many duplicate groups contributed exactly `k` selected samples, as
/// `(k, groups)` pairs in increasing `k`.
pub fn dup_group_histogram(rows: &[ScoreRow]) -> Vec<(usize, usize)> {
    let mut per_group = std::collections::BTreeMap::<usize, usize>::new();
    for r in rows.iter().filter(|r| r.selected == 1) {
        *per_group.entry(r.dup_group).or_default() += 1;
    }
    let mut hist = std::collections::BTreeMap::<usize, usize>::new();
    for &k in per_group.values() {
        *hist.entry(k).or_default() += 1;
    }
    hist.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::Strategy;
    use crate::config::{DatasetConfig, ExperimentConfig};
    use crate::experiment::{aggregate, CycleSelection, TrialOutcome};

    fn fake_result() -> ExperimentResult {
        let mut cfg = ExperimentConfig::new(DatasetConfig::gaussian_mixture(2, 2, 4, 1.0, 0), Strategy::Entropy);
        cfg.num_cycles = 2;
        cfg.trials = 2;
        cfg.split.initial_labeled = 2;
        cfg.budget_per_cycle = 1;
        let trial = |t: usize, accs: Vec<f64>, status| TrialOutcome {
            trial: t,
            seed: t as u64,
            status,
            initial_labeled: vec![0, 1],
            labeled_counts: vec![2, 3],
            accuracies: accs,
            cycle_seconds: vec![0.0; 2],
            selections: Vec::new(),
            final_model: None,
        };
        let trials = vec![
            trial(0, vec![0.5, 0.75], TrialStatus::Completed),
            trial(1, vec![0.25], TrialStatus::Failed { cycle: 1, message: "diverged".into() }),
        ];
        ExperimentResult {
            records: aggregate(&cfg, &trials),
            config: cfg,
            trials,
            train_size: 6,
            test_size: 2,
        }
    }

    #[test]
    fn results_csv_golden() {
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &[&fake_result()]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "strategy,cycle,labeled,mean_acc,std_acc,trial_0,trial_1\n\
             entropy,0,2,0.5,0,0.5,\n\
             entropy,1,3,0.75,0,0.75,\n"
        );
    }

    #[test]
    fn comparison_and_plot_golden() {
        let r = fake_result();
        let cmp = Comparison {
            results: vec![r.clone()],
            delta_vs_random_pp: vec![vec![Some(1.5), None]],
        };
        let mut buf = Vec::new();
        write_comparison_csv(&mut buf, &cmp).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "strategy,cycle,labeled,mean_acc,std_acc,delta_vs_random_pp\n\
             entropy,0,2,0.5,0,1.5\n\
             entropy,1,3,0.75,0,\n"
        );
        let mut buf = Vec::new();
        write_plot_data(&mut buf, &[&r]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "strategy,cycle,labeled,mean,std\nentropy,0,2,0.5,0\nentropy,1,3,0.75,0\n"
        );
    }

    #[test]
    fn scores_golden_and_histogram() {
        let ds = Dataset::new(
            "d",
            ndarray::array![[0.0], [0.0], [1.0]],
            vec![0, 0, 1],
            2,
            vec![0, 0, 1],
        )
        .unwrap();
        let sel = CycleSelection {
            cycle: 0,
            pool: vec![0, 1, 2],
            scores: crate::acquisition::AcquisitionScores::new(vec![0.5, 0.5, 0.25], Strategy::Entropy).unwrap(),
            positions: vec![0, 1],
            indices: vec![0, 1],
        };
        let mut buf = Vec::new();
        write_scores(&mut buf, &ds, &sel).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "position,index,dup_group,score,selected\n0,0,0,0.5,1\n1,1,0,0.5,1\n2,2,1,0.25,0\n");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        fs::write(&path, text).unwrap();
        let rows = read_scores(&path).unwrap();
        assert_eq!(dup_group_histogram(&rows), vec![(2, 1)]);
        assert!(matches!(read_scores(&dir.path().join("nope.csv")), Err(Error::MissingResults(_))));
    }

    #[test]
    fn manifest_lists_existing_files_and_failed_trials() {
        let dir = tempfile::tempdir().unwrap();
        let ds = crate::data::generate_gaussian_mixture(2, 2, 4, 1.0, 0).unwrap();
        let m = write_run(dir.path(), &ds, &fake_result(), OutputFormat::Json).unwrap();
        assert!(m.artifacts_exist(dir.path()));
        assert_eq!(RunManifest::read(dir.path()).unwrap(), m);
        assert_eq!(m.trials[1].status, "failed");
        assert_eq!(m.trials[1].accuracies, vec![0.25]);
    }
}
