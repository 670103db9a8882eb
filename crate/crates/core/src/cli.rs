//! Command-line front end: `run`, `compare`, `sweep-budget`, `explain`, `inspect`.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for runtime errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{parse_config, ExperimentConfig};
use crate::error::{Error, Result};
use crate::experiment::{self, ExperimentResult, RunOptions};
use crate::learner::load_checkpoint;
use crate::report::{self, OutputFormat, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "allab", version, about = "Pool-based active learning experiments on tabular data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Overrides {
    /// Override the base seed of every config. Falls back to ALLAB_SEED.
    #[arg(long, env = "ALLAB_SEED")]
    pub seed: Option<u64>,
    /// Override the number of trials.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Maximum number of trials run in parallel.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Format of the main results table.
    #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
    pub format: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run several configs that differ only in strategy and compare them.
    Compare {
        /// Config files; repeat the flag or list them after it.
        #[arg(long, num_args = 1.., required = true)]
        config: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run one experiment per acquisition budget with a matched final label count.
    SweepBudget {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated budgets per cycle.
        #[arg(long, value_delimiter = ',', required = true)]
        budgets: Vec<usize>,
        /// Final labeled-set size; defaults to the config's own final size.
        #[arg(long)]
        total: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Show the scores and selections of one acquisition of a finished run.
    Explain {
        #[arg(long)]
        config: PathBuf,
        /// Run directory written by `run` (or one `runs/*` directory of `compare`).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cycle: usize,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        #[arg(long, env = "ALLAB_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Summarise a model checkpoint.
    Inspect {
        checkpoint: PathBuf,
        #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
        format: String,
    },
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_config_error() { EXIT_CONFIG } else { EXIT_RUNTIME }
}

fn base_dir(config: &Path) -> Option<PathBuf> {
    config.parent().map(Path::to_path_buf)
}

fn load(config: &Path, seed: Option<u64>, trials: Option<usize>) -> Result<ExperimentConfig> {
    let mut cfg = parse_config(config).map_err(|e| match e {
        Error::Io { path, source } => Error::validation("config", format!("cannot read {}: {source}", path.display())),
        other => other,
    })?;
    if let Some(s) = seed {
        cfg.base_seed = s;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn options(config: &Path, o: &Overrides) -> Result<RunOptions> {
    if o.jobs == Some(0) {
        return Err(Error::validation("jobs", "must be >= 1"));
    }
    Ok(RunOptions {
        jobs: o.jobs,
        base_dir: base_dir(config),
    })
}

fn summarise(out: &mut dyn Write, results: &[&ExperimentResult]) -> std::io::Result<()> {
    for r in results {
        if let Some(rec) = r.final_record() {
            writeln!(
                out,
                "{:<14} labeled {:>6}  acc {:.4} ± {:.4}  ({} of {} trials)",
                r.config.strategy.to_string(),
                rec.labeled_count,
                rec.mean,
                rec.std,
                rec.trial_accuracies.len(),
                r.trials.len()
            )?;
        }
        for t in r.trials.iter().filter(|t| !t.status.is_completed()) {
            writeln!(out, "warning: {} trial {} failed: {:?}", r.config.strategy, t.trial, t.status)?;
        }
    }
    Ok(())
}

/// `run`: executes one config and writes results, logs and manifest to `out`.
pub fn cmd_run(config: &Path, out: &Path, o: &Overrides) -> Result<RunManifest> {
    let cfg = load(config, o.seed, o.trials)?;
    let format: OutputFormat = o.format.parse()?;
    let opts = options(config, o)?;
    let data = experiment::prepare_data(&cfg, opts.base_dir.as_deref())?;
    let result = experiment::run_experiment_on(&cfg, &data, &opts)?;
    let manifest = report::write_run(out, &data.train, &result, format)?;
    summarise(&mut std::io::stdout(), &[&result]).map_err(|e| Error::io("<stdout>", e))?;
    Ok(manifest)
}

/// `compare`: runs every config on shared data and writes the comparison table.
pub fn cmd_compare(configs: &[PathBuf], out: &Path, o: &Overrides) -> Result<RunManifest> {
    let cfgs = configs
        .iter()
        .map(|c| load(c, o.seed, o.trials))
        .collect::<Result<Vec<_>>>()?;
    let format: OutputFormat = o.format.parse()?;
    let opts = options(&configs[0], o)?;
    experiment::check_comparable(&cfgs)?;
    let data = experiment::prepare_data(&cfgs[0], opts.base_dir.as_deref())?;
    let cmp = experiment::compare_strategies_on(&cfgs, &data, &opts)?;
    let manifest = report::write_comparison(out, &data.train, &cmp, format)?;
    let refs: Vec<&ExperimentResult> = cmp.results.iter().collect();
    summarise(&mut std::io::stdout(), &refs).map_err(|e| Error::io("<stdout>", e))?;
    Ok(manifest)
}

/// `sweep-budget`: one run per budget, all ending at the same labeled-set size.
pub fn cmd_sweep(config: &Path, out: &Path, budgets: &[usize], total: Option<usize>, o: &Overrides) -> Result<RunManifest> {
    let cfg = load(config, o.seed, o.trials)?;
    let format: OutputFormat = o.format.parse()?;
    let opts = options(config, o)?;
    let cfgs = experiment::sweep_configs(&cfg, budgets, total)?;
    let data = experiment::prepare_data(&cfgs[0], opts.base_dir.as_deref())?;
    let results = experiment::run_sweep_on(&cfgs, &data, &opts)?;
    let manifest = report::write_sweep(out, &data.train, &results, format)?;
    let refs: Vec<&ExperimentResult> = results.iter().collect();
    summarise(&mut std::io::stdout(), &refs).map_err(|e| Error::io("<stdout>", e))?;
    Ok(manifest)
}

/// Summary of one acquisition, as printed by `explain`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Explanation {
    pub trial: usize,
    pub cycle: usize,
    pub pool_size: usize,
    pub selected: usize,
    pub distinct_groups: usize,
    /// `(k, groups)`: number of duplicate groups with exactly `k` selected samples.
    pub dup_group_histogram: Vec<(usize, usize)>,
    /// Copy of the score log written next to the run.
    pub scores_file: PathBuf,
}

/// `explain`: reads the score log of `(trial, cycle)` and reports how the
/// selected samples spread over duplicate groups.
pub fn cmd_explain(config: &Path, out: &Path, cycle: usize, trial: usize, seed: Option<u64>, trials: Option<usize>) -> Result<Explanation> {
    let cfg = load(config, seed, trials)?;
    let manifest = RunManifest::read(out)?;
    if manifest.config_hash != cfg.hash() {
        return Err(Error::MissingResults(format!(
            "{} holds results of a different config (hash {})",
            out.display(),
            manifest.config_hash
        )));
    }
    if cycle + 1 >= cfg.num_cycles {
        return Err(Error::MissingResults(format!(
            "cycle {cycle} has no acquisition; valid cycles are 0 to {}",
            cfg.num_cycles.saturating_sub(2)
        )));
    }
    if trial >= cfg.trials {
        return Err(Error::MissingResults(format!("trial {trial} out of range (trials = {})", cfg.trials)));
    }
    let rows = report::read_scores(&out.join(report::scores_path(trial, cycle)))?;
    let scores_file = out.join(format!("explain_trial{trial}_cycle{cycle}.csv"));
    let mut w = csv::Writer::from_path(&scores_file).map_err(|e| Error::invalid("out", e.to_string()))?;
    w.write_record(["position", "score", "selected"]).map_err(|e| Error::invalid("out", e.to_string()))?;
    for r in &rows {
        w.write_record([r.position.to_string(), r.score.to_string(), r.selected.to_string()])
            .map_err(|e| Error::invalid("out", e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&scores_file, e))?;
    let hist = report::dup_group_histogram(&rows);
    Ok(Explanation {
        trial,
        cycle,
        pool_size: rows.len(),
        selected: rows.iter().filter(|r| r.selected == 1).count(),
        distinct_groups: hist.iter().map(|&(_, g)| g).sum(),
        dup_group_histogram: hist,
        scores_file,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub layers: Vec<(usize, usize)>,
    pub loss_head: bool,
    pub num_params: usize,
    pub dropout_p: f64,
    pub epoch: usize,
    pub final_loss: Option<f64>,
}

/// `inspect`: architecture and training state of a checkpoint.
pub fn cmd_inspect(checkpoint: &Path) -> Result<ModelSummary> {
    let m = load_checkpoint(checkpoint)?;
    let net = m.network();
    Ok(ModelSummary {
        layers: net.layers.iter().map(|l| (l.fan_in(), l.fan_out())).collect(),
        loss_head: m.has_loss_head(),
        num_params: net.num_params(),
        dropout_p: m.dropout_p(),
        epoch: m.epoch(),
        final_loss: m.loss_history().last().copied(),
    })
}

fn print_json(v: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v).expect("serialisable"));
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out, overrides } => {
            let m = cmd_run(&config, &out, &overrides)?;
            println!("wrote {} artifacts to {}", m.artifacts.len(), out.display());
        }
        Command::Compare { config, out, overrides } => {
            let m = cmd_compare(&config, &out, &overrides)?;
            println!("wrote {} artifacts to {}", m.artifacts.len(), out.display());
        }
        Command::SweepBudget {
            config,
            out,
            budgets,
            total,
            overrides,
        } => {
            let m = cmd_sweep(&config, &out, &budgets, total, &overrides)?;
            println!("wrote {} artifacts to {}", m.artifacts.len(), out.display());
        }
        Command::Explain {
            config,
            out,
            cycle,
            trial,
            seed,
            trials,
        } => {
            let e = cmd_explain(&config, &out, cycle, trial, seed, trials)?;
            println!(
                "trial {} cycle {}: {} of {} pool samples selected from {} duplicate groups",
                e.trial, e.cycle, e.selected, e.pool_size, e.distinct_groups
            );
            println!("selected_per_group,groups");
            for (k, g) in &e.dup_group_histogram {
                println!("{k},{g}");
            }
            println!("scores: {}", e.scores_file.display());
        }
        Command::Inspect { checkpoint, format } => {
            let s = cmd_inspect(&checkpoint)?;
            if format == "json" {
                return print_json(&s);
            }
            println!("layers      {:?}", s.layers);
            println!("loss_head   {}", s.loss_head);
            println!("params      {}", s.num_params);
            println!("dropout_p   {}", s.dropout_p);
            println!("epochs      {}", s.epoch);
            if let Some(l) = s.final_loss {
                println!("final_loss  {l}");
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
