//! The active learning loop: train, score, select, label, repeat.
//!
//! Trials run in parallel on a rayon pool and never share mutable state. Within a
//! trial the cycles are strictly sequential. Statistics are reduced in trial order,
//! so results do not depend on the number of worker threads.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Axis};

use crate::acquisition::{
    self, candidate_positions, select_coreset, select_top_k, AcquisitionScores, SelectionRequest, Strategy,
};
use crate::config::{BudgetSchedule, ExperimentConfig, Retrain};
use crate::data::{self, Dataset, PoolPartition, SplitSpec};
use crate::error::{Error, Result};
use crate::learner::{self, init_model, LearnerModel};
use crate::seed::{self, stream};
use crate::ssl;

/// Train and test sets shared by every trial of a run.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
}

/// Builds the dataset, carves the held-out test set and checks that the schedule fits.
pub fn prepare_data(cfg: &ExperimentConfig, base_dir: Option<&Path>) -> Result<PreparedData> {
    let ds = cfg.dataset.build(base_dir)?;
    ds.check_complete()?;
    let (train, test) = data::train_test_split(&ds, cfg.test_fraction, seed::derive(cfg.split.seed, &[stream::TEST_SPLIT]))?;
    check_feasible(cfg, train.len())?;
    Ok(PreparedData { train, test })
}

fn check_feasible(cfg: &ExperimentConfig, n_train: usize) -> Result<()> {
    let initial = cfg.split.initial_labeled;
    if initial > n_train {
        return Err(Error::InfeasibleBudget {
            budget: initial,
            reason: format!("initial labeled set exceeds the {n_train} training samples"),
        });
    }
    let last = cfg.final_labeled();
    if last > n_train {
        return Err(Error::InfeasibleBudget {
            budget: last,
            reason: format!("the schedule needs {last} labels but only {n_train} training samples exist"),
        });
    }
    Ok(())
}

/// Per-cycle statistics over the completed trials.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub cycle: usize,
    pub labeled_count: usize,
    pub trial_accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single trial.
    pub std: f64,
}

/// Labels moved from U to L at the end of a cycle.
#[derive(Debug, Clone)]
pub struct CycleSelection {
    /// Cycle whose model produced the scores.
    pub cycle: usize,
    /// Training-set indices of the pool at scoring time, in pool order.
    pub pool: Vec<usize>,
    /// Scores aligned with `pool`.
    pub scores: AcquisitionScores,
    /// Selected pool positions, in selection order.
    pub positions: Vec<usize>,
    /// Selected training-set indices, aligned with `positions`.
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialStatus {
    Completed,
    Failed { cycle: usize, message: String },
}

impl TrialStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, TrialStatus::Completed)
    }
}

/// Everything one trial produced. Failed trials keep the cycles they finished.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub status: TrialStatus,
    pub initial_labeled: Vec<usize>,
    pub labeled_counts: Vec<usize>,
    pub accuracies: Vec<f64>,
    pub cycle_seconds: Vec<f64>,
    pub selections: Vec<CycleSelection>,
    pub final_model: Option<LearnerModel>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub records: Vec<CycleRecord>,
    pub trials: Vec<TrialOutcome>,
    pub train_size: usize,
    pub test_size: usize,
}

impl ExperimentResult {
    pub fn final_record(&self) -> Option<&CycleRecord> {
        self.records.last()
    }

    pub fn completed_trials(&self) -> impl Iterator<Item = &TrialOutcome> {
        self.trials.iter().filter(|t| t.status.is_completed())
    }
}

/// Execution knobs that do not change results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Upper bound on parallel trials; `None` uses all cores.
    pub jobs: Option<usize>,
    /// Directory that relative dataset paths resolve against.
    pub base_dir: Option<PathBuf>,
}

/// State carried between cycles of one trial.
#[derive(Debug, Clone)]
pub struct TrialState {
    pub cycle: usize,
    pub trial_seed: u64,
    pub partition: PoolPartition,
    pub model: Option<LearnerModel>,
}

/// What one cycle produced.
#[derive(Debug, Clone)]
pub struct CycleOutput {
    pub labeled_count: usize,
    pub accuracy: f64,
    pub selection: Option<CycleSelection>,
}

/// Seed of trial `t`.
pub fn trial_seed(cfg: &ExperimentConfig, trial: usize) -> u64 {
    cfg.base_seed.wrapping_add(trial as u64)
}

/// The initial L/U split of a trial. It depends only on the dataset and the
/// split settings, never on the strategy.
pub fn initial_partition(cfg: &ExperimentConfig, train: &Dataset, trial: usize) -> Result<PoolPartition> {
    let spec = SplitSpec {
        seed: seed::derive(cfg.split.seed, &[stream::SPLIT, trial as u64]),
        ..cfg.split
    };
    data::initial_split(train, &spec)
}

pub fn start_trial(cfg: &ExperimentConfig, train: &Dataset, trial: usize) -> Result<TrialState> {
    Ok(TrialState {
        cycle: 0,
        trial_seed: trial_seed(cfg, trial),
        partition: initial_partition(cfg, train, trial)?,
        model: None,
    })
}

fn fresh_model(cfg: &ExperimentConfig, state: &TrialState, train: &Dataset, cycle: usize) -> Result<LearnerModel> {
    let mut lc = cfg.effective_learner();
    lc.seed = seed::derive(state.trial_seed, &[stream::MODEL, cycle as u64]);
    init_model(&lc, train.dim(), train.num_classes())
}

/// One cycle: (re)train on L, evaluate on the test set and, unless this is the
/// last cycle, select the next batch and move it from U to L.
pub fn run_cycle(cfg: &ExperimentConfig, data: &PreparedData, state: &mut TrialState) -> Result<CycleOutput> {
    let k = state.cycle;
    let expected = cfg.labeled_at(k);
    if state.partition.labeled().len() != expected {
        return Err(Error::invalid(
            "state",
            format!("cycle {k} expects {expected} labels, found {}", state.partition.labeled().len()),
        ));
    }
    let mut model = match (cfg.retrain, state.model.take()) {
        (Retrain::Finetune, Some(m)) => m,
        _ => fresh_model(cfg, state, &data.train, k)?,
    };
    let lc = cfg.effective_learner();
    match &cfg.ssl {
        Some(s) if !state.partition.unlabeled().is_empty() => ssl::train_ssl(&mut model, &data.train, &state.partition, &lc, s)?,
        _ => learner::train(&mut model, &data.train, state.partition.labeled(), &lc)?,
    }
    let test_idx: Vec<usize> = (0..data.test.len()).collect();
    let accuracy = model.accuracy(&data.test, &test_idx)?;
    let labeled_count = state.partition.labeled().len();

    let selection = if k + 1 < cfg.num_cycles {
        let budget = cfg.labeled_at(k + 1) - cfg.labeled_at(k);
        let available = state.partition.unlabeled().len();
        if budget > available {
            return Err(Error::PoolExhausted { needed: budget, available });
        }
        let acq_seed = seed::derive(state.trial_seed, &[stream::ACQUIRE, k as u64]);
        let pool = state.partition.unlabeled().to_vec();
        let (scores, positions) = acquire(cfg, &model, &data.train, &state.partition, budget, acq_seed)?;
        let indices = state.partition.label_positions(&positions)?;
        state.partition.check()?;
        Some(CycleSelection {
            cycle: k,
            pool,
            scores,
            positions,
            indices,
        })
    } else {
        None
    };
    state.model = Some(model);
    state.cycle += 1;
    Ok(CycleOutput {
        labeled_count,
        accuracy,
        selection,
    })
}

/// Scores the current pool with the configured strategy and picks `budget`
/// positions. Returns the scores over U and the selected positions.
pub fn acquire(
    cfg: &ExperimentConfig,
    model: &LearnerModel,
    train: &Dataset,
    partition: &PoolPartition,
    budget: usize,
    seed_value: u64,
) -> Result<(AcquisitionScores, Vec<usize>)> {
    let pool = partition.unlabeled();
    let req = SelectionRequest {
        budget,
        prefilter_size: cfg.prefilter_size,
        seed: seed_value,
    };
    let mc_seed = seed::derive(seed_value, &[stream::MC]);
    let scores = match cfg.strategy {
        Strategy::Random => acquisition::score_random(pool.len(), seed_value)?,
        Strategy::Entropy => acquisition::score_entropy(model.predict_proba(train, pool)?.view())?,
        Strategy::VarRatio if cfg.var_ratio_mc => {
            let mc = model.predict_proba_mc(train, pool, cfg.mc_samples, mc_seed)?;
            let mean = mc.mean_axis(Axis(0)).expect("at least one pass");
            acquisition::score_var_ratio(mean.view())?
        }
        Strategy::VarRatio => acquisition::score_var_ratio(model.predict_proba(train, pool)?.view())?,
        Strategy::Bald => acquisition::score_bald(model.predict_proba_mc(train, pool, cfg.mc_samples, mc_seed)?.view())?,
        Strategy::Llal => acquisition::score_llal(&model.predict_loss(train, pool)?)?,
        Strategy::Inconsistency => {
            let s = cfg.ssl.clone().unwrap_or_default();
            ssl::acquire_inconsistency(model, train, pool, &s, seed_value)?
        }
        Strategy::Coreset => {
            let labeled = model.embed(train, partition.labeled())?;
            let unlabeled = model.embed(train, pool)?;
            let candidates = candidate_positions(pool.len(), &req)?;
            let sub = unlabeled.select(Axis(0), &candidates);
            let picks = select_coreset(labeled.view(), sub.view(), budget)?;
            let scores = AcquisitionScores::new(nearest_distances(&labeled, &unlabeled), Strategy::Coreset)?;
            return Ok((scores, picks.into_iter().map(|p| candidates[p]).collect()));
        }
    };
    let picks = select_top_k(&scores, &req)?;
    Ok((scores, picks))
}

/// Euclidean distance from each unlabeled embedding to its nearest labeled one.
fn nearest_distances(labeled: &Array2<f64>, unlabeled: &Array2<f64>) -> Vec<f64> {
    unlabeled
        .rows()
        .into_iter()
        .map(|u| {
            labeled
                .rows()
                .into_iter()
                .map(|l| u.iter().zip(l).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .map(|d| if d.is_finite() { d } else { 0.0 })
        .collect()
}

/// Runs every cycle of one trial. Errors are captured in the outcome's status.
pub fn run_trial(cfg: &ExperimentConfig, data: &PreparedData, trial: usize) -> TrialOutcome {
    let mut out = TrialOutcome {
        trial,
        seed: trial_seed(cfg, trial),
        status: TrialStatus::Completed,
        initial_labeled: Vec::new(),
        labeled_counts: Vec::new(),
        accuracies: Vec::new(),
        cycle_seconds: Vec::new(),
        selections: Vec::new(),
        final_model: None,
    };
    let mut state = match start_trial(cfg, &data.train, trial) {
        Ok(s) => s,
        Err(e) => {
            out.status = TrialStatus::Failed { cycle: 0, message: e.to_string() };
            return out;
        }
    };
    out.initial_labeled = state.partition.labeled().to_vec();
    for k in 0..cfg.num_cycles {
        let t0 = Instant::now();
        match run_cycle(cfg, data, &mut state) {
            Ok(c) => {
                out.labeled_counts.push(c.labeled_count);
                out.accuracies.push(c.accuracy);
                out.cycle_seconds.push(t0.elapsed().as_secs_f64());
                out.selections.extend(c.selection);
            }
            Err(e) => {
                out.status = TrialStatus::Failed { cycle: k, message: e.to_string() };
                break;
            }
        }
    }
    out.final_model = state.model;
    out
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Reduces completed trials into per-cycle records, in trial order.
pub fn aggregate(cfg: &ExperimentConfig, trials: &[TrialOutcome]) -> Vec<CycleRecord> {
    (0..cfg.num_cycles)
        .map(|k| {
            let accs: Vec<f64> = trials
                .iter()
                .filter(|t| t.status.is_completed())
                .map(|t| t.accuracies[k])
                .collect();
            let (mean, std) = mean_std(&accs);
            CycleRecord {
                cycle: k,
                labeled_count: cfg.labeled_at(k),
                trial_accuracies: accs,
                mean,
                std,
            }
        })
        .collect()
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j < 1 {
            return Err(Error::validation("jobs", "must be >= 1"));
        }
        b = b.num_threads(j);
    }
    b.build().map_err(|e| Error::invalid("jobs", e.to_string()))
}

/// Runs all trials on prepared data.
pub fn run_experiment_on(cfg: &ExperimentConfig, data: &PreparedData, opts: &RunOptions) -> Result<ExperimentResult> {
    cfg.validate()?;
    check_feasible(cfg, data.train.len())?;
    let pool = thread_pool(opts.jobs)?;
    let trials: Vec<TrialOutcome> = pool.install(|| {
        use rayon::prelude::*;
        (0..cfg.trials).into_par_iter().map(|t| run_trial(cfg, data, t)).collect()
    });
    if let Some(TrialStatus::Failed { cycle, message }) =
        trials.iter().all(|t| !t.status.is_completed()).then(|| trials[0].status.clone())
    {
        return Err(Error::invalid("trials", format!("every trial failed; trial 0 at cycle {cycle}: {message}")));
    }
    Ok(ExperimentResult {
        records: aggregate(cfg, &trials),
        config: cfg.clone(),
        trials,
        train_size: data.train.len(),
        test_size: data.test.len(),
    })
}

/// Builds the data and runs every trial.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentResult> {
    cfg.validate()?;
    let data = prepare_data(cfg, opts.base_dir.as_deref())?;
    run_experiment_on(cfg, &data, opts)
}

/// Side-by-side results of several strategies on the same setup.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub results: Vec<ExperimentResult>,
    /// Per strategy and cycle, `100 * (mean - random mean)`; `None` without a random run.
    pub delta_vs_random_pp: Vec<Vec<Option<f64>>>,
}

fn comparable(cfg: &ExperimentConfig) -> serde_json::Value {
    let mut c = cfg.clone();
    c.strategy = Strategy::Random;
    c.name.clear();
    c.base_seed = 0;
    serde_json::to_value(c).expect("config serialises")
}

/// Checks that configs differ only in strategy, name or base seed.
pub fn check_comparable(cfgs: &[ExperimentConfig]) -> Result<()> {
    let Some(first) = cfgs.first() else {
        return Err(Error::validation("configs", "need at least one config"));
    };
    let reference = comparable(first);
    for c in &cfgs[1..] {
        let v = comparable(c);
        if v != reference {
            let field = reference
                .as_object()
                .and_then(|r| r.iter().find(|(k, val)| v.get(k.as_str()) != Some(*val)).map(|(k, _)| k.clone()))
                .unwrap_or_default();
            return Err(Error::ConfigMismatch(format!(
                "`{}` and `{}` differ in `{field}`",
                first.name, c.name
            )));
        }
    }
    Ok(())
}

/// Runs each config on one shared data preparation and reports deltas against random.
pub fn compare_strategies(cfgs: &[ExperimentConfig], opts: &RunOptions) -> Result<Comparison> {
    check_comparable(cfgs)?;
    let data = prepare_data(&cfgs[0], opts.base_dir.as_deref())?;
    compare_strategies_on(cfgs, &data, opts)
}

pub fn compare_strategies_on(cfgs: &[ExperimentConfig], data: &PreparedData, opts: &RunOptions) -> Result<Comparison> {
    check_comparable(cfgs)?;
    for c in cfgs {
        c.validate()?;
    }
    let results = cfgs
        .iter()
        .map(|c| run_experiment_on(c, data, opts))
        .collect::<Result<Vec<_>>>()?;
    let baseline = results.iter().find(|r| r.config.strategy == Strategy::Random);
    let delta_vs_random_pp = results
        .iter()
        .map(|r| {
            r.records
                .iter()
                .enumerate()
                .map(|(k, rec)| baseline.map(|b| 100.0 * (rec.mean - b.records[k].mean)))
                .collect()
        })
        .collect();
    Ok(Comparison {
        results,
        delta_vs_random_pp,
    })
}

/// The config for budget `b` when every run must end at `final_labeled` labels:
/// start from `b` labels and acquire `b` per cycle.
pub fn budget_config(cfg: &ExperimentConfig, budget: usize, final_labeled: usize) -> Result<ExperimentConfig> {
    if budget < 1 {
        return Err(Error::validation("budgets", "every budget must be >= 1"));
    }
    if !final_labeled.is_multiple_of(budget) {
        return Err(Error::InfeasibleBudget {
            budget,
            reason: format!("{final_labeled} total labels is not a multiple of the budget"),
        });
    }
    let mut c = cfg.clone();
    c.schedule = BudgetSchedule::Fixed;
    c.split.initial_labeled = budget;
    c.budget_per_cycle = budget;
    c.num_cycles = final_labeled / budget;
    if let Some(p) = c.prefilter_size {
        c.prefilter_size = Some(p.max(budget));
    }
    Ok(c)
}

/// Per-budget configs of a sweep with a matched final label count. `final_labeled`
/// defaults to the final count of `cfg` itself.
pub fn sweep_configs(cfg: &ExperimentConfig, budgets: &[usize], final_labeled: Option<usize>) -> Result<Vec<ExperimentConfig>> {
    if budgets.is_empty() {
        return Err(Error::validation("budgets", "need at least one budget"));
    }
    cfg.validate()?;
    let total = final_labeled.unwrap_or_else(|| cfg.final_labeled());
    budgets.iter().map(|&b| budget_config(cfg, b, total)).collect()
}

/// Runs one experiment per budget, every run ending at the same labeled-set size.
pub fn budget_schedule_sweep(
    cfg: &ExperimentConfig,
    budgets: &[usize],
    final_labeled: Option<usize>,
    opts: &RunOptions,
) -> Result<Vec<ExperimentResult>> {
    let cfgs = sweep_configs(cfg, budgets, final_labeled)?;
    let data = prepare_data(&cfgs[0], opts.base_dir.as_deref())?;
    run_sweep_on(&cfgs, &data, opts)
}

/// Runs configs from [`sweep_configs`] on prepared data.
pub fn run_sweep_on(cfgs: &[ExperimentConfig], data: &PreparedData, opts: &RunOptions) -> Result<Vec<ExperimentResult>> {
    let n = data.train.len();
    for c in cfgs {
        c.validate()?;
        if c.budget_per_cycle > n || c.final_labeled() > n {
            return Err(Error::InfeasibleBudget {
                budget: c.budget_per_cycle,
                reason: format!("{} total labels do not fit in {n} training samples", c.final_labeled()),
            });
        }
    }
    cfgs.iter().map(|c| run_experiment_on(c, data, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DatasetConfig;
    use crate::learner::LearnerConfig;

    fn small(strategy: Strategy) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(DatasetConfig::gaussian_mixture(3, 4, 60, 3.0, 5), strategy);
        c.split.initial_labeled = 12;
        c.budget_per_cycle = 6;
        c.num_cycles = 3;
        c.trials = 2;
        c.mc_samples = 4;
        c.learner = LearnerConfig {
            hidden_sizes: vec![8],
            epochs: 3,
            batch_size: 16,
            lr_step_epoch: 2,
            llal_detach_epoch: 2,
            ..LearnerConfig::default()
        };
        c
    }

    #[test]
    fn every_strategy_runs_and_keeps_the_books() {
        for s in Strategy::ALL {
            let cfg = small(s);
            let r = run_experiment(&cfg, &RunOptions::default()).unwrap();
            assert_eq!(r.records.len(), 3);
            for t in &r.trials {
                assert!(t.status.is_completed(), "{s}: {:?}", t.status);
                assert_eq!(t.labeled_counts, vec![12, 18, 24]);
                assert_eq!(t.selections.len(), 2);
                for sel in &t.selections {
                    assert_eq!(sel.scores.len(), sel.pool.len());
                    assert_eq!(sel.indices.len(), 6);
                }
            }
        }
    }

    #[test]
    fn single_trial_has_zero_std() {
        let mut cfg = small(Strategy::Entropy);
        cfg.trials = 1;
        let r = run_experiment(&cfg, &RunOptions::default()).unwrap();
        assert!(r.records.iter().all(|rec| rec.std == 0.0));
    }

    #[test]
    fn strategies_share_the_initial_split() {
        let data = prepare_data(&small(Strategy::Random), None).unwrap();
        let a = run_experiment_on(&small(Strategy::Random), &data, &RunOptions::default()).unwrap();
        let b = run_experiment_on(&small(Strategy::Entropy), &data, &RunOptions::default()).unwrap();
        for (x, y) in a.trials.iter().zip(&b.trials) {
            assert_eq!(x.initial_labeled, y.initial_labeled);
            assert_eq!(x.accuracies[0], y.accuracies[0]);
        }
    }

    #[test]
    fn results_do_not_depend_on_jobs() {
        let cfg = small(Strategy::Entropy);
        let a = run_experiment(&cfg, &RunOptions { jobs: Some(1), ..Default::default() }).unwrap();
        let b = run_experiment(&cfg, &RunOptions { jobs: Some(2), ..Default::default() }).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn budget_sweep_matches_totals() {
        let mut cfg = small(Strategy::Random);
        cfg.budget_per_cycle = 1000;
        let counts: Vec<usize> = [500, 1000, 2000]
            .iter()
            .map(|&b| budget_config(&cfg, b, 20000).unwrap().num_cycles)
            .collect();
        assert_eq!(counts, vec![40, 20, 10]);
        assert!(matches!(budget_config(&cfg, 3000, 20000), Err(Error::InfeasibleBudget { .. })));
        let too_big = budget_schedule_sweep(&small(Strategy::Random), &[500], Some(1000), &RunOptions::default());
        assert!(matches!(too_big, Err(Error::InfeasibleBudget { .. })));
    }

    #[test]
    fn mismatched_configs_are_rejected() {
        let a = small(Strategy::Random);
        let mut b = small(Strategy::Entropy);
        b.base_seed = 9;
        assert!(check_comparable(&[a.clone(), b.clone()]).is_ok());
        b.dataset = DatasetConfig::gaussian_mixture(3, 4, 60, 2.0, 5);
        assert!(matches!(check_comparable(&[a, b]), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn exhausted_pool_is_reported() {
        let mut cfg = small(Strategy::Random);
        cfg.num_cycles = 50;
        assert!(matches!(prepare_data(&cfg, None), Err(Error::InfeasibleBudget { .. })));
    }
}
