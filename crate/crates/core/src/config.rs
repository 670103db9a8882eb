//! Experiment configuration: JSON schema, defaults, validation and hashing.
//!
//! Unknown keys are rejected everywhere. Omitted learner settings fall back to the
//! benchmark defaults (200 epochs, lr 0.1, momentum 0.9, weight decay 5e-4, step
//! decay at epoch 160).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acquisition::Strategy;
use crate::data::{self, Dataset, DatasetFormat, SplitSpec};
use crate::error::{Error, Result};
use crate::learner::LearnerConfig;
use crate::ssl::SslConfig;

/// Where the samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    GaussianMixture {
        num_classes: usize,
        dim: usize,
        n_per_class: usize,
        class_sep: f64,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
    },
    Idx {
        images: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    /// Repeat every sample this many times (duplication stress test).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_factor: Option<usize>,
    #[serde(default)]
    pub duplicate_seed: u64,
}

impl DatasetConfig {
    pub fn gaussian_mixture(num_classes: usize, dim: usize, n_per_class: usize, class_sep: f64, seed: u64) -> Self {
        Self {
            source: DatasetSource::GaussianMixture {
                num_classes,
                dim,
                n_per_class,
                class_sep,
                seed,
            },
            duplicate_factor: None,
            duplicate_seed: 0,
        }
    }

    /// Generates or loads the dataset, then applies duplication if requested.
    /// Relative file paths resolve against `base_dir`.
    pub fn build(&self, base_dir: Option<&Path>) -> Result<Dataset> {
        let resolve = |p: &PathBuf| match base_dir {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.clone(),
        };
        let ds = match &self.source {
            DatasetSource::GaussianMixture {
                num_classes,
                dim,
                n_per_class,
                class_sep,
                seed,
            } => data::generate_gaussian_mixture(*num_classes, *dim, *n_per_class, *class_sep, *seed)?,
            DatasetSource::Csv { path } => data::load_dataset(resolve(path), DatasetFormat::Csv)?,
            DatasetSource::Idx { images } => data::load_dataset(resolve(images), DatasetFormat::Idx)?,
        };
        match self.duplicate_factor {
            Some(f) => data::duplicate_dataset(&ds, f, self.duplicate_seed),
            None => Ok(ds),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retrain {
    /// Re-initialise the model every cycle.
    #[default]
    Scratch,
    /// Continue from the previous cycle's weights (momentum buffers reset).
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetSchedule {
    /// `initial + cycle * budget_per_cycle` labels at each cycle.
    #[default]
    Fixed,
    /// `initial * 2^cycle` labels at each cycle.
    Doubling,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_split() -> SplitSpec {
    SplitSpec {
        initial_labeled: 1000,
        seed: 0,
        stratified: false,
    }
}
fn default_num_cycles() -> usize {
    20
}
fn default_budget() -> usize {
    1000
}
fn default_trials() -> usize {
    5
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_mc_samples() -> usize {
    25
}

/// Full description of an active learning experiment.
///
/// `num_cycles` counts training rounds: cycle 0 trains on the initial pool and
/// every later cycle first acquires new labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub dataset: DatasetConfig,
    #[serde(default = "default_split")]
    pub split: SplitSpec,
    pub strategy: Strategy,
    #[serde(default = "default_num_cycles")]
    pub num_cycles: usize,
    #[serde(default = "default_budget")]
    pub budget_per_cycle: usize,
    #[serde(default)]
    pub schedule: BudgetSchedule,
    #[serde(default)]
    pub retrain: Retrain,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefilter_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssl: Option<SslConfig>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Monte-Carlo dropout passes for BALD (and MC variation ratio).
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    /// Compute the variation ratio from MC-averaged rather than deterministic predictions.
    #[serde(default)]
    pub var_ratio_mc: bool,
}

impl ExperimentConfig {
    /// A config with benchmark defaults for everything but the data and strategy.
    pub fn new(dataset: DatasetConfig, strategy: Strategy) -> Self {
        Self {
            name: default_name(),
            dataset,
            split: default_split(),
            strategy,
            num_cycles: default_num_cycles(),
            budget_per_cycle: default_budget(),
            schedule: BudgetSchedule::default(),
            retrain: Retrain::default(),
            trials: default_trials(),
            base_seed: 0,
            learner: LearnerConfig::default(),
            prefilter_size: None,
            ssl: None,
            test_fraction: default_test_fraction(),
            mc_samples: default_mc_samples(),
            var_ratio_mc: false,
        }
    }

    /// Labeled-set size after `cycle` acquisitions.
    pub fn labeled_at(&self, cycle: usize) -> usize {
        match self.schedule {
            BudgetSchedule::Fixed => self.split.initial_labeled + cycle * self.budget_per_cycle,
            BudgetSchedule::Doubling => self.split.initial_labeled << cycle,
        }
    }

    /// Labeled-set size at the last cycle.
    pub fn final_labeled(&self) -> usize {
        self.labeled_at(self.num_cycles.saturating_sub(1))
    }

    /// The learner settings actually used: the loss head is switched on for `llal`.
    pub fn effective_learner(&self) -> LearnerConfig {
        let mut l = self.learner.clone();
        if self.strategy == Strategy::Llal {
            l.loss_head = true;
        }
        l
    }

    /// Semantic checks that do not need the data. Errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.num_cycles < 1 {
            return Err(Error::validation("num_cycles", "must be >= 1"));
        }
        if self.budget_per_cycle < 1 {
            return Err(Error::validation("budget_per_cycle", "must be >= 1"));
        }
        if self.trials < 1 {
            return Err(Error::validation("trials", "must be >= 1"));
        }
        if self.split.initial_labeled < 1 {
            return Err(Error::validation("split.initial_labeled", "must be >= 1"));
        }
        if self.schedule == BudgetSchedule::Doubling && self.num_cycles > 40 {
            return Err(Error::validation("num_cycles", "doubling schedule supports at most 40 cycles"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::validation("test_fraction", "must be in (0, 1)"));
        }
        if !(self.learner.lr.is_finite() && self.learner.lr > 0.0) {
            return Err(Error::validation("learner.lr", "must be > 0"));
        }
        self.effective_learner().validate().map_err(|e| match e {
            Error::InvalidParameter { name, reason } => Error::validation(format!("learner.{name}"), reason),
            other => other,
        })?;
        if let Some(p) = self.prefilter_size {
            if p < self.budget_per_cycle {
                return Err(Error::validation("prefilter_size", "must be >= budget_per_cycle"));
            }
        }
        if let Some(ssl) = &self.ssl {
            ssl.validate().map_err(|e| match e {
                Error::InvalidParameter { name, reason } => Error::validation(format!("ssl.{name}"), reason),
                other => other,
            })?;
        }
        let needs_mc = self.strategy == Strategy::Bald || (self.strategy == Strategy::VarRatio && self.var_ratio_mc);
        if needs_mc {
            if self.mc_samples < 2 {
                return Err(Error::validation("mc_samples", "needs at least 2 Monte-Carlo passes"));
            }
            if self.learner.dropout_p <= 0.0 || self.learner.hidden_sizes.is_empty() {
                return Err(Error::validation("learner.dropout_p", "MC dropout needs dropout and a hidden layer"));
            }
        }
        if let Some(f) = self.dataset.duplicate_factor {
            if f < 2 {
                return Err(Error::validation("dataset.duplicate_factor", "must be >= 2"));
            }
        }
        if let DatasetSource::GaussianMixture {
            num_classes,
            dim,
            n_per_class,
            class_sep,
            ..
        } = self.dataset.source
        {
            if num_classes < 2 || dim < 1 || n_per_class < 1 || !(class_sep > 0.0 && class_sep.is_finite()) {
                return Err(Error::validation("dataset.source", "invalid Gaussian mixture parameters"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// SHA-256 of the canonical JSON form (keys sorted), hex encoded.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serialises");
        let canonical = serde_json::to_string(&value).expect("value serialises");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Parses a config from JSON text. `origin` is used in error messages.
pub fn parse_config_str(text: &str, origin: &Path) -> Result<ExperimentConfig> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_path_buf(),
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    match value.get("strategy") {
        None => return Err(Error::validation("strategy", "missing")),
        Some(serde_json::Value::String(s)) if s.trim().is_empty() => {
            return Err(Error::validation("strategy", "must not be empty"))
        }
        _ => {}
    }
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let field = e.path().to_string();
        let message = e.inner().to_string();
        if message.starts_with("unknown field") || message.starts_with("unknown variant") {
            Error::validation(field, message)
        } else {
            Error::Parse {
                path: origin.to_path_buf(),
                location: field,
                message,
            }
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and validates a JSON config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text, path)
}
