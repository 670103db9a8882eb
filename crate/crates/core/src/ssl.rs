//! Consistency-regularised semi-supervised training and the inconsistency score.
//!
//! Each labeled minibatch step also draws an unlabeled minibatch, perturbs it
//! twice, and penalises the symmetric KL divergence between the model's
//! predictions on the two views. The same divergence, computed on the pool,
//! serves as an acquisition score.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::acquisition::{score_inconsistency, AcquisitionScores};
use crate::data::{Dataset, PoolPartition};
use crate::error::{Error, Result};
use crate::learner::{self, LearnerConfig, LearnerModel, UnlabeledTerm};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// Adds isotropic Gaussian noise with standard deviation `noise_scale`.
    #[default]
    GaussianNoise,
    /// Zeroes each feature with probability `noise_scale` (inverted scaling).
    InputDropout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslConfig {
    pub consistency_weight: f64,
    pub perturbation: Perturbation,
    pub noise_scale: f64,
    pub unlabeled_batch_size: usize,
    /// Epochs over which the consistency weight ramps linearly from 0 to full.
    pub ramp_up_epochs: usize,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            consistency_weight: 1.0,
            perturbation: Perturbation::GaussianNoise,
            noise_scale: 0.1,
            unlabeled_batch_size: 128,
            ramp_up_epochs: 10,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.consistency_weight.is_finite() && self.consistency_weight >= 0.0) {
            return Err(Error::invalid("consistency_weight", "must be finite and >= 0"));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale > 0.0) {
            return Err(Error::invalid("noise_scale", format!("must be > 0, got {}", self.noise_scale)));
        }
        if self.perturbation == Perturbation::InputDropout && self.noise_scale >= 1.0 {
            return Err(Error::invalid("noise_scale", "input dropout probability must be < 1"));
        }
        if self.unlabeled_batch_size < 1 {
            return Err(Error::invalid("unlabeled_batch_size", "must be >= 1"));
        }
        Ok(())
    }

    /// Consistency weight for a (0-based) epoch under the linear ramp.
    pub fn weight_at(&self, epoch: usize) -> f64 {
        if self.ramp_up_epochs == 0 {
            self.consistency_weight
        } else {
            self.consistency_weight * ((epoch + 1) as f64 / self.ramp_up_epochs as f64).min(1.0)
        }
    }
}

/// One perturbed view of `x`.
pub fn perturb(x: ArrayView2<'_, f64>, kind: Perturbation, scale: f64, rng: &mut Rng) -> Array2<f64> {
    match kind {
        Perturbation::GaussianNoise => x.mapv(|v| {
            let z: f64 = StandardNormal.sample(rng);
            v + scale * z
        }),
        Perturbation::InputDropout => {
            let keep = 1.0 - scale;
            x.mapv(|v| if rng.random::<f64>() < keep { v / keep } else { 0.0 })
        }
    }
}

struct ConsistencySampler<'a> {
    ds: &'a Dataset,
    pool: &'a [usize],
    cfg: &'a SslConfig,
    rng: Rng,
}

impl UnlabeledTerm for ConsistencySampler<'_> {
    fn next_views(&mut self, epoch: usize) -> Option<(f64, Array2<f64>, Array2<f64>)> {
        let weight = self.cfg.weight_at(epoch);
        if weight == 0.0 {
            return None;
        }
        let rows: Vec<usize> = (0..self.cfg.unlabeled_batch_size)
            .map(|_| self.pool[self.rng.random_range(0..self.pool.len())])
            .collect();
        let x = self.ds.gather(&rows);
        let a = perturb(x.view(), self.cfg.perturbation, self.cfg.noise_scale, &mut self.rng);
        let b = perturb(x.view(), self.cfg.perturbation, self.cfg.noise_scale, &mut self.rng);
        Some((weight, a, b))
    }
}

/// Semi-supervised training: supervised steps on L plus a ramped consistency term
/// on U. With `consistency_weight == 0` this is exactly [`learner::train`].
///
/// Unlabeled batches and perturbations use their own random stream, so the
/// labeled batch order and dropout masks match supervised training.
pub fn train_ssl(
    model: &mut LearnerModel,
    ds: &Dataset,
    partition: &PoolPartition,
    cfg: &LearnerConfig,
    ssl: &SslConfig,
) -> Result<()> {
    ssl.validate()?;
    if partition.unlabeled().is_empty() {
        return Err(Error::invalid("unlabeled", "semi-supervised training needs a non-empty pool"));
    }
    let mut sampler = ConsistencySampler {
        ds,
        pool: partition.unlabeled(),
        cfg: ssl,
        rng: seed::rng(seed::derive(model.seed, &[seed::stream::SSL, model.epoch as u64])),
    };
    learner::fit(model, ds, partition.labeled(), cfg, Some(&mut sampler))
}

/// Mean symmetric KL between predictions on two perturbed views of `x`, the views
/// drawn from streams seeded by `seed_a` and `seed_b`.
pub fn consistency_loss(model: &LearnerModel, x: ArrayView2<'_, f64>, ssl: &SslConfig, seed_a: u64, seed_b: u64) -> f64 {
    let a = perturb(x, ssl.perturbation, ssl.noise_scale, &mut seed::rng(seed_a));
    let b = perturb(x, ssl.perturbation, ssl.noise_scale, &mut seed::rng(seed_b));
    let la = learner::log_softmax(&model.network().forward(a.view(), None).logits);
    let lb = learner::log_softmax(&model.network().forward(b.view(), None).logits);
    let per_row: f64 = ((&la.mapv(f64::exp) - &lb.mapv(f64::exp)) * (&la - &lb)).sum();
    per_row / x.nrows().max(1) as f64
}

/// Inconsistency acquisition: symmetric KL between predictions on two seeded
/// perturbations of every pool sample.
pub fn acquire_inconsistency(
    model: &LearnerModel,
    ds: &Dataset,
    unlabeled: &[usize],
    ssl: &SslConfig,
    seed: u64,
) -> Result<AcquisitionScores> {
    if ds.dim() != model.network().input_dim() || unlabeled.iter().any(|&i| i >= ds.len()) {
        return Err(Error::invalid("unlabeled", "indices or feature width do not match the model"));
    }
    let x = ds.gather(unlabeled);
    let mut rng = seed::rng(seed);
    let a = perturb(x.view(), ssl.perturbation, ssl.noise_scale, &mut rng);
    let b = perturb(x.view(), ssl.perturbation, ssl.noise_scale, &mut rng);
    score_inconsistency(model.proba_of(a.view()).view(), model.proba_of(b.view()).view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_gaussian_mixture, initial_split, SplitSpec};
    use crate::learner::{init_model, train};

    fn setup() -> (Dataset, PoolPartition, LearnerConfig) {
        let ds = generate_gaussian_mixture(3, 4, 30, 3.0, 1).unwrap();
        let p = initial_split(&ds, &SplitSpec { initial_labeled: 20, seed: 2, stratified: false }).unwrap();
        let cfg = LearnerConfig {
            hidden_sizes: vec![8],
            epochs: 4,
            batch_size: 8,
            lr: 0.05,
            ..LearnerConfig::default()
        };
        (ds, p, cfg)
    }

    #[test]
    fn zero_weight_matches_supervised_bitwise() {
        let (ds, p, cfg) = setup();
        let mut a = init_model(&cfg, 4, 3).unwrap();
        let mut b = a.clone();
        let ssl = SslConfig { consistency_weight: 0.0, ..SslConfig::default() };
        train_ssl(&mut a, &ds, &p, &cfg, &ssl).unwrap();
        train(&mut b, &ds, p.labeled(), &cfg).unwrap();
        assert_eq!(a.network(), b.network());
        assert_eq!(a.loss_history(), b.loss_history());
    }

    #[test]
    fn consistency_changes_training() {
        let (ds, p, cfg) = setup();
        let mut a = init_model(&cfg, 4, 3).unwrap();
        let mut b = a.clone();
        train_ssl(&mut a, &ds, &p, &cfg, &SslConfig::default()).unwrap();
        train(&mut b, &ds, p.labeled(), &cfg).unwrap();
        assert_ne!(a.network(), b.network());
    }

    #[test]
    fn consistency_loss_properties() {
        let (ds, _, cfg) = setup();
        let m = init_model(&cfg, 4, 3).unwrap();
        let x = ds.gather(&(0..20).collect::<Vec<_>>());
        let ssl = SslConfig::default();
        let ab = consistency_loss(&m, x.view(), &ssl, 1, 2);
        let ba = consistency_loss(&m, x.view(), &ssl, 2, 1);
        assert!(ab > 0.0);
        assert!((ab - ba).abs() < 1e-12);
        let tiny = SslConfig { noise_scale: 1e-300, ..ssl };
        assert_eq!(consistency_loss(&m, x.view(), &tiny, 1, 2), 0.0);
    }

    #[test]
    fn inconsistency_scores() {
        let (ds, p, cfg) = setup();
        let m = init_model(&cfg, 4, 3).unwrap();
        let ssl = SslConfig::default();
        let s = acquire_inconsistency(&m, &ds, p.unlabeled(), &ssl, 5).unwrap();
        assert_eq!(s.len(), p.unlabeled().len());
        assert!(s.scores().iter().all(|&v| v >= 0.0));
        assert_eq!(s, acquire_inconsistency(&m, &ds, p.unlabeled(), &ssl, 5).unwrap());
        let tiny = SslConfig { noise_scale: 1e-300, ..ssl };
        let z = acquire_inconsistency(&m, &ds, p.unlabeled(), &tiny, 5).unwrap();
        assert!(z.scores().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_and_validation() {
        let ssl = SslConfig { consistency_weight: 2.0, ramp_up_epochs: 4, ..SslConfig::default() };
        assert_eq!(ssl.weight_at(0), 0.5);
        assert_eq!(ssl.weight_at(3), 2.0);
        assert_eq!(ssl.weight_at(10), 2.0);
        assert!(SslConfig { noise_scale: 0.0, ..SslConfig::default() }.validate().is_err());
        let (ds, _, cfg) = setup();
        let all = initial_split(&ds, &SplitSpec { initial_labeled: ds.len(), seed: 0, stratified: false }).unwrap();
        let mut m = init_model(&cfg, 4, 3).unwrap();
        assert!(train_ssl(&mut m, &ds, &all, &cfg, &SslConfig::default()).is_err());
    }
}
