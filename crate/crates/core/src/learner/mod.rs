//! Feed-forward classifier with dropout, SGD + momentum training, Monte-Carlo
//! dropout sampling, penultimate embeddings and a loss-prediction head.
//!
//! The ranking loss for the loss-prediction head uses the sign convention where a
//! pair is penalised when the predicted order disagrees with the true order:
//! `max(0, -s * (pred_k - pred_j) + margin)`, `s = sign(true_k - true_j)`.
//! Applying `+s` instead would reward inverted predictions.

mod checkpoint;
mod network;
mod train;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use network::{
    llal_pair_loss, log_softmax, softmax, Batch, ConsistencyTerm, Dense, LossHead, Network, Objective, RankingTerm,
};
pub use train::{sgd_momentum_step, train};
pub(crate) use train::{fit, UnlabeledTerm};

/// Training and architecture hyperparameters.
///
/// Defaults follow the shared benchmark recipe: 200 epochs of SGD with learning
/// rate 0.1, momentum 0.9, weight decay 5e-4 and a single step decay at epoch 160.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub hidden_sizes: Vec<usize>,
    pub dropout_p: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_step_epoch: usize,
    pub lr_step_factor: f64,
    pub seed: u64,
    pub loss_head: bool,
    pub loss_head_width: usize,
    pub llal_margin: f64,
    pub llal_weight: f64,
    pub llal_detach_epoch: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![128, 64],
            dropout_p: 0.2,
            epochs: 200,
            batch_size: 128,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_step_epoch: 160,
            lr_step_factor: 0.1,
            seed: 0,
            loss_head: false,
            loss_head_width: 16,
            llal_margin: 1.0,
            llal_weight: 1.0,
            llal_detach_epoch: 120,
        }
    }
}

impl LearnerConfig {
    /// Checks the invariants needed to train. A zero learning rate is accepted here
    /// (it makes training a no-op); experiment configs require `lr > 0`.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::invalid("lr", format!("must be finite and >= 0, got {}", self.lr)));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::invalid("momentum", format!("must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay", "must be finite and >= 0"));
        }
        if !(self.dropout_p.is_finite() && (0.0..1.0).contains(&self.dropout_p)) {
            return Err(Error::invalid("dropout_p", format!("must be in [0, 1), got {}", self.dropout_p)));
        }
        if self.epochs < 1 {
            return Err(Error::invalid("epochs", "must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        if self.loss_head && !self.batch_size.is_multiple_of(2) {
            return Err(Error::invalid("batch_size", "must be even when the loss head is enabled"));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::invalid("hidden_sizes", "layer widths must be >= 1"));
        }
        if !(self.lr_step_factor.is_finite() && self.lr_step_factor >= 0.0) {
            return Err(Error::invalid("lr_step_factor", "must be finite and >= 0"));
        }
        if !(self.llal_margin.is_finite() && self.llal_margin >= 0.0) {
            return Err(Error::invalid("llal_margin", "must be finite and >= 0"));
        }
        if !(self.llal_weight.is_finite() && self.llal_weight >= 0.0) {
            return Err(Error::invalid("llal_weight", "must be finite and >= 0"));
        }
        if self.loss_head && self.loss_head_width < 1 {
            return Err(Error::invalid("loss_head_width", "must be >= 1"));
        }
        Ok(())
    }
}

/// A trained or freshly initialised classifier.
#[derive(Debug, Clone)]
pub struct LearnerModel {
    pub(crate) net: Network,
    pub(crate) dropout_p: f64,
    pub(crate) seed: u64,
    pub(crate) epoch: usize,
    pub(crate) rng: Rng,
    pub(crate) loss_history: Vec<f64>,
}

/// Initialises a model. Parameters depend only on `cfg.seed` and the shapes.
pub fn init_model(cfg: &LearnerConfig, dim: usize, num_classes: usize) -> Result<LearnerModel> {
    if dim < 1 {
        return Err(Error::invalid("dim", "must be >= 1"));
    }
    if num_classes < 2 {
        return Err(Error::invalid("num_classes", format!("must be >= 2, got {num_classes}")));
    }
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed);
    let head = cfg.loss_head.then_some(cfg.loss_head_width);
    let net = Network::init(dim, &cfg.hidden_sizes, num_classes, head, &mut rng);
    Ok(LearnerModel {
        net,
        dropout_p: cfg.dropout_p,
        seed: cfg.seed,
        epoch: 0,
        rng,
        loss_history: Vec::new(),
    })
}

impl LearnerModel {
    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    /// Total epochs trained across all `train` calls.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Mean training objective per epoch, in order.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn has_loss_head(&self) -> bool {
        self.net.head.is_some()
    }

    fn check_input(&self, ds: &Dataset, indices: &[usize]) -> Result<()> {
        if ds.dim() != self.net.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} features, dataset has {}",
                self.net.input_dim(),
                ds.dim()
            )));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= ds.len()) {
            return Err(Error::invalid("indices", format!("index {i} out of bounds for {} samples", ds.len())));
        }
        Ok(())
    }

    /// Class probabilities for raw feature rows, dropout disabled.
    pub fn proba_of(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        softmax(&self.net.forward(x, None).logits)
    }

    /// Class probabilities with dropout disabled. Rows sum to one.
    pub fn predict_proba(&self, ds: &Dataset, indices: &[usize]) -> Result<Array2<f64>> {
        self.check_input(ds, indices)?;
        Ok(self.proba_of(ds.gather(indices).view()))
    }

    /// One stochastic forward pass with dropout active, drawing masks from `rng`.
    pub fn predict_proba_dropout(&self, ds: &Dataset, indices: &[usize], rng: &mut Rng) -> Result<Array2<f64>> {
        self.check_input(ds, indices)?;
        let masks = network::dropout_masks(&self.net, indices.len(), self.dropout_p, rng);
        Ok(softmax(&self.net.forward(ds.gather(indices).view(), Some(&masks)).logits))
    }

    /// `samples` Monte-Carlo dropout passes, shaped `samples x |indices| x c`.
    pub fn predict_proba_mc(&self, ds: &Dataset, indices: &[usize], samples: usize, seed: u64) -> Result<Array3<f64>> {
        if samples < 1 {
            return Err(Error::invalid("samples", "must be >= 1"));
        }
        if self.dropout_p <= 0.0 {
            return Err(Error::invalid("dropout_p", "MC dropout needs dropout_p > 0"));
        }
        if self.net.num_hidden() == 0 {
            return Err(Error::invalid("hidden_sizes", "MC dropout needs at least one hidden layer"));
        }
        self.check_input(ds, indices)?;
        let mut rng = seed::rng(seed);
        let mut out = Array3::zeros((samples, indices.len(), self.net.num_classes()));
        for mut slice in out.axis_iter_mut(Axis(0)) {
            slice.assign(&self.predict_proba_dropout(ds, indices, &mut rng)?);
        }
        Ok(out)
    }

    /// Penultimate-layer activations with dropout disabled.
    pub fn embed(&self, ds: &Dataset, indices: &[usize]) -> Result<Array2<f64>> {
        self.check_input(ds, indices)?;
        Ok(self.net.forward(ds.gather(indices).view(), None).embedding().clone())
    }

    /// Predicted per-sample loss from the auxiliary head.
    pub fn predict_loss(&self, ds: &Dataset, indices: &[usize]) -> Result<Vec<f64>> {
        if self.net.head.is_none() {
            return Err(Error::LossHeadMissing);
        }
        self.check_input(ds, indices)?;
        let trace = self.net.forward(ds.gather(indices).view(), None);
        Ok(self.net.predicted_loss(&trace).expect("head present").to_vec())
    }

    /// Mean cross-entropy on `indices` with dropout disabled.
    pub fn cross_entropy(&self, ds: &Dataset, indices: &[usize]) -> Result<f64> {
        self.check_input(ds, indices)?;
        let logp = log_softmax(&self.net.forward(ds.gather(indices).view(), None).logits);
        let total: f64 = indices.iter().enumerate().map(|(r, &i)| -logp[[r, ds.labels()[i]]]).sum();
        Ok(total / indices.len().max(1) as f64)
    }

    /// Fraction of `indices` whose argmax prediction equals the label.
    pub fn accuracy(&self, ds: &Dataset, indices: &[usize]) -> Result<f64> {
        let probs = self.predict_proba(ds, indices)?;
        let correct = probs
            .rows()
            .into_iter()
            .zip(indices)
            .filter(|(row, &i)| argmax(row.iter().copied()) == ds.labels()[i])
            .count();
        Ok(correct as f64 / indices.len().max(1) as f64)
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}
