use ndarray::Array2;
use rand::seq::SliceRandom;

use super::network::{dropout_masks, Batch, ConsistencyTerm, RankingTerm};
use super::{LearnerConfig, LearnerModel};
use crate::data::Dataset;
use crate::error::{Error, Result};

/// One SGD step with momentum and L2 weight decay, in place:
/// `v <- m*v + g + wd*w`, `w <- w - lr*v`.
pub fn sgd_momentum_step(w: &mut [f64], g: &[f64], v: &mut [f64], lr: f64, momentum: f64, weight_decay: f64) {
    for ((w, &g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *w;
        *w -= lr * *v;
    }
}

/// Source of a consistency term evaluated alongside each labeled minibatch.
pub(crate) trait UnlabeledTerm {
    /// Weight and the two perturbed views for the next step, or `None` to skip.
    fn next_views(&mut self, epoch: usize) -> Option<(f64, Array2<f64>, Array2<f64>)>;
}

/// Supervised training on the `labeled` rows of `ds`.
///
/// Runs `cfg.epochs` epochs of shuffled minibatch SGD with momentum. The learning
/// rate is multiplied by `lr_step_factor` from epoch `lr_step_epoch` on. If the
/// model has a loss head its ranking loss is added with weight `llal_weight`, and
/// from epoch `llal_detach_epoch` on it no longer back-propagates into the trunk.
/// Momentum buffers start at zero on every call.
pub fn train(model: &mut LearnerModel, ds: &Dataset, labeled: &[usize], cfg: &LearnerConfig) -> Result<()> {
    fit(model, ds, labeled, cfg, None)
}

pub(crate) fn fit(
    model: &mut LearnerModel,
    ds: &Dataset,
    labeled: &[usize],
    cfg: &LearnerConfig,
    mut extra: Option<&mut dyn UnlabeledTerm>,
) -> Result<()> {
    cfg.validate()?;
    if labeled.is_empty() {
        return Err(Error::invalid("labeled", "training needs at least one labeled sample"));
    }
    model.check_input(ds, labeled)?;
    let mut velocity = model.net.zeros_like();
    let mut order = labeled.to_vec();
    let use_dropout = model.dropout_p > 0.0 && model.net.num_hidden() > 0;

    for epoch in 0..cfg.epochs {
        let lr = if epoch >= cfg.lr_step_epoch { cfg.lr * cfg.lr_step_factor } else { cfg.lr };
        let ranking = model.net.head.as_ref().map(|_| RankingTerm {
            weight: cfg.llal_weight,
            margin: cfg.llal_margin,
            detach: epoch >= cfg.llal_detach_epoch,
        });
        order.shuffle(&mut model.rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = ds.gather(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| ds.labels()[i]).collect();
            let masks = use_dropout.then(|| dropout_masks(&model.net, chunk.len(), model.dropout_p, &mut model.rng));
            let views = extra.as_mut().and_then(|e| e.next_views(epoch));
            let consistency = views.as_ref().map(|(w, a, b)| ConsistencyTerm {
                weight: *w,
                view_a: a.view(),
                view_b: b.view(),
            });
            let batch = Batch {
                x: x.view(),
                y: &y,
                masks: masks.as_deref(),
                ranking,
                consistency,
            };
            let obj = model.net.objective(&batch);
            if !obj.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: model.epoch });
            }
            total += obj.loss * chunk.len() as f64;
            let grads = obj.grad.param_slices();
            for ((w, g), v) in model
                .net
                .param_slices_mut()
                .into_iter()
                .zip(grads)
                .zip(velocity.param_slices_mut())
            {
                sgd_momentum_step(w, g, v, lr, cfg.momentum, cfg.weight_decay);
            }
        }
        if !model.net.all_finite() {
            return Err(Error::NonFiniteLoss { epoch: model.epoch });
        }
        model.loss_history.push(total / labeled.len() as f64);
        model.epoch += 1;
    }
    Ok(())
}
