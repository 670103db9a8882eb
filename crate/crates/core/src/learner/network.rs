//! Parameters, forward and backward passes of the dropout MLP and its loss head.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed::Rng;

/// Affine layer `y = x W + b` with `W` stored input-major (`in x out`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    /// Uniform fan-in initialisation `U(-1/sqrt(in), 1/sqrt(in))` for weights, zero bias.
    fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
        Self {
            weight,
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Accumulates parameter gradients for upstream gradient `dy` and returns `dx`.
    fn backward(&self, x: ArrayView2<'_, f64>, dy: &Array2<f64>, grad: &mut Dense, need_dx: bool) -> Option<Array2<f64>> {
        grad.weight += &x.t().dot(dy);
        grad.bias += &dy.sum_axis(Axis(0));
        need_dx.then(|| dy.dot(&self.weight.t()))
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }
}

/// Auxiliary loss-prediction head.
///
/// Each tapped feature layer goes through its own `Dense + ReLU` branch; the branch
/// outputs are concatenated and mapped to one scalar per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LossHead {
    pub branches: Vec<Dense>,
    pub out: Dense,
}

impl LossHead {
    fn zeros_like(&self) -> Self {
        Self {
            branches: self.branches.iter().map(Dense::zeros_like).collect(),
            out: self.out.zeros_like(),
        }
    }
}

/// All trainable parameters. Also used to hold gradients and momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    /// Hidden layers followed by the classifier layer.
    pub layers: Vec<Dense>,
    pub head: Option<LossHead>,
}

impl Network {
    pub(crate) fn init(
        dim: usize,
        hidden: &[usize],
        num_classes: usize,
        head_width: Option<usize>,
        rng: &mut Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = dim;
        for &h in hidden {
            layers.push(Dense::init(fan_in, h, rng));
            fan_in = h;
        }
        layers.push(Dense::init(fan_in, num_classes, rng));
        let head = head_width.map(|w| {
            let taps: Vec<usize> = if hidden.is_empty() { vec![dim] } else { hidden.to_vec() };
            let branches: Vec<Dense> = taps.iter().map(|&t| Dense::init(t, w, rng)).collect();
            let out = Dense::init(w * taps.len(), 1, rng);
            LossHead { branches, out }
        });
        Self { layers, head }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
            head: self.head.as_ref().map(LossHead::zeros_like),
        }
    }

    pub fn num_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    /// Width of the penultimate representation.
    pub fn embed_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_in()
    }

    fn denses(&self) -> impl Iterator<Item = &Dense> {
        self.layers
            .iter()
            .chain(self.head.iter().flat_map(|h| h.branches.iter().chain(std::iter::once(&h.out))))
    }

    fn denses_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.layers
            .iter_mut()
            .chain(self.head.iter_mut().flat_map(|h| h.branches.iter_mut().chain(std::iter::once(&mut h.out))))
    }

    /// Parameter arrays in a fixed order (weights then bias, layer by layer, head last).
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.denses()
            .flat_map(|d| {
                [
                    d.weight.as_slice().expect("standard layout"),
                    d.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.denses_mut()
            .flat_map(|d| {
                [
                    d.weight.as_slice_mut().expect("standard layout"),
                    d.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
pub struct Trace {
    /// Input of every dense layer in the trunk (post-dropout for hidden outputs).
    inputs: Vec<Array2<f64>>,
    /// Hidden activations after ReLU, before dropout.
    taps: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
}

impl Trace {
    /// Penultimate representation: last hidden activation, or the input itself.
    pub fn embedding(&self) -> &Array2<f64> {
        self.taps.last().unwrap_or(&self.inputs[0])
    }

    fn head_inputs(&self) -> Vec<&Array2<f64>> {
        if self.taps.is_empty() {
            vec![&self.inputs[0]]
        } else {
            self.taps.iter().collect()
        }
    }
}

fn relu(z: Array2<f64>) -> Array2<f64> {
    z.mapv_into(|v| v.max(0.0))
}

impl Network {
    /// Forward pass. `masks` holds one pre-scaled dropout mask per hidden layer.
    pub fn forward(&self, x: ArrayView2<'_, f64>, masks: Option<&[Array2<f64>]>) -> Trace {
        let h = self.num_hidden();
        let mut inputs = Vec::with_capacity(h + 1);
        let mut taps = Vec::with_capacity(h);
        inputs.push(x.to_owned());
        for l in 0..h {
            let act = relu(self.layers[l].forward(inputs[l].view()));
            let next = match masks {
                Some(m) => &act * &m[l],
                None => act.clone(),
            };
            taps.push(act);
            inputs.push(next);
        }
        let logits = self.layers[h].forward(inputs[h].view());
        Trace { inputs, taps, logits }
    }

    /// Loss-head output for a trace, plus the branch activations needed for backprop.
    fn head_forward(&self, trace: &Trace) -> Option<(Array1<f64>, Array2<f64>)> {
        let head = self.head.as_ref()?;
        let parts: Vec<Array2<f64>> = head
            .branches
            .iter()
            .zip(trace.head_inputs())
            .map(|(b, f)| relu(b.forward(f.view())))
            .collect();
        let views: Vec<ArrayView2<'_, f64>> = parts.iter().map(|p| p.view()).collect();
        let concat = ndarray::concatenate(Axis(1), &views).expect("equal batch sizes");
        let out = head.out.forward(concat.view()).column(0).to_owned();
        Some((out, concat))
    }

    pub(crate) fn predicted_loss(&self, trace: &Trace) -> Option<Array1<f64>> {
        self.head_forward(trace).map(|(l, _)| l)
    }

    /// Backpropagates `dlogits` (and optional gradients on the hidden taps) into `grad`.
    fn backward(
        &self,
        trace: &Trace,
        masks: Option<&[Array2<f64>]>,
        dlogits: &Array2<f64>,
        dtaps: Option<&[Array2<f64>]>,
        grad: &mut Network,
    ) {
        let h = self.num_hidden();
        let mut da = self.layers[h].backward(trace.inputs[h].view(), dlogits, &mut grad.layers[h], h > 0);
        for l in (0..h).rev() {
            let mut dh = da.take().expect("hidden gradient");
            if let Some(m) = masks {
                dh *= &m[l];
            }
            if let Some(extra) = dtaps {
                dh += &extra[l];
            }
            Zip::from(&mut dh).and(&trace.taps[l]).for_each(|g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
            da = self.layers[l].backward(trace.inputs[l].view(), &dh, &mut grad.layers[l], l > 0);
        }
    }

    /// Backpropagates `dout` through the loss head. Returns gradients on the taps.
    fn head_backward(&self, trace: &Trace, concat: &Array2<f64>, dout: &Array1<f64>, grad: &mut Network) -> Vec<Array2<f64>> {
        let head = self.head.as_ref().expect("head present");
        let ghead = grad.head.as_mut().expect("head present");
        let dy = dout.view().insert_axis(Axis(1)).to_owned();
        let dconcat = head.out.backward(concat.view(), &dy, &mut ghead.out, true).expect("dx");
        let width = head.branches[0].fan_out();
        head.branches
            .iter()
            .zip(ghead.branches.iter_mut())
            .zip(trace.head_inputs())
            .enumerate()
            .map(|(i, ((b, gb), input))| {
                let part = concat.slice(ndarray::s![.., i * width..(i + 1) * width]);
                let mut d = dconcat.slice(ndarray::s![.., i * width..(i + 1) * width]).to_owned();
                Zip::from(&mut d).and(&part).for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
                b.backward(input.view(), &d, gb, true).expect("dx")
            })
            .collect()
    }
}

/// Row-wise log-softmax.
pub fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Row-wise softmax.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    log_softmax(logits).mapv_into(f64::exp)
}

/// Pairwise ranking loss on predicted losses.
///
/// The batch is split into halves; sample `i` of the first half (j) is paired with
/// sample `i` of the second half (k). Each pair contributes
/// `max(0, -s * (pred_k - pred_j) + margin)` with `s = +1` if `true_k > true_j`
/// and `-1` otherwise, so the loss is zero once the predicted order agrees with the
/// true order by at least `margin`.
pub fn llal_pair_loss(true_loss: &[f64], pred_loss: &[f64], margin: f64) -> Result<f64> {
    if true_loss.len() != pred_loss.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} true losses vs {} predictions",
            true_loss.len(),
            pred_loss.len()
        )));
    }
    if !true_loss.len().is_multiple_of(2) {
        return Err(Error::OddBatch(true_loss.len()));
    }
    if true_loss.is_empty() {
        return Ok(0.0);
    }
    Ok(pair_terms(true_loss, pred_loss, margin).0)
}

/// Mean pair loss and its gradient with respect to `pred_loss`. Length must be even.
fn pair_terms(true_loss: &[f64], pred_loss: &[f64], margin: f64) -> (f64, Vec<f64>) {
    let half = true_loss.len() / 2;
    let mut total = 0.0;
    let mut grad = vec![0.0; true_loss.len()];
    for j in 0..half {
        let k = j + half;
        let s = if true_loss[k] > true_loss[j] { 1.0 } else { -1.0 };
        let arg = -s * (pred_loss[k] - pred_loss[j]) + margin;
        if arg > 0.0 {
            total += arg;
            grad[k] -= s / half as f64;
            grad[j] += s / half as f64;
        }
    }
    (total / half as f64, grad)
}

/// Ranking-loss term settings for one step.
#[derive(Debug, Clone, Copy)]
pub struct RankingTerm {
    pub weight: f64,
    pub margin: f64,
    /// Stop the head's gradient from reaching the trunk.
    pub detach: bool,
}

/// Consistency term: symmetric KL between predictions on two views of the same
/// unlabeled samples, averaged over samples.
#[derive(Debug, Clone, Copy)]
pub struct ConsistencyTerm<'a> {
    pub weight: f64,
    pub view_a: ArrayView2<'a, f64>,
    pub view_b: ArrayView2<'a, f64>,
}

/// One minibatch and the loss terms to evaluate on it.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: &'a [usize],
    /// Pre-scaled dropout masks, one per hidden layer; `None` disables dropout.
    pub masks: Option<&'a [Array2<f64>]>,
    pub ranking: Option<RankingTerm>,
    pub consistency: Option<ConsistencyTerm<'a>>,
}

/// Loss value and gradient of the combined objective.
#[derive(Debug, Clone)]
pub struct Objective {
    pub loss: f64,
    pub cross_entropy: f64,
    pub ranking: f64,
    pub consistency: f64,
    pub grad: Network,
}

impl Network {
    /// Evaluates `CE + λ·ranking + w·consistency` and its gradient.
    ///
    /// True per-sample losses fed to the ranking term are treated as constants.
    /// Consistency views run without dropout.
    pub fn objective(&self, batch: &Batch<'_>) -> Objective {
        let n = batch.y.len();
        let mut grad = self.zeros_like();
        let trace = self.forward(batch.x, batch.masks);
        let logp = log_softmax(&trace.logits);
        let per_sample: Vec<f64> = batch.y.iter().enumerate().map(|(i, &y)| -logp[[i, y]]).collect();
        let cross_entropy = per_sample.iter().sum::<f64>() / n as f64;
        let mut dlogits = logp.mapv(f64::exp);
        for (i, &y) in batch.y.iter().enumerate() {
            dlogits[[i, y]] -= 1.0;
        }
        dlogits /= n as f64;

        let mut ranking = 0.0;
        let mut dtaps = None;
        if let (Some(term), Some((pred, concat))) = (batch.ranking, self.head_forward(&trace)) {
            let even = n - n % 2;
            if even >= 2 {
                let (value, g) = pair_terms(&per_sample[..even], &pred.as_slice().expect("contiguous")[..even], term.margin);
                ranking = value;
                let mut dout = Array1::zeros(n);
                for (d, gi) in dout.iter_mut().zip(g) {
                    *d = term.weight * gi;
                }
                let taps = self.head_backward(&trace, &concat, &dout, &mut grad);
                if !term.detach && self.num_hidden() > 0 {
                    dtaps = Some(taps);
                }
            }
        }
        self.backward(&trace, batch.masks, &dlogits, dtaps.as_deref(), &mut grad);

        let mut consistency = 0.0;
        if let Some(term) = batch.consistency {
            let ta = self.forward(term.view_a, None);
            let tb = self.forward(term.view_b, None);
            let (value, da, db) = symmetric_kl_grad(&ta.logits, &tb.logits);
            consistency = value;
            self.backward(&ta, None, &(da * term.weight), None, &mut grad);
            self.backward(&tb, None, &(db * term.weight), None, &mut grad);
        }

        let weight = |t: Option<f64>| t.unwrap_or(0.0);
        let loss = cross_entropy
            + weight(batch.ranking.map(|t| t.weight)) * ranking
            + weight(batch.consistency.map(|t| t.weight)) * consistency;
        Objective {
            loss,
            cross_entropy,
            ranking,
            consistency,
            grad,
        }
    }
}

/// Mean symmetric KL between `softmax(za)` and `softmax(zb)` rows, and its
/// gradients with respect to both logit matrices.
pub(crate) fn symmetric_kl_grad(za: &Array2<f64>, zb: &Array2<f64>) -> (f64, Array2<f64>, Array2<f64>) {
    let n = za.nrows() as f64;
    let (la, lb) = (log_softmax(za), log_softmax(zb));
    let (pa, pb) = (la.mapv(f64::exp), lb.mapv(f64::exp));
    let diff = &la - &lb;
    let kl_ab = (&pa * &diff).sum_axis(Axis(1));
    let kl_ba = (&pb * &diff).sum_axis(Axis(1)).mapv(|v| -v);
    let value = (kl_ab.sum() + kl_ba.sum()) / n;
    // d/dza = pa*(la-lb) + pa - pb - pa*KL(a||b); symmetric for b.
    let mut da = &pa * &diff + &pa - &pb;
    da -= &(&pa * &kl_ab.view().insert_axis(Axis(1)));
    let mut db = &pb * &diff.mapv(|v| -v) + &pb - &pa;
    db -= &(&pb * &kl_ba.view().insert_axis(Axis(1)));
    (value, da / n, db / n)
}

/// Draws pre-scaled inverted-dropout masks for a batch of `rows` samples.
pub(crate) fn dropout_masks(net: &Network, rows: usize, p: f64, rng: &mut Rng) -> Vec<Array2<f64>> {
    let keep = 1.0 - p;
    net.layers[..net.num_hidden()]
        .iter()
        .map(|l| {
            Array2::from_shape_fn((rows, l.fan_out()), |_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_loss_examples() {
        assert_eq!(llal_pair_loss(&[2.0, 1.0], &[1.5, 0.2], 1.0).unwrap(), 0.0);
        let v = llal_pair_loss(&[2.0, 1.0], &[0.2, 1.5], 1.0).unwrap();
        assert!((v - 2.3).abs() < 1e-12);
        assert_eq!(llal_pair_loss(&[0.3, 4.0], &[0.7, 0.7], 1.0).unwrap(), 1.0);
        assert!(matches!(llal_pair_loss(&[1.0, 2.0, 3.0], &[0.0; 3], 1.0), Err(Error::OddBatch(3))));
    }

    #[test]
    fn softmax_shift_invariance() {
        let z = Array2::from_shape_vec((2, 3), vec![1.0, -2.0, 0.5, 30.0, 31.0, 29.0]).unwrap();
        let p = softmax(&z);
        let q = softmax(&(&z + 123.456));
        for (a, b) in p.iter().zip(q.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_kl_identity_and_symmetry() {
        let za = Array2::from_shape_vec((1, 2), vec![0.3, -0.2]).unwrap();
        let zb = Array2::from_shape_vec((1, 2), vec![-1.0, 0.4]).unwrap();
        let (v0, da, _) = symmetric_kl_grad(&za, &za);
        assert_eq!(v0, 0.0);
        assert!(da.iter().all(|g| g.abs() < 1e-15));
        let (v1, ..) = symmetric_kl_grad(&za, &zb);
        let (v2, ..) = symmetric_kl_grad(&zb, &za);
        assert!((v1 - v2).abs() < 1e-15 && v1 > 0.0);
    }

    fn central_difference(net: &Network, batch: &Batch<'_>, eps: f64) -> Vec<f64> {
        let mut probe = net.clone();
        let sizes: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
        let mut out = Vec::new();
        for (a, &len) in sizes.iter().enumerate() {
            for i in 0..len {
                let orig = probe.param_slices()[a][i];
                probe.param_slices_mut()[a][i] = orig + eps;
                let up = probe.objective(batch).loss;
                probe.param_slices_mut()[a][i] = orig - eps;
                let down = probe.objective(batch).loss;
                probe.param_slices_mut()[a][i] = orig;
                out.push((up - down) / (2.0 * eps));
            }
        }
        out
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use crate::seed;
        use rand::Rng as _;
        let mut rng = seed::rng(99);
        let mut net = Network::init(3, &[4], 3, Some(3), &mut rng);
        // Zero biases put ReLU inputs exactly on the kink; randomise everything.
        for slice in net.param_slices_mut() {
            slice.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let va = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
        let vb = &va + &Array2::from_shape_fn((3, 3), |_| rng.random_range(-0.3..0.3));
        let masks = dropout_masks(&net, 4, 0.25, &mut rng);
        let y = [0, 2, 1, 2];
        let batch = Batch {
            x: x.view(),
            y: &y,
            masks: Some(&masks),
            ranking: Some(RankingTerm { weight: 0.7, margin: 0.5, detach: false }),
            consistency: Some(ConsistencyTerm { weight: 0.9, view_a: va.view(), view_b: vb.view() }),
        };
        let analytic: Vec<f64> = net.objective(&batch).grad.param_slices().concat();
        let numeric = central_difference(&net, &batch, 1e-5);
        for (a, n) in analytic.iter().zip(&numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            assert!(rel < 1e-4, "analytic {a} vs numeric {n}");
        }
    }
}
