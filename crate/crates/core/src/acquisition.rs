//! Acquisition scores and selection rules.
//!
//! Every scoring function is pure: it maps model outputs for the unlabeled pool
//! (in pool order) to one finite score per pool position. Larger is more
//! informative. Selection breaks ties towards the lower pool position.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{ArrayView1, ArrayView2, ArrayView3, Axis};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Floor applied to probabilities before taking logarithms in divergence scores.
pub const PROB_FLOOR: f64 = 1e-12;

const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Entropy,
    VarRatio,
    Bald,
    Llal,
    Coreset,
    Inconsistency,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Random,
        Strategy::Entropy,
        Strategy::VarRatio,
        Strategy::Bald,
        Strategy::Llal,
        Strategy::Coreset,
        Strategy::Inconsistency,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Entropy => "entropy",
            Strategy::VarRatio => "var_ratio",
            Strategy::Bald => "bald",
            Strategy::Llal => "llal",
            Strategy::Coreset => "coreset",
            Strategy::Inconsistency => "inconsistency",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::validation("strategy", format!("unknown strategy `{s}`")))
    }
}

/// One finite score per unlabeled position, with the strategy that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionScores {
    scores: Vec<f64>,
    strategy: Strategy,
}

impl AcquisitionScores {
    pub fn new(scores: Vec<f64>, strategy: Strategy) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid("scores", format!("non-finite score at position {i}")));
        }
        Ok(Self { scores, strategy })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Applies `f` to every score, keeping the strategy tag.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.scores.iter().map(|&s| f(s)).collect(), self.strategy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionRequest {
    pub budget: usize,
    /// Draw this many pool positions uniformly first and select only among them.
    pub prefilter_size: Option<usize>,
    pub seed: u64,
}

fn check_distribution(row: ArrayView1<'_, f64>, r: usize) -> Result<()> {
    if let Some(&v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidDistribution {
            row: r,
            reason: format!("entry {v} is negative or non-finite"),
        });
    }
    let sum = row.sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::InvalidDistribution {
            row: r,
            reason: format!("row sums to {sum}"),
        });
    }
    Ok(())
}

fn check_rows(probs: ArrayView2<'_, f64>) -> Result<()> {
    if probs.ncols() < 2 {
        return Err(Error::InvalidDistribution {
            row: 0,
            reason: format!("need at least 2 classes, got {}", probs.ncols()),
        });
    }
    probs
        .rows()
        .into_iter()
        .enumerate()
        .try_for_each(|(r, row)| check_distribution(row, r))
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub(crate) fn entropy_of(row: ArrayView1<'_, f64>) -> f64 {
    let h: f64 = row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    h.max(0.0)
}

/// i.i.d. uniform `[0, 1)` scores.
pub fn score_random(pool_size: usize, seed: u64) -> Result<AcquisitionScores> {
    use rand::Rng as _;
    if pool_size < 1 {
        return Err(Error::invalid("pool_size", "must be >= 1"));
    }
    let mut rng = seed::rng(seed);
    AcquisitionScores::new((0..pool_size).map(|_| rng.random::<f64>()).collect(), Strategy::Random)
}

/// Predictive entropy `-Σ p ln p`, in `[0, ln c]`.
pub fn score_entropy(probs: ArrayView2<'_, f64>) -> Result<AcquisitionScores> {
    check_rows(probs)?;
    AcquisitionScores::new(probs.rows().into_iter().map(entropy_of).collect(), Strategy::Entropy)
}

/// Variation ratio `1 - max p`, in `[0, 1 - 1/c]`.
pub fn score_var_ratio(probs: ArrayView2<'_, f64>) -> Result<AcquisitionScores> {
    check_rows(probs)?;
    let scores = probs
        .rows()
        .into_iter()
        .map(|row| 1.0 - row.fold(0.0_f64, |m, &p| m.max(p)))
        .collect();
    AcquisitionScores::new(scores, Strategy::VarRatio)
}

/// BALD mutual information from `T x n x c` Monte-Carlo predictions:
/// entropy of the mean prediction minus the mean per-pass entropy, clamped at 0.
pub fn score_bald(mc: ArrayView3<'_, f64>) -> Result<AcquisitionScores> {
    let (t, _, c) = mc.dim();
    if t < 2 {
        return Err(Error::TooFewSamples(t));
    }
    if c < 2 {
        return Err(Error::InvalidTensor(format!("need at least 2 classes, got {c}")));
    }
    for (s, slice) in mc.axis_iter(Axis(0)).enumerate() {
        check_rows(slice).map_err(|e| Error::InvalidTensor(format!("pass {s}: {e}")))?;
    }
    let mean = mc.mean_axis(Axis(0)).expect("t >= 2");
    let scores = mean
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, m)| {
            let expected: f64 = mc.axis_iter(Axis(0)).map(|slice| entropy_of(slice.row(i))).sum::<f64>() / t as f64;
            (entropy_of(m) - expected).max(0.0)
        })
        .collect();
    AcquisitionScores::new(scores, Strategy::Bald)
}

/// Learned-loss scores: the predicted losses themselves.
pub fn score_llal(predicted_loss: &[f64]) -> Result<AcquisitionScores> {
    AcquisitionScores::new(predicted_loss.to_vec(), Strategy::Llal)
}

/// Symmetric KL `KL(a||b) + KL(b||a)` per row, entries floored at [`PROB_FLOOR`].
pub fn score_inconsistency(probs_a: ArrayView2<'_, f64>, probs_b: ArrayView2<'_, f64>) -> Result<AcquisitionScores> {
    if probs_a.dim() != probs_b.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", probs_a.dim(), probs_b.dim())));
    }
    check_rows(probs_a)?;
    check_rows(probs_b)?;
    let scores = probs_a
        .rows()
        .into_iter()
        .zip(probs_b.rows())
        .map(|(a, b)| {
            let s: f64 = a
                .iter()
                .zip(b.iter())
                .map(|(&p, &q)| {
                    let (p, q) = (p.max(PROB_FLOOR), q.max(PROB_FLOOR));
                    (p - q) * (p.ln() - q.ln())
                })
                .sum();
            s.max(0.0)
        })
        .collect();
    AcquisitionScores::new(scores, Strategy::Inconsistency)
}

/// Pool positions eligible for selection: all of them, or a seeded uniform subset.
pub fn candidate_positions(pool_size: usize, req: &SelectionRequest) -> Result<Vec<usize>> {
    if req.budget < 1 {
        return Err(Error::invalid("budget", "must be >= 1"));
    }
    if req.budget > pool_size {
        return Err(Error::BudgetExceedsPool {
            budget: req.budget,
            pool: pool_size,
        });
    }
    match req.prefilter_size {
        Some(m) if m < req.budget => Err(Error::invalid(
            "prefilter_size",
            format!("{m} is smaller than the budget {}", req.budget),
        )),
        Some(m) if m < pool_size => {
            let mut rng = seed::rng(seed::derive(req.seed, &[seed::stream::PREFILTER]));
            let mut picked = index::sample(&mut rng, pool_size, m).into_vec();
            picked.sort_unstable();
            Ok(picked)
        }
        _ => Ok((0..pool_size).collect()),
    }
}

/// The `budget` positions with the largest scores, best first. Ties go to the
/// lower position. With a prefilter, only a seeded uniform subset is eligible.
pub fn select_top_k(scores: &AcquisitionScores, req: &SelectionRequest) -> Result<Vec<usize>> {
    let mut candidates = candidate_positions(scores.len(), req)?;
    let s = scores.scores();
    candidates.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    candidates.truncate(req.budget);
    Ok(candidates)
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy k-center (farthest-first) selection.
///
/// Starting from the labeled embeddings as centers, repeatedly picks the unlabeled
/// point farthest from its nearest center. Ties go to the lower position. With no
/// labeled centers the first pick is position 0. Picks are returned in order.
pub fn select_coreset(
    labeled: ArrayView2<'_, f64>,
    unlabeled: ArrayView2<'_, f64>,
    budget: usize,
) -> Result<Vec<usize>> {
    let n = unlabeled.nrows();
    if unlabeled.ncols() < 1 {
        return Err(Error::invalid("embeddings", "need at least one feature"));
    }
    if labeled.nrows() > 0 && labeled.ncols() != unlabeled.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "labeled width {} vs unlabeled width {}",
            labeled.ncols(),
            unlabeled.ncols()
        )));
    }
    if budget > n {
        return Err(Error::BudgetExceedsPool { budget, pool: n });
    }
    let mut nearest = vec![f64::INFINITY; n];
    for (j, u) in unlabeled.rows().into_iter().enumerate() {
        for l in labeled.rows() {
            nearest[j] = nearest[j].min(sq_dist(u, l));
        }
    }
    let mut picks = Vec::with_capacity(budget);
    let mut taken = vec![false; n];
    while picks.len() < budget {
        let mut best: Option<usize> = None;
        for j in (0..n).filter(|&j| !taken[j]) {
            if best.is_none_or(|b| nearest[j] > nearest[b]) {
                best = Some(j);
            }
        }
        let p = best.expect("budget <= pool");
        taken[p] = true;
        picks.push(p);
        let center = unlabeled.row(p);
        for (j, u) in unlabeled.rows().into_iter().enumerate() {
            if !taken[j] {
                nearest[j] = nearest[j].min(sq_dist(u, center));
            }
        }
        nearest[p] = 0.0;
    }
    Ok(picks)
}

/// Largest distance from any point to its nearest center among
/// `centers ∪ points[picks]`. Infinite when there are no centers at all.
pub fn covering_radius(points: ArrayView2<'_, f64>, centers: ArrayView2<'_, f64>, picks: &[usize]) -> f64 {
    points
        .rows()
        .into_iter()
        .map(|p| {
            let from_centers = centers.rows().into_iter().map(|c| sq_dist(p, c));
            let from_picks = picks.iter().map(|&i| sq_dist(p, points.row(i)));
            from_centers.chain(from_picks).fold(f64::INFINITY, f64::min)
        })
        .fold(0.0_f64, f64::max)
        .sqrt()
}

/// Result of the exhaustive k-center search.
#[derive(Debug, Clone, PartialEq)]
pub struct KCenterOptimum {
    /// Lexicographically first optimal pick set.
    pub picks: Vec<usize>,
    pub radius: f64,
    /// Number of k-subsets attaining the optimal radius.
    pub num_optimal: usize,
}

/// Exhaustive k-center: the `k` points whose addition to `centers` minimises the
/// covering radius of `points`. Limited to 12 points.
pub fn brute_force_kcenter(points: ArrayView2<'_, f64>, centers: ArrayView2<'_, f64>, k: usize) -> Result<KCenterOptimum> {
    let n = points.nrows();
    if n > 12 {
        return Err(Error::InstanceTooLarge(n));
    }
    if k > n {
        return Err(Error::BudgetExceedsPool { budget: k, pool: n });
    }
    let mut best = KCenterOptimum {
        picks: Vec::new(),
        radius: f64::INFINITY,
        num_optimal: 0,
    };
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let picks: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let r = covering_radius(points, centers, &picks);
        if r < best.radius || best.num_optimal == 0 {
            best = KCenterOptimum { picks, radius: r, num_optimal: 1 };
        } else if r == best.radius {
            best.num_optimal += 1;
            if picks < best.picks {
                best.picks = picks;
            }
        }
    }
    Ok(best)
}

/// Writes `position,score,selected` rows for one acquisition step.
pub fn write_scores_csv(mut out: impl Write, scores: &AcquisitionScores, selected: &[usize]) -> std::io::Result<()> {
    let mut flag = vec![false; scores.len()];
    for &p in selected {
        if p < flag.len() {
            flag[p] = true;
        }
    }
    writeln!(out, "position,score,selected")?;
    for (i, s) in scores.scores().iter().enumerate() {
        writeln!(out, "{i},{s},{}", u8::from(flag[i]))?;
    }
    Ok(())
}
