//! Datasets and labeled/unlabeled pool bookkeeping.

mod io;

use std::collections::HashMap;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use io::{load_dataset, load_idx, DatasetFormat};

/// A labeled feature matrix. Rows sharing a `dup_group` id are exact copies.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    dup_group: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset, checking label range, shapes and duplicate-group consistency.
    pub fn new(
        name: impl Into<String>,
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        dup_group: Vec<usize>,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(Error::InvalidDataset(format!("empty feature matrix {n}x{d}")));
        }
        if num_classes < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if labels.len() != n || dup_group.len() != n {
            return Err(Error::InvalidDataset(format!(
                "{n} rows but {} labels and {} group ids",
                labels.len(),
                dup_group.len()
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::InvalidDataset(format!(
                "label {y} at row {i} outside [0, {num_classes})"
            )));
        }
        let mut first: HashMap<usize, usize> = HashMap::new();
        for (i, &g) in dup_group.iter().enumerate() {
            let j = *first.entry(g).or_insert(i);
            if j != i && !rows_bitwise_equal(features.row(i), features.row(j)) {
                return Err(Error::InvalidDataset(format!(
                    "rows {j} and {i} share duplicate group {g} but differ"
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            num_classes,
            dup_group,
        })
    }

    /// Builds a dataset and assigns duplicate groups by exact row equality.
    pub fn from_rows(
        name: impl Into<String>,
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let dup_group = group_exact_rows(features.view());
        Self::new(name, features, labels, num_classes, dup_group)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn dup_group(&self) -> &[usize] {
        &self.dup_group
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Checks the invariants an experiment needs: every class present and N >= c.
    pub fn check_complete(&self) -> Result<()> {
        if self.len() < self.num_classes {
            return Err(Error::InvalidDataset(format!(
                "{} samples for {} classes",
                self.len(),
                self.num_classes
            )));
        }
        if let Some(k) = self.class_counts().iter().position(|&c| c == 0) {
            return Err(Error::InvalidDataset(format!("class {k} has no samples")));
        }
        Ok(())
    }

    /// Gathers the feature rows at `indices` into a new matrix.
    pub fn gather(&self, indices: &[usize]) -> Array2<f64> {
        self.features.select(Axis(0), indices)
    }

    /// A new dataset made of the rows at `indices` (in that order). Group ids are kept.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Dataset {
        Dataset {
            name: name.into(),
            features: self.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            dup_group: indices.iter().map(|&i| self.dup_group[i]).collect(),
        }
    }
}

fn rows_bitwise_equal(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> bool {
    a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Assigns group ids in first-occurrence order to bitwise-identical rows.
pub fn group_exact_rows(features: ArrayView2<'_, f64>) -> Vec<usize> {
    let mut ids: HashMap<Vec<u64>, usize> = HashMap::new();
    features
        .rows()
        .into_iter()
        .map(|row| {
            let key: Vec<u64> = row.iter().map(|x| x.to_bits()).collect();
            let next = ids.len();
            *ids.entry(key).or_insert(next)
        })
        .collect()
}

/// Seeded isotropic Gaussian mixture with one component per class.
///
/// When `num_classes <= dim` the class means sit on scaled coordinate axes, so
/// every pair of means is exactly `class_sep` apart. Otherwise the means are
/// random unit directions scaled the same way. Sample `i` belongs to class `i % c`.
pub fn generate_gaussian_mixture(
    num_classes: usize,
    dim: usize,
    n_per_class: usize,
    class_sep: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::invalid("num_classes", format!("must be >= 2, got {num_classes}")));
    }
    if dim < 1 {
        return Err(Error::invalid("dim", "must be >= 1"));
    }
    if n_per_class < 1 {
        return Err(Error::invalid("n_per_class", "must be >= 1"));
    }
    if !(class_sep.is_finite() && class_sep > 0.0) {
        return Err(Error::invalid("class_sep", format!("must be > 0, got {class_sep}")));
    }
    let mut rng = seed::rng(seed);
    let scale = class_sep / std::f64::consts::SQRT_2;
    let mut means = Array2::<f64>::zeros((num_classes, dim));
    if num_classes <= dim {
        for k in 0..num_classes {
            means[[k, k]] = scale;
        }
    } else {
        for mut m in means.rows_mut() {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            for (dst, x) in m.iter_mut().zip(v) {
                *dst = scale * x / norm;
            }
        }
    }
    let n = num_classes * n_per_class;
    let mut features = Array2::<f64>::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        let k = i % num_classes;
        for (j, x) in row.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = means[[k, j]] + z;
        }
        labels.push(k);
    }
    let name = format!("gmm-c{num_classes}-d{dim}-n{n_per_class}-s{seed}");
    Dataset::new(name, features, labels, num_classes, (0..n).collect())
}

/// Repeats every row `factor` times and shuffles the result.
///
/// The output's duplicate groups are the input's groups, so copies of one
/// original row share an id.
pub fn duplicate_dataset(ds: &Dataset, factor: usize, seed: u64) -> Result<Dataset> {
    if factor < 2 {
        return Err(Error::invalid("factor", format!("must be >= 2, got {factor}")));
    }
    let mut order: Vec<usize> = (0..ds.len()).flat_map(|i| std::iter::repeat_n(i, factor)).collect();
    order.shuffle(&mut seed::rng(seed));
    Ok(ds.subset(&order, format!("{}-x{factor}", ds.name)))
}

/// Parameters of the initial labeled pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub initial_labeled: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stratified: bool,
}

/// Disjoint labeled (L) and unlabeled (U) index sets covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolPartition {
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
    n: usize,
}

impl PoolPartition {
    pub fn new(labeled: Vec<usize>, unlabeled: Vec<usize>, n: usize) -> Result<Self> {
        let p = Self { labeled, unlabeled, n };
        p.check()?;
        Ok(p)
    }

    pub fn labeled(&self) -> &[usize] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[usize] {
        &self.unlabeled
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Verifies L ∩ U = ∅ and L ∪ U = {0..n-1}.
    pub fn check(&self) -> Result<()> {
        if self.labeled.len() + self.unlabeled.len() != self.n {
            return Err(Error::InvalidDataset(format!(
                "partition sizes {} + {} != {}",
                self.labeled.len(),
                self.unlabeled.len(),
                self.n
            )));
        }
        let mut seen = vec![false; self.n];
        for &i in self.labeled.iter().chain(&self.unlabeled) {
            if i >= self.n || seen[i] {
                return Err(Error::InvalidDataset(format!(
                    "index {i} out of range or repeated in partition"
                )));
            }
            seen[i] = true;
        }
        Ok(())
    }

    /// Moves the samples at unlabeled `positions` into L, in the given order.
    ///
    /// The remaining unlabeled indices keep their relative order.
    pub fn label_positions(&mut self, positions: &[usize]) -> Result<Vec<usize>> {
        let mut take = vec![false; self.unlabeled.len()];
        for &p in positions {
            if p >= take.len() || take[p] {
                return Err(Error::invalid(
                    "positions",
                    format!("position {p} out of range or repeated"),
                ));
            }
            take[p] = true;
        }
        let moved: Vec<usize> = positions.iter().map(|&p| self.unlabeled[p]).collect();
        self.labeled.extend_from_slice(&moved);
        let mut k = 0;
        self.unlabeled.retain(|_| {
            let keep = !take[k];
            k += 1;
            keep
        });
        debug_assert!(self.check().is_ok());
        Ok(moved)
    }
}

/// Draws the initial labeled pool. L and U are returned in ascending index order.
pub fn initial_split(ds: &Dataset, spec: &SplitSpec) -> Result<PoolPartition> {
    let n = ds.len();
    if spec.initial_labeled > n {
        return Err(Error::invalid(
            "initial_labeled",
            format!("{} exceeds dataset size {n}", spec.initial_labeled),
        ));
    }
    let mut rng = seed::rng(spec.seed);
    let mut chosen = vec![false; n];
    if spec.stratified {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
        for (i, &y) in ds.labels().iter().enumerate() {
            by_class[y].push(i);
        }
        for members in &mut by_class {
            members.shuffle(&mut rng);
        }
        let quotas = stratified_quotas(
            &by_class.iter().map(Vec::len).collect::<Vec<_>>(),
            spec.initial_labeled,
            &mut rng,
        );
        for (members, q) in by_class.iter().zip(quotas) {
            for &i in &members[..q] {
                chosen[i] = true;
            }
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for &i in &order[..spec.initial_labeled] {
            chosen[i] = true;
        }
    }
    let (labeled, unlabeled): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| chosen[i]);
    PoolPartition::new(labeled, unlabeled, n)
}

/// Water-fills `total` picks across classes with the given capacities so that
/// counts differ by at most one wherever capacity allows.
fn stratified_quotas(capacity: &[usize], total: usize, rng: &mut seed::Rng) -> Vec<usize> {
    let mut quotas = vec![0; capacity.len()];
    let mut remaining = total;
    while remaining > 0 {
        let open: Vec<usize> = (0..capacity.len()).filter(|&k| quotas[k] < capacity[k]).collect();
        if open.is_empty() {
            break;
        }
        let level = open.iter().map(|&k| quotas[k]).min().unwrap_or(0);
        let mut lowest: Vec<usize> = open.into_iter().filter(|&k| quotas[k] == level).collect();
        if lowest.len() > remaining {
            lowest.shuffle(rng);
            lowest.truncate(remaining);
        }
        remaining -= lowest.len();
        for k in lowest {
            quotas[k] += 1;
        }
    }
    quotas
}

/// Splits a dataset into (train, test) with roughly `test_fraction` of the rows
/// in test. Whole duplicate groups go to one side so copies never leak across.
pub fn train_test_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction <= 0.0 {
        return Err(Error::invalid(
            "test_fraction",
            format!("must be in (0, 1), got {test_fraction}"),
        ));
    }
    let mut members: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut groups: Vec<usize> = Vec::new();
    for (i, &g) in ds.dup_group().iter().enumerate() {
        members
            .entry(g)
            .or_insert_with(|| {
                groups.push(g);
                Vec::new()
            })
            .push(i);
    }
    groups.shuffle(&mut seed::rng(seed));
    let target = (test_fraction * ds.len() as f64).round() as usize;
    let mut in_test = vec![false; ds.len()];
    let mut taken = 0;
    for g in &groups {
        if taken >= target {
            break;
        }
        for &i in &members[g] {
            in_test[i] = true;
            taken += 1;
        }
    }
    let (test_idx, train_idx): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| in_test[i]);
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "test fraction {test_fraction} leaves an empty side for {} samples",
            ds.len()
        )));
    }
    Ok((
        ds.subset(&train_idx, format!("{}-train", ds.name)),
        ds.subset(&test_idx, format!("{}-test", ds.name)),
    ))
}
