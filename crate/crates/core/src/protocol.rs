//! Class-incremental evaluation protocol.
//!
//! A run fixes a class order and a few-shot train/test split from its plan
//! seed. Classes then arrive a few at a time; after each increment the
//! learner is scored on the test examples of every class seen so far. The
//! centroid learner tunes its threshold and vote count per increment by
//! cross-validation over the new classes only, with earlier centroids frozen.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::agg_var::ModelStore;
use crate::classifier::{predict, Hyperparams};
use crate::error::{Error, Result};
use crate::feature::{check_dim, distance, split_shots, ClassId, Dataset, FeatureVector, LabelMap};
use crate::linear::{run_flb_increment, run_ft_increment, LinearHead, TrainConfig};
use crate::rng;

const SPLIT_STREAM: u64 = 1;
const ORDER_STREAM: u64 = 2;

/// Used when an increment cannot be tuned and nothing was tuned before:
/// every example its own centroid, one voter.
pub const DEFAULT_HYPERPARAMS: Hyperparams = Hyperparams { distance_threshold: 0.0, n_vote: 1 };

#[derive(Clone, Debug, PartialEq)]
pub struct IncrementPlan {
    pub classes_per_increment: usize,
    pub shots: usize,
    pub class_order: Vec<ClassId>,
    pub seed: u64,
}

impl IncrementPlan {
    /// Class order is a seeded shuffle of every class in `labels`.
    pub fn randomized(labels: &LabelMap, classes_per_increment: usize, shots: usize, seed: u64) -> Result<Self> {
        let mut class_order: Vec<ClassId> = labels.ids().collect();
        let mut order_rng = rng::rng_from_seed(rng::derive_seed(seed, ORDER_STREAM));
        rng::shuffle(&mut order_rng, &mut class_order);
        let plan = Self { classes_per_increment, shots, class_order, seed };
        plan.validate(labels)?;
        Ok(plan)
    }

    pub fn validate(&self, labels: &LabelMap) -> Result<()> {
        if self.classes_per_increment == 0 || self.shots == 0 {
            return Err(Error::InvalidParameter("classes per increment and shots must be >= 1".into()));
        }
        let distinct: BTreeSet<ClassId> = self.class_order.iter().copied().collect();
        let all: BTreeSet<ClassId> = labels.ids().collect();
        if distinct.len() != self.class_order.len() || distinct != all {
            return Err(Error::InvalidParameter("class order must list every class exactly once".into()));
        }
        Ok(())
    }

    pub fn increments(&self) -> core::slice::Chunks<'_, ClassId> {
        self.class_order.chunks(self.classes_per_increment)
    }

    pub fn n_increments(&self) -> usize {
        self.class_order.len().div_ceil(self.classes_per_increment)
    }

    /// The run's train/test split. Depends on the seed and shot count only,
    /// so every method and increment size sees the same split.
    pub fn split(&self, ds: &Dataset) -> Result<(Dataset, Dataset)> {
        split_shots(ds, self.shots, rng::derive_seed(self.seed, SPLIT_STREAM))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IncrementMetrics {
    /// 1-based.
    pub increment: usize,
    pub n_classes_seen: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionState {
    pub store: ModelStore,
    pub learned_classes: Vec<ClassId>,
    pub hyper_history: Vec<Hyperparams>,
    pub metrics: Vec<IncrementMetrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub per_increment_mean: Vec<f64>,
    /// Sample standard deviation; zero for a single run.
    pub per_increment_std: Vec<f64>,
    pub average_incremental_accuracy: f64,
}

/// How the tuning grid is built for each increment.
#[derive(Clone, Debug, PartialEq)]
pub enum GridSpec {
    /// The same candidates every increment.
    Fixed(Vec<Hyperparams>),
    /// Thresholds at the given quantiles (in `[0, 1]`) of the pairwise
    /// distances within each new class, crossed with `n_votes`.
    Quantiles { quantiles: Vec<f64>, n_votes: Vec<usize> },
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::Quantiles { quantiles: alloc::vec![0.10, 0.25, 0.50, 0.75, 0.90], n_votes: alloc::vec![1, 3, 5, 10] }
    }
}

impl GridSpec {
    /// Candidates for an increment. Empty when quantiles are requested but no
    /// new class has two examples.
    pub fn resolve<V: AsRef<[FeatureVector]>>(
        &self,
        new_class_data: &BTreeMap<ClassId, V>,
    ) -> Result<Vec<Hyperparams>> {
        match self {
            Self::Fixed(points) => {
                for p in points {
                    p.validate()?;
                }
                Ok(points.clone())
            }
            Self::Quantiles { quantiles, n_votes } => {
                if quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
                    return Err(Error::InvalidParameter("quantiles must lie in [0, 1]".into()));
                }
                let mut dists = intra_class_distances(new_class_data);
                if dists.is_empty() {
                    return Ok(Vec::new());
                }
                dists.sort_by(f64::total_cmp);
                let mut thresholds: Vec<f64> = quantiles.iter().map(|&q| quantile(&dists, q)).collect();
                thresholds.sort_by(f64::total_cmp);
                thresholds.dedup();
                let mut points = Vec::with_capacity(thresholds.len() * n_votes.len());
                for &d in &thresholds {
                    for &n in n_votes {
                        points.push(Hyperparams::new(d, n)?);
                    }
                }
                Ok(points)
            }
        }
    }
}

/// Pairwise distances within each class, pooled over classes.
pub fn intra_class_distances<V: AsRef<[FeatureVector]>>(per_class: &BTreeMap<ClassId, V>) -> Vec<f64> {
    let mut out = Vec::new();
    for xs in per_class.values() {
        let xs = xs.as_ref();
        for (i, a) in xs.iter().enumerate() {
            for b in &xs[i + 1..] {
                out.push(distance(a.as_slice(), b.as_slice()));
            }
        }
    }
    out
}

/// Linear interpolation between order statistics of sorted, non-empty data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Picks the grid point with the best mean k-fold accuracy on the new
/// classes, classifying each held-out fold against the frozen centroids in
/// `store` plus centroids clustered from the remaining folds.
///
/// Example `i` of a class belongs to fold `i % k`. `k` is `folds` clamped to
/// `[2, smallest new class]`; with fewer than two examples in some new class
/// nothing can be held out and `fallback` is returned. Ties go to the smaller
/// threshold, then the smaller vote count.
pub fn tune_hyperparams<V: AsRef<[FeatureVector]>>(
    store: &ModelStore,
    new_class_data: &BTreeMap<ClassId, V>,
    grid: &[Hyperparams],
    folds: usize,
    fallback: Hyperparams,
) -> Result<Hyperparams> {
    if new_class_data.is_empty() {
        return Err(Error::Empty("new class data"));
    }
    for xs in new_class_data.values() {
        for x in xs.as_ref() {
            check_dim(store.dim(), x.dim())?;
        }
    }
    let smallest = new_class_data.values().map(|v| v.as_ref().len()).min().unwrap_or(0);
    if smallest < 2 {
        return Ok(fallback);
    }
    if grid.is_empty() {
        return Err(Error::Empty("hyperparameter grid"));
    }
    for p in grid {
        p.validate()?;
    }
    let k = folds.max(2).min(smallest);

    // clustering depends on the threshold only; score every vote count on it
    let mut thresholds: Vec<f64> = grid.iter().map(|p| p.distance_threshold).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut fold_acc: Vec<f64> = alloc::vec![0.0; grid.len()];
    for &d in &thresholds {
        for fold in 0..k {
            let mut fold_store = store.clone();
            let train: BTreeMap<ClassId, Vec<FeatureVector>> = new_class_data
                .iter()
                .map(|(&c, xs)| {
                    let kept =
                        xs.as_ref().iter().enumerate().filter(|(i, _)| i % k != fold).map(|(_, x)| x.clone()).collect();
                    (c, kept)
                })
                .collect();
            fold_store.learn_increment(&train, d)?;
            for (gi, p) in grid.iter().enumerate() {
                if p.distance_threshold != d {
                    continue;
                }
                let mut correct = 0usize;
                let mut total = 0usize;
                for (&c, xs) in new_class_data {
                    for x in xs.as_ref().iter().skip(fold).step_by(k) {
                        total += 1;
                        if predict(&fold_store, x, p.n_vote)? == c {
                            correct += 1;
                        }
                    }
                }
                fold_acc[gi] += correct as f64 / total as f64;
            }
        }
    }
    let mut best = 0;
    for gi in 1..grid.len() {
        let (a, b) = (fold_acc[gi], fold_acc[best]);
        let (p, q) = (&grid[gi], &grid[best]);
        let better = a > b
            || (a == b
                && (p.distance_threshold < q.distance_threshold
                    || (p.distance_threshold == q.distance_threshold && p.n_vote < q.n_vote)));
        if better {
            best = gi;
        }
    }
    Ok(grid[best])
}

fn vectors_by_class(ds: &Dataset) -> BTreeMap<ClassId, Vec<FeatureVector>> {
    ds.by_class().into_iter().map(|(c, vs)| (c, vs.into_iter().cloned().collect())).collect()
}

/// Fraction of test examples of `seen` classes that `classify` gets right.
fn accuracy_on_seen<F>(test: &Dataset, seen: &BTreeSet<ClassId>, mut classify: F) -> Result<f64>
where
    F: FnMut(&FeatureVector) -> Result<ClassId>,
{
    let mut correct = 0usize;
    let mut total = 0usize;
    for ex in test.examples().iter().filter(|ex| seen.contains(&ex.label)) {
        total += 1;
        if classify(&ex.vector)? == ex.label {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(Error::Empty("test examples of seen classes"));
    }
    Ok(correct as f64 / total as f64)
}

/// Runs the centroid learner through every increment of `plan`.
///
/// `folds` defaults to `min(5, shots)`.
pub fn run_cbcl_session(
    ds: &Dataset,
    plan: &IncrementPlan,
    grid: &GridSpec,
    folds: Option<usize>,
) -> Result<SessionState> {
    plan.validate(ds.labels())?;
    let (train, test) = plan.split(ds)?;
    let mut train_by_class = vectors_by_class(&train);
    let folds = folds.unwrap_or_else(|| plan.shots.min(5));

    let mut state = SessionState {
        store: ModelStore::new(ds.dim()),
        learned_classes: Vec::new(),
        hyper_history: Vec::new(),
        metrics: Vec::new(),
    };
    let mut seen = BTreeSet::new();
    for (i, classes) in plan.increments().enumerate() {
        let new_data: BTreeMap<ClassId, Vec<FeatureVector>> =
            classes.iter().map(|c| (*c, train_by_class.remove(c).unwrap_or_default())).collect();
        let fallback = state.hyper_history.last().copied().unwrap_or(DEFAULT_HYPERPARAMS);
        let candidates = grid.resolve(&new_data)?;
        let chosen = if candidates.is_empty() {
            fallback
        } else {
            tune_hyperparams(&state.store, &new_data, &candidates, folds, fallback)?
        };
        state.store.learn_increment(&new_data, chosen.distance_threshold)?;
        state.learned_classes.extend_from_slice(classes);
        seen.extend(classes.iter().copied());
        state.hyper_history.push(chosen);

        let store = &state.store;
        let accuracy = accuracy_on_seen(&test, &seen, |x| predict(store, x, chosen.n_vote))?;
        state.metrics.push(IncrementMetrics { increment: i + 1, n_classes_seen: seen.len(), accuracy });
    }
    Ok(state)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineMethod {
    /// Adapts the previous head on the new increment's data only.
    FineTuning,
    /// Retrains a fresh head on all training data seen so far.
    BatchUpperBound,
}

/// Runs a linear baseline over the same schedule and split as
/// [`run_cbcl_session`]. Increment `i` trains with seed
/// `derive_seed(cfg.seed, i)`.
pub fn run_baseline_session(
    ds: &Dataset,
    plan: &IncrementPlan,
    method: BaselineMethod,
    cfg: &TrainConfig,
) -> Result<Vec<IncrementMetrics>> {
    plan.validate(ds.labels())?;
    cfg.validate()?;
    let (train, test) = plan.split(ds)?;
    let mut head = LinearHead::zeros(ds.dim(), &[])?;
    let mut seen_train = Dataset::new(ds.dim(), ds.labels().clone(), Vec::new())?;
    let mut learned: Vec<ClassId> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut metrics = Vec::with_capacity(plan.n_increments());
    for (i, classes) in plan.increments().enumerate() {
        let new_data = train.restricted_to(classes);
        let inc_cfg = TrainConfig { seed: rng::derive_seed(cfg.seed, i as u64), ..cfg.clone() };
        learned.extend_from_slice(classes);
        seen.extend(classes.iter().copied());
        head = match method {
            BaselineMethod::BatchUpperBound => {
                seen_train = seen_train.concat(&new_data)?;
                run_flb_increment(&seen_train, &learned, &inc_cfg)?
            }
            BaselineMethod::FineTuning => run_ft_increment(&head, &new_data, classes, &inc_cfg)?,
        };
        let accuracy = accuracy_on_seen(&test, &seen, |x| head.predict(x))?;
        metrics.push(IncrementMetrics { increment: i + 1, n_classes_seen: seen.len(), accuracy });
    }
    Ok(metrics)
}

fn sorted_sum(mut values: Vec<f64>) -> f64 {
    // order-independent result regardless of how runs were listed
    values.sort_by(f64::total_cmp);
    values.into_iter().sum()
}

pub fn average_incremental_accuracy(metrics: &[IncrementMetrics]) -> f64 {
    if metrics.is_empty() {
        return 0.0;
    }
    metrics.iter().map(|m| m.accuracy).sum::<f64>() / metrics.len() as f64
}

/// Per-increment mean and sample standard deviation across runs, and the
/// average incremental accuracy (per-run mean over increments, averaged over
/// runs). Invariant under reordering of `runs`.
pub fn aggregate_runs(runs: &[Vec<IncrementMetrics>]) -> Result<RunSummary> {
    let first = runs.first().ok_or(Error::Empty("runs"))?;
    let n_inc = first.len();
    if n_inc == 0 {
        return Err(Error::Empty("increments"));
    }
    if runs.iter().any(|r| r.len() != n_inc) {
        return Err(Error::InvalidParameter("runs have different increment counts".into()));
    }
    let n = runs.len() as f64;
    let mut per_increment_mean = Vec::with_capacity(n_inc);
    let mut per_increment_std = Vec::with_capacity(n_inc);
    for i in 0..n_inc {
        let values: Vec<f64> = runs.iter().map(|r| r[i].accuracy).collect();
        let mean = sorted_sum(values.clone()) / n;
        let std = if runs.len() > 1 {
            let ss = sorted_sum(values.iter().map(|v| (v - mean) * (v - mean)).collect());
            libm::sqrt(ss / (n - 1.0))
        } else {
            0.0
        };
        per_increment_mean.push(mean);
        per_increment_std.push(std);
    }
    let per_run: Vec<f64> = runs.iter().map(|r| average_incremental_accuracy(r)).collect();
    Ok(RunSummary { per_increment_mean, per_increment_std, average_incremental_accuracy: sorted_sum(per_run) / n })
}
