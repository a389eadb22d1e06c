//! Weighted voting over the nearest centroids, and the nearest-class-mean and
//! 1-nearest-neighbour classifiers it reduces to in its limits.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::agg_var::ModelStore;
use crate::error::{Error, Result};
use crate::feature::{check_dim, distance, ClassId, Dataset, FeatureVector};

/// Distances below this count as this when taking the inverse, so an exact
/// match dominates the vote without producing an infinite score.
pub const DISTANCE_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparams {
    /// Clustering threshold `D`.
    pub distance_threshold: f64,
    /// Number of globally nearest centroids that vote.
    pub n_vote: usize,
}

impl Hyperparams {
    pub fn new(distance_threshold: f64, n_vote: usize) -> Result<Self> {
        let h = Self { distance_threshold, n_vote };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance_threshold.is_finite() && self.distance_threshold >= 0.0) {
            return Err(Error::InvalidParameter("distance threshold must be finite and >= 0".into()));
        }
        if self.n_vote == 0 {
            return Err(Error::InvalidParameter("n_vote must be >= 1".into()));
        }
        Ok(())
    }
}

/// Prediction weight per class. Only classes that received a vote appear.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreMap(BTreeMap<ClassId, f64>);

impl ScoreMap {
    pub fn get(&self, class: ClassId) -> Option<f64> {
        self.0.get(&class).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, f64)> + '_ {
        self.0.iter().map(|(&c, &s)| (c, s))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.values().sum()
    }

    /// Highest score; the lowest class id wins ties.
    pub fn best(&self) -> Option<ClassId> {
        let mut best: Option<(ClassId, f64)> = None;
        for (&c, &s) in &self.0 {
            match best {
                Some((_, b)) if s <= b => {}
                _ => best = Some((c, s)),
            }
        }
        best.map(|(c, _)| c)
    }
}

/// Sums `1 / max(dist, DISTANCE_FLOOR)` of the `n_vote` nearest centroids
/// (over all classes) into their owning classes. Equidistant centroids are
/// ranked by class id, then centroid index.
pub fn predict_scores(store: &ModelStore, x: &FeatureVector, n_vote: usize) -> Result<ScoreMap> {
    if store.is_empty() {
        return Err(Error::Empty("model store"));
    }
    if n_vote == 0 {
        return Err(Error::InvalidParameter("n_vote must be >= 1".into()));
    }
    check_dim(store.dim(), x.dim())?;
    let mut ranked: Vec<(f64, ClassId, usize)> =
        store.centroids().map(|(class, i, c)| (distance(c.mean(), x.as_slice()), class, i)).collect();
    let m = n_vote.min(ranked.len());
    let by_rank = |a: &(f64, ClassId, usize), b: &(f64, ClassId, usize)| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    };
    if m < ranked.len() {
        ranked.select_nth_unstable_by(m - 1, by_rank);
        ranked.truncate(m);
    }
    ranked.sort_unstable_by(by_rank);

    let mut scores = BTreeMap::new();
    for (d, class, _) in ranked {
        *scores.entry(class).or_insert(0.0) += 1.0 / d.max(DISTANCE_FLOOR);
    }
    Ok(ScoreMap(scores))
}

pub fn predict(store: &ModelStore, x: &FeatureVector, n_vote: usize) -> Result<ClassId> {
    let scores = predict_scores(store, x, n_vote)?;
    Ok(scores.best().expect("at least one centroid votes"))
}

/// Nearest class mean; the lowest class id wins ties.
pub fn predict_ncm(means: &BTreeMap<ClassId, FeatureVector>, x: &FeatureVector) -> Result<ClassId> {
    let mut best: Option<(f64, ClassId)> = None;
    for (&class, mean) in means {
        check_dim(mean.dim(), x.dim())?;
        let d = distance(mean.as_slice(), x.as_slice());
        if best.is_none_or(|(b, _)| d < b) {
            best = Some((d, class));
        }
    }
    best.map(|(_, c)| c).ok_or(Error::Empty("class means"))
}

/// Label of the nearest training example; ties go to the lowest label, then
/// the earliest example.
pub fn predict_1nn(train: &Dataset, x: &FeatureVector) -> Result<ClassId> {
    check_dim(train.dim(), x.dim())?;
    let mut best: Option<(f64, ClassId)> = None;
    for ex in train.examples() {
        let d = distance(ex.vector.as_slice(), x.as_slice());
        let better = match best {
            None => true,
            Some((b, label)) => d < b || (d == b && ex.label < label),
        };
        if better {
            best = Some((d, ex.label));
        }
    }
    best.map(|(_, c)| c).ok_or(Error::Empty("training set"))
}

/// Arithmetic mean of each class's vectors, summed then divided.
pub fn class_means(ds: &Dataset) -> BTreeMap<ClassId, FeatureVector> {
    ds.by_class()
        .into_iter()
        .map(|(class, vs)| {
            let mut sum = alloc::vec![0.0; ds.dim()];
            for v in &vs {
                for (s, x) in sum.iter_mut().zip(v.as_slice()) {
                    *s += x;
                }
            }
            let n = vs.len() as f64;
            let mean = sum.into_iter().map(|s| s / n).collect();
            (class, FeatureVector::new(mean).expect("mean of finite vectors"))
        })
        .collect()
}
