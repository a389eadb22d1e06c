//! Monte-Carlo table-cleaning task.
//!
//! Each trial puts `n_objects` objects on a table, `n_targets` of them from
//! the class to be cleared and the rest drawn uniformly from the other
//! classes in the held-out pool. An object is detected with probability
//! `1 - p_detect_miss`; a detected object is classified with the centroid
//! classifier on a held-out feature vector of its class; a detected target
//! classified correctly is moved, failing with probability `p_move_fail`.
//!
//! Errors are stage-conditional: classification error counts detected objects
//! only, movement error counts attempted moves only.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::agg_var::ModelStore;
use crate::classifier::predict;
use crate::error::{Error, Result};
use crate::feature::{ClassId, Dataset, FeatureVector};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct CleaningTrialSpec {
    pub n_objects: usize,
    pub n_targets: usize,
    pub target_class: ClassId,
    pub p_detect_miss: f64,
    pub p_move_fail: f64,
    pub seed: u64,
}

impl CleaningTrialSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_targets > self.n_objects {
            return Err(Error::InvalidParameter("more targets than objects".into()));
        }
        for p in [self.p_detect_miss, self.p_move_fail] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter("probabilities must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectOutcome {
    pub class: ClassId,
    pub is_target: bool,
    pub detected: bool,
    /// `None` when not detected.
    pub predicted: Option<ClassId>,
    pub move_attempted: bool,
    pub moved: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrialOutcome {
    pub objects: Vec<ObjectOutcome>,
}

/// Additive event counts; merging is order-independent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StageCounts {
    pub objects: u64,
    pub detected: u64,
    pub misclassified: u64,
    pub move_attempts: u64,
    pub move_failures: u64,
}

impl StageCounts {
    pub fn record(&mut self, trial: &TrialOutcome) {
        for o in &trial.objects {
            self.objects += 1;
            if !o.detected {
                continue;
            }
            self.detected += 1;
            if o.predicted != Some(o.class) {
                self.misclassified += 1;
            }
            if o.move_attempted {
                self.move_attempts += 1;
                if !o.moved {
                    self.move_failures += 1;
                }
            }
        }
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            objects: self.objects + other.objects,
            detected: self.detected + other.detected,
            misclassified: self.misclassified + other.misclassified,
            move_attempts: self.move_attempts + other.move_attempts,
            move_failures: self.move_failures + other.move_failures,
        }
    }

    pub fn breakdown(&self) -> ErrorBreakdown {
        let pct = |num: u64, den: u64| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
        ErrorBreakdown {
            detection_error: pct(self.objects - self.detected, self.objects),
            classification_error: pct(self.misclassified, self.detected),
            movement_error: pct(self.move_failures, self.move_attempts),
        }
    }
}

/// Percentages in `[0, 100]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorBreakdown {
    pub detection_error: f64,
    pub classification_error: f64,
    pub movement_error: f64,
}

/// Held-out vectors grouped by class, the source of every classified object.
#[derive(Clone, Debug)]
pub struct HeldOutPool<'a> {
    by_class: BTreeMap<ClassId, Vec<&'a FeatureVector>>,
}

impl<'a> HeldOutPool<'a> {
    pub fn new(pool: &'a Dataset) -> Self {
        Self { by_class: pool.by_class() }
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.by_class.keys().copied()
    }

    pub fn vectors(&self, class: ClassId) -> Option<&[&'a FeatureVector]> {
        self.by_class.get(&class).map(Vec::as_slice)
    }
}

fn other_classes(spec: &CleaningTrialSpec, pool: &HeldOutPool<'_>) -> Result<Vec<ClassId>> {
    if pool.vectors(spec.target_class).is_none() {
        return Err(Error::UnknownClass(spec.target_class));
    }
    let others: Vec<ClassId> = pool.classes().filter(|&c| c != spec.target_class).collect();
    if others.is_empty() && spec.n_objects > spec.n_targets {
        return Err(Error::Empty("non-target classes in held-out pool"));
    }
    Ok(others)
}

fn trial_with(
    spec: &CleaningTrialSpec,
    store: &ModelStore,
    pool: &HeldOutPool<'_>,
    others: &[ClassId],
    n_vote: usize,
    trial_index: u64,
) -> Result<TrialOutcome> {
    let mut rng = rng::rng_from_seed(rng::derive_seed(spec.seed, trial_index));
    let mut objects = Vec::with_capacity(spec.n_objects);
    for k in 0..spec.n_objects {
        let is_target = k < spec.n_targets;
        let class = if is_target { spec.target_class } else { others[rng::index(&mut rng, others.len())] };
        let vectors = pool.vectors(class).ok_or(Error::UnknownClass(class))?;
        // fixed draw order per object: vector, detection, movement
        let x = vectors[rng::index(&mut rng, vectors.len())];
        let detected = rng::uniform01(&mut rng) >= spec.p_detect_miss;
        let move_ok = rng::uniform01(&mut rng) >= spec.p_move_fail;

        let predicted = if detected { Some(predict(store, x, n_vote)?) } else { None };
        let move_attempted = is_target && predicted == Some(class);
        objects.push(ObjectOutcome {
            class,
            is_target,
            detected,
            predicted,
            move_attempted,
            moved: move_attempted && move_ok,
        });
    }
    Ok(TrialOutcome { objects })
}

/// One trial, seeded by `derive_seed(spec.seed, trial_index)` so trials can
/// run in any order or in parallel.
pub fn run_trial(
    spec: &CleaningTrialSpec,
    store: &ModelStore,
    pool: &Dataset,
    n_vote: usize,
    trial_index: u64,
) -> Result<TrialOutcome> {
    spec.validate()?;
    let pool = HeldOutPool::new(pool);
    let others = other_classes(spec, &pool)?;
    trial_with(spec, store, &pool, &others, n_vote, trial_index)
}

/// Counts over trials `range`, for callers that split a campaign into chunks.
pub fn run_trials(
    spec: &CleaningTrialSpec,
    store: &ModelStore,
    pool: &HeldOutPool<'_>,
    n_vote: usize,
    range: core::ops::Range<u64>,
) -> Result<StageCounts> {
    spec.validate()?;
    let others = other_classes(spec, pool)?;
    let mut counts = StageCounts::default();
    for i in range {
        counts.record(&trial_with(spec, store, pool, &others, n_vote, i)?);
    }
    Ok(counts)
}

pub fn run_campaign(
    spec: &CleaningTrialSpec,
    store: &ModelStore,
    pool: &Dataset,
    n_vote: usize,
    n_trials: u64,
) -> Result<(StageCounts, ErrorBreakdown)> {
    if n_trials < 1 {
        return Err(Error::InvalidParameter("at least one trial is required".into()));
    }
    let counts = run_trials(spec, store, &HeldOutPool::new(pool), n_vote, 0..n_trials)?;
    Ok((counts, counts.breakdown()))
}
