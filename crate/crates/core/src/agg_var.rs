//! Agg-Var clustering.
//!
//! Each class is clustered on its own, streaming over its examples in order:
//! the first example seeds a centroid; every later example either joins its
//! nearest centroid (when strictly closer than the distance threshold) or
//! seeds a new one. A centroid's mean is the running mean of everything it
//! absorbed, weighted by its assignment count.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::feature::{check_dim, distance, ClassId, FeatureVector};

#[derive(Clone, Debug, PartialEq)]
pub struct Centroid {
    mean: Vec<f64>,
    weight: u32,
}

impl Centroid {
    fn seed(x: &[f64]) -> Self {
        Self { mean: x.to_vec(), weight: 1 }
    }

    /// Rebuilds a centroid, e.g. from a model file.
    pub fn from_parts(mean: Vec<f64>, weight: u32) -> Result<Self> {
        if weight == 0 {
            return Err(Error::InvalidParameter("centroid weight must be >= 1".into()));
        }
        let mean = FeatureVector::new(mean)?.into_inner();
        Ok(Self { mean, weight })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn weight(&self) -> u32 {
        self.weight
    }

    fn absorb(&mut self, x: &[f64]) {
        let w = f64::from(self.weight);
        for (m, &v) in self.mean.iter_mut().zip(x) {
            *m = (w * *m + v) / (w + 1.0);
        }
        self.weight += 1;
    }
}

/// The centroids learned for one class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassModel {
    class: ClassId,
    dim: usize,
    centroids: Vec<Centroid>,
    distance_threshold: f64,
}

fn check_threshold(d: f64) -> Result<()> {
    if d.is_finite() && d >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(alloc::format!("distance threshold must be finite and >= 0, got {d}")))
    }
}

impl ClassModel {
    pub fn from_parts(class: ClassId, centroids: Vec<Centroid>, distance_threshold: f64) -> Result<Self> {
        check_threshold(distance_threshold)?;
        let dim = centroids.first().ok_or(Error::Empty("class model centroids"))?.mean.len();
        for c in &centroids {
            check_dim(dim, c.mean.len())?;
        }
        Ok(Self { class, dim, centroids, distance_threshold })
    }

    pub fn class(&self) -> ClassId {
        self.class
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroids(&self) -> &[Centroid] {
        &self.centroids
    }

    pub fn distance_threshold(&self) -> f64 {
        self.distance_threshold
    }

    /// Threshold used for examples processed from now on.
    pub fn set_distance_threshold(&mut self, d: f64) -> Result<()> {
        check_threshold(d)?;
        self.distance_threshold = d;
        Ok(())
    }

    /// Total number of examples absorbed.
    pub fn examples_seen(&self) -> u64 {
        self.centroids.iter().map(|c| u64::from(c.weight)).sum()
    }

    /// Returns the index of the centroid `x` was assigned to.
    fn push(&mut self, x: &[f64]) -> usize {
        // lowest index wins ties
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, c) in self.centroids.iter().enumerate() {
            let d = distance(&c.mean, x);
            if d < best_dist {
                best = i;
                best_dist = d;
            }
        }
        if best_dist < self.distance_threshold {
            self.centroids[best].absorb(x);
            best
        } else {
            self.centroids.push(Centroid::seed(x));
            self.centroids.len() - 1
        }
    }

    /// Streams `more` into the model. On a dimension error the model is left
    /// untouched.
    pub fn extend<'a, I>(&mut self, more: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a FeatureVector>,
        I::IntoIter: Clone,
    {
        let more = more.into_iter();
        for x in more.clone() {
            check_dim(self.dim, x.dim())?;
        }
        for x in more {
            self.push(x.as_slice());
        }
        Ok(())
    }

    /// Like [`ClassModel::extend`] for a single example, reporting the
    /// centroid it landed in.
    pub fn assign(&mut self, x: &FeatureVector) -> Result<usize> {
        check_dim(self.dim, x.dim())?;
        Ok(self.push(x.as_slice()))
    }
}

/// Clusters one class's examples in the given order.
pub fn cluster_class<'a, I>(examples: I, class: ClassId, distance_threshold: f64) -> Result<ClassModel>
where
    I: IntoIterator<Item = &'a FeatureVector>,
    I::IntoIter: Clone,
{
    check_threshold(distance_threshold)?;
    let mut iter = examples.into_iter();
    let first = iter.next().ok_or(Error::Empty("class examples"))?;
    let mut model = ClassModel {
        class,
        dim: first.dim(),
        centroids: alloc::vec![Centroid::seed(first.as_slice())],
        distance_threshold,
    };
    model.extend(iter)?;
    Ok(model)
}

/// Resumes clustering of `model` on `more` with the model's own threshold.
pub fn update_class<'a, I>(mut model: ClassModel, more: I) -> Result<ClassModel>
where
    I: IntoIterator<Item = &'a FeatureVector>,
    I::IntoIter: Clone,
{
    model.extend(more)?;
    Ok(model)
}

/// Every learned class's centroids. Classes never share state.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelStore {
    dim: usize,
    models: BTreeMap<ClassId, ClassModel>,
}

impl ModelStore {
    pub fn new(dim: usize) -> Self {
        Self { dim, models: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn get(&self, class: ClassId) -> Option<&ClassModel> {
        self.models.get(&class)
    }

    pub fn models(&self) -> impl Iterator<Item = &ClassModel> + '_ {
        self.models.values()
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.models.keys().copied()
    }

    pub fn total_centroids(&self) -> usize {
        self.models.values().map(|m| m.centroids.len()).sum()
    }

    /// `(class, centroid index, centroid)` in ascending class then index order.
    pub fn centroids(&self) -> impl Iterator<Item = (ClassId, usize, &Centroid)> + '_ {
        self.models.values().flat_map(|m| m.centroids.iter().enumerate().map(move |(i, c)| (m.class, i, c)))
    }

    /// Adds a complete model for a class not yet in the store.
    pub fn insert(&mut self, model: ClassModel) -> Result<()> {
        check_dim(self.dim, model.dim)?;
        if self.models.contains_key(&model.class) {
            return Err(Error::DuplicateClass(model.class));
        }
        self.models.insert(model.class, model);
        Ok(())
    }

    /// Clusters each class in `per_class` independently. New classes get a
    /// fresh model; known classes resume with `distance_threshold` applied to
    /// the new examples only. Nothing changes if any vector has the wrong
    /// dimension.
    pub fn learn_increment<V>(&mut self, per_class: &BTreeMap<ClassId, V>, distance_threshold: f64) -> Result<()>
    where
        V: AsRef<[FeatureVector]>,
    {
        check_threshold(distance_threshold)?;
        for examples in per_class.values() {
            for x in examples.as_ref() {
                check_dim(self.dim, x.dim())?;
            }
        }
        for (&class, examples) in per_class {
            let examples = examples.as_ref();
            match self.models.get_mut(&class) {
                Some(model) => {
                    model.distance_threshold = distance_threshold;
                    model.extend(examples)?;
                }
                None if examples.is_empty() => {}
                None => {
                    let model = cluster_class(examples, class, distance_threshold)?;
                    self.models.insert(class, model);
                }
            }
        }
        Ok(())
    }
}
