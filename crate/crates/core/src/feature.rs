//! Feature vectors, labelled datasets, the synthetic Gaussian-cluster
//! generator and few-shot train/test splitting.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::rng;

/// Dense class index into a [`LabelMap`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassId(pub u32);

impl ClassId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// A non-empty vector of finite coordinates.
///
/// Values are held at 64-bit precision in memory. Files store 32-bit floats,
/// and [`FeatureVector::from_f32`] widens them exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("feature vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }

    /// Unit-length copy; the zero vector is returned unchanged.
    pub fn l2_normalized(&self) -> Self {
        let norm = libm::sqrt(self.0.iter().map(|v| v * v).sum::<f64>());
        if norm == 0.0 {
            return self.clone();
        }
        Self(self.0.iter().map(|v| v / norm).collect())
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(squared_distance(a, b))
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

pub fn euclidean_distance(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    Ok(distance(a.as_slice(), b.as_slice()))
}

/// Class names indexed by dense [`ClassId`]. Names are unique.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelMap {
    names: Vec<String>,
}

impl LabelMap {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for (i, name) in names.iter().enumerate() {
            if seen.insert(name.as_str(), i).is_some() {
                return Err(Error::DuplicateName(name.clone()));
            }
        }
        Ok(Self { names })
    }

    /// `class_00`, `class_01`, ...
    pub fn numbered(n: usize) -> Self {
        let width = if n > 100 { format!("{}", n - 1).len() } else { 2 };
        Self { names: (0..n).map(|i| format!("class_{i:0width$}")).collect() }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, id: ClassId) -> bool {
        id.index() < self.names.len()
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.names.get(id.index()).map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Option<ClassId> {
        self.names.iter().position(|n| n == name).map(|i| ClassId(i as u32))
    }

    pub fn ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        (0..self.names.len()).map(|i| ClassId(i as u32))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, &str)> + '_ {
        self.names.iter().enumerate().map(|(i, n)| (ClassId(i as u32), n.as_str()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub vector: FeatureVector,
    pub label: ClassId,
}

/// Immutable collection of labelled vectors sharing one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    examples: Vec<LabeledExample>,
    labels: LabelMap,
}

impl Dataset {
    pub fn new(dim: usize, labels: LabelMap, examples: Vec<LabeledExample>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        for ex in &examples {
            check_dim(dim, ex.vector.dim())?;
            if !labels.contains(ex.label) {
                return Err(Error::UnknownClass(ex.label));
            }
        }
        Ok(Self { dim, examples, labels })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    /// Vectors grouped by class, each group in dataset order.
    pub fn by_class(&self) -> BTreeMap<ClassId, Vec<&FeatureVector>> {
        let mut groups: BTreeMap<ClassId, Vec<&FeatureVector>> = BTreeMap::new();
        for ex in &self.examples {
            groups.entry(ex.label).or_default().push(&ex.vector);
        }
        groups
    }

    /// Examples whose label is in `classes`, in dataset order.
    pub fn restricted_to(&self, classes: &[ClassId]) -> Self {
        let examples = self.examples.iter().filter(|ex| classes.contains(&ex.label)).cloned().collect();
        Self { dim: self.dim, examples, labels: self.labels.clone() }
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim, other.dim)?;
        if self.labels != other.labels {
            return Err(Error::InvalidParameter("datasets use different label maps".into()));
        }
        let mut examples = self.examples.clone();
        examples.extend(other.examples.iter().cloned());
        Ok(Self { dim: self.dim, examples, labels: self.labels.clone() })
    }

    pub fn map_vectors<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&FeatureVector) -> Result<FeatureVector>,
    {
        let examples = self
            .examples
            .iter()
            .map(|ex| Ok(LabeledExample { vector: f(&ex.vector)?, label: ex.label }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.dim, self.labels.clone(), examples)
    }

    pub fn l2_normalized(&self) -> Self {
        let examples = self
            .examples
            .iter()
            .map(|ex| LabeledExample { vector: ex.vector.l2_normalized(), label: ex.label })
            .collect();
        Self { dim: self.dim, examples, labels: self.labels.clone() }
    }
}

/// Parameters of the Gaussian-cluster generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub dim: usize,
    pub per_class_count: usize,
    pub class_mean_scale: f64,
    pub within_class_stddev: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.dim == 0 || self.per_class_count == 0 {
            return Err(Error::InvalidParameter("n_classes, dim and per_class_count must be positive".into()));
        }
        if !(self.class_mean_scale.is_finite() && self.class_mean_scale >= 0.0) {
            return Err(Error::InvalidParameter("class_mean_scale must be finite and >= 0".into()));
        }
        if !(self.within_class_stddev.is_finite() && self.within_class_stddev >= 0.0) {
            return Err(Error::InvalidParameter("within_class_stddev must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Gaussian clusters around uniformly drawn class means.
///
/// One ChaCha8 stream seeded with `spec.seed` is consumed class by class: first
/// `dim` uniforms for the class mean (`scale * (2u - 1)`), then
/// `per_class_count * dim` standard normals for the samples. Every coordinate
/// is rounded to `f32` so the dataset survives the binary format bit-exactly.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng::rng_from_seed(spec.seed);
    let mut examples = Vec::with_capacity(spec.n_classes * spec.per_class_count);
    for class in 0..spec.n_classes {
        let mean: Vec<f64> =
            (0..spec.dim).map(|_| spec.class_mean_scale * (2.0 * rng::uniform01(&mut rng) - 1.0)).collect();
        for _ in 0..spec.per_class_count {
            let values = mean
                .iter()
                .map(|m| {
                    let v = m + spec.within_class_stddev * rng::standard_normal(&mut rng);
                    f64::from(v as f32)
                })
                .collect();
            examples.push(LabeledExample { vector: FeatureVector::new(values)?, label: ClassId(class as u32) });
        }
    }
    Dataset::new(spec.dim, LabelMap::numbered(spec.n_classes), examples)
}

/// Per class, `shots` randomly chosen examples go to the training set and
/// the rest to the test set.
///
/// Classes are visited in ascending id with one seeded stream. Training
/// examples keep the sampled order (it is the clustering order); test
/// examples keep dataset order.
pub fn split_shots(ds: &Dataset, shots: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if shots == 0 {
        return Err(Error::InvalidParameter("shots must be positive".into()));
    }
    let mut per_class: BTreeMap<ClassId, Vec<usize>> = ds.labels.ids().map(|c| (c, Vec::new())).collect();
    for (i, ex) in ds.examples.iter().enumerate() {
        per_class.entry(ex.label).or_default().push(i);
    }
    let mut rng = rng::rng_from_seed(seed);
    let mut train = Vec::new();
    let mut test_idx = Vec::new();
    for (&class, indices) in &per_class {
        if indices.len() <= shots {
            return Err(Error::NotEnoughExamples { class, available: indices.len(), required: shots });
        }
        let mut order = indices.clone();
        rng::shuffle(&mut rng, &mut order);
        train.extend(order[..shots].iter().map(|&i| ds.examples[i].clone()));
        test_idx.extend_from_slice(&order[shots..]);
    }
    test_idx.sort_unstable();
    let test = test_idx.iter().map(|&i| ds.examples[i].clone()).collect();
    Ok((Dataset::new(ds.dim, ds.labels.clone(), train)?, Dataset::new(ds.dim, ds.labels.clone(), test)?))
}
