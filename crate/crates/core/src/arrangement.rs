//! Object arrangement concepts learned from a single scene.
//!
//! A scene is encoded as a binary vector over `N` known classes:
//!
//! ```text
//! [ presence (N) | left-of (N x N, row-major) | above (N x N, row-major) ]
//! ```
//!
//! `left_of[i][j] = 1` means the object of class `i` is left of the object of
//! class `j`; right-of is the transpose. `above` works the same way with
//! image `y` growing downwards. Each object pair contributes exactly one
//! fact, along whichever axis separates their box centres more.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::feature::ClassId;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub label: ClassId,
    pub bbox: BoundingBox,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub width: f64,
    pub height: f64,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    /// Boxes must be non-degenerate and inside the image; a class may appear
    /// at most once.
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0 && self.width.is_finite() && self.height.is_finite()) {
            return Err(Error::InvalidScene("image size must be positive".into()));
        }
        let mut seen = BTreeSet::new();
        for o in &self.objects {
            let b = &o.bbox;
            let finite = [b.x_min, b.y_min, b.x_max, b.y_max].iter().all(|v| v.is_finite());
            if !finite || !(b.x_min < b.x_max && b.y_min < b.y_max) {
                return Err(Error::InvalidScene(alloc::format!("degenerate box for class {}", o.label)));
            }
            if b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > self.width || b.y_max > self.height {
                return Err(Error::InvalidScene(alloc::format!("box for class {} leaves the image", o.label)));
            }
            if !seen.insert(o.label) {
                return Err(Error::InvalidScene(alloc::format!("class {} appears more than once", o.label)));
            }
        }
        Ok(())
    }

    /// Mirror image about the vertical centre line.
    pub fn flipped_horizontally(&self) -> Self {
        let objects = self
            .objects
            .iter()
            .map(|o| SceneObject {
                label: o.label,
                bbox: BoundingBox::new(
                    self.width - o.bbox.x_max,
                    o.bbox.y_min,
                    self.width - o.bbox.x_min,
                    o.bbox.y_max,
                ),
            })
            .collect();
        Self { width: self.width, height: self.height, objects }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Relation {
    LeftOf,
    Above,
}

/// `first` is [`Relation`] of `second`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct RelationFact {
    pub first: ClassId,
    pub second: ClassId,
    pub relation: Relation,
}

/// One fact per unordered object pair, from box centres. Horizontal offset
/// wins when the offsets are equal; coincident centres give "lower class id
/// left of higher".
pub fn derive_relations(scene: &Scene) -> Result<Vec<RelationFact>> {
    scene.validate()?;
    let mut facts = Vec::new();
    for (i, a) in scene.objects.iter().enumerate() {
        for b in &scene.objects[i + 1..] {
            let (ax, ay) = a.bbox.center();
            let (bx, by) = b.bbox.center();
            let (dx, dy) = (bx - ax, by - ay);
            let fact = if dx == 0.0 && dy == 0.0 {
                let (first, second) = if a.label < b.label { (a, b) } else { (b, a) };
                RelationFact { first: first.label, second: second.label, relation: Relation::LeftOf }
            } else if dx.abs() >= dy.abs() {
                let (first, second) = if dx > 0.0 { (a, b) } else { (b, a) };
                RelationFact { first: first.label, second: second.label, relation: Relation::LeftOf }
            } else {
                let (first, second) = if dy > 0.0 { (a, b) } else { (b, a) };
                RelationFact { first: first.label, second: second.label, relation: Relation::Above }
            };
            facts.push(fact);
        }
    }
    Ok(facts)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ArrangementVector {
    n_classes: usize,
    bits: Vec<bool>,
}

impl ArrangementVector {
    pub fn zeros(n_classes: usize) -> Self {
        Self { n_classes, bits: vec![false; n_classes + 2 * n_classes * n_classes] }
    }

    /// Rebuilds a vector from raw bits, checking the block invariants.
    pub fn from_bits(n_classes: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != n_classes + 2 * n_classes * n_classes {
            return Err(Error::InvalidParameter(alloc::format!(
                "arrangement vector of {} bits does not fit {} classes",
                bits.len(),
                n_classes
            )));
        }
        let v = Self { n_classes, bits };
        for i in 0..n_classes {
            for j in 0..n_classes {
                for rel in [Relation::LeftOf, Relation::Above] {
                    if v.relation(rel, i, j) && (!v.bits[i] || !v.bits[j] || v.relation(rel, j, i) || i == j) {
                        return Err(Error::InvalidParameter("inconsistent relation bits".into()));
                    }
                }
            }
        }
        Ok(v)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    fn offset(&self, rel: Relation) -> usize {
        match rel {
            Relation::LeftOf => self.n_classes,
            Relation::Above => self.n_classes + self.n_classes * self.n_classes,
        }
    }

    pub fn present(&self, class: ClassId) -> bool {
        self.bits.get(class.index()).copied().unwrap_or(false) && class.index() < self.n_classes
    }

    pub fn presence(&self) -> BTreeSet<ClassId> {
        (0..self.n_classes).filter(|&i| self.bits[i]).map(|i| ClassId(i as u32)).collect()
    }

    pub fn relation(&self, rel: Relation, i: usize, j: usize) -> bool {
        self.bits[self.offset(rel) + i * self.n_classes + j]
    }

    /// Number of differing bits, i.e. the squared Euclidean distance.
    pub fn hamming(&self, other: &Self) -> Result<usize> {
        if self.bits.len() != other.bits.len() {
            return Err(Error::DimensionMismatch { expected: self.bits.len(), found: other.bits.len() });
        }
        Ok(self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count())
    }
}

pub fn encode(scene: &Scene, n_classes: usize) -> Result<ArrangementVector> {
    if let Some(o) = scene.objects.iter().find(|o| o.label.index() >= n_classes) {
        return Err(Error::UnknownClass(o.label));
    }
    let facts = derive_relations(scene)?;
    let mut v = ArrangementVector::zeros(n_classes);
    for o in &scene.objects {
        v.bits[o.label.index()] = true;
    }
    for f in facts {
        let idx = v.offset(f.relation) + f.first.index() * n_classes + f.second.index();
        v.bits[idx] = true;
    }
    Ok(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VerdictKind {
    Consistent,
    Missing,
    Wrong,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArrangementVerdict {
    /// Every stored arrangement at the minimum distance, in store order.
    pub closest: Vec<String>,
    /// Hamming distance to the closest arrangements.
    pub distance: usize,
    pub kind: VerdictKind,
    /// Expected classes absent from the scene with nothing standing in.
    pub missing_classes: BTreeSet<ClassId>,
    /// `(observed, expected)`: an object that should be replaced by another.
    pub wrong_pairs: BTreeSet<(ClassId, ClassId)>,
    /// Observed classes not expected and with no missing class to pair with.
    pub unexpected_classes: BTreeSet<ClassId>,
    /// Same objects as the closest arrangement but placed differently.
    pub relation_mismatch: bool,
    /// More than one substitution was needed against some closest
    /// arrangement, so the pairing is a guess.
    pub low_confidence: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArrangementStore {
    n_classes: usize,
    entries: Vec<(String, ArrangementVector)>,
}

impl ArrangementStore {
    pub fn new(n_classes: usize) -> Self {
        Self { n_classes, entries: Vec::new() }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, ArrangementVector)] {
        &self.entries
    }

    pub fn insert(&mut self, name: &str, vector: ArrangementVector) -> Result<()> {
        if vector.n_classes != self.n_classes {
            return Err(Error::DimensionMismatch { expected: self.n_classes, found: vector.n_classes });
        }
        if self.entries.iter().any(|(n, _)| n == name) {
            return Err(Error::DuplicateName(name.into()));
        }
        self.entries.push((name.into(), vector));
        Ok(())
    }

    /// Stores the encoding of a single example scene under `name`. The store
    /// is unchanged on error.
    pub fn learn(&mut self, name: &str, scene: &Scene) -> Result<()> {
        let v = encode(scene, self.n_classes)?;
        self.insert(name, v)
    }

    /// Compares `scene` with the nearest stored arrangement(s). Ties are all
    /// reported and their predictions merged.
    pub fn check(&self, scene: &Scene) -> Result<ArrangementVerdict> {
        if self.entries.is_empty() {
            return Err(Error::Empty("arrangement store"));
        }
        let t = encode(scene, self.n_classes)?;
        let mut best = usize::MAX;
        let mut closest = Vec::new();
        for (name, v) in &self.entries {
            let d = v.hamming(&t)?;
            if d < best {
                best = d;
                closest.clear();
            }
            if d == best {
                closest.push((name, v));
            }
        }

        let observed = t.presence();
        let mut verdict = ArrangementVerdict {
            closest: closest.iter().map(|(n, _)| (*n).clone()).collect(),
            distance: best,
            kind: VerdictKind::Consistent,
            missing_classes: BTreeSet::new(),
            wrong_pairs: BTreeSet::new(),
            unexpected_classes: BTreeSet::new(),
            relation_mismatch: false,
            low_confidence: false,
        };
        for (_, v) in &closest {
            let expected = v.presence();
            let absent: Vec<ClassId> = expected.difference(&observed).copied().collect();
            let extra: Vec<ClassId> = observed.difference(&expected).copied().collect();
            let paired = absent.len().min(extra.len());
            if paired > 1 {
                verdict.low_confidence = true;
            }
            for (&o, &e) in extra.iter().zip(&absent) {
                verdict.wrong_pairs.insert((o, e));
            }
            verdict.missing_classes.extend(absent[paired..].iter().copied());
            verdict.unexpected_classes.extend(extra[paired..].iter().copied());
            if absent.is_empty() && extra.is_empty() && t != **v {
                verdict.relation_mismatch = true;
            }
        }
        verdict.kind = if !verdict.wrong_pairs.is_empty() {
            VerdictKind::Wrong
        } else if !verdict.missing_classes.is_empty() {
            VerdictKind::Missing
        } else {
            VerdictKind::Consistent
        };
        Ok(verdict)
    }
}
