//! Softmax linear head over fixed features, trained with plain minibatch SGD
//! on mean cross-entropy.
//!
//! Two incremental regimes are built on it: the batch baseline retrains a
//! fresh head on every training example seen so far, and fine-tuning appends
//! zero rows for the new classes and trains on the new increment alone.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::feature::{check_dim, ClassId, Dataset, FeatureVector, LabeledExample};
use crate::rng;

/// `weights` is row-major `classes.len() x dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    dim: usize,
    classes: Vec<ClassId>,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Mean cross-entropy gradient, same layout as the head.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001, epochs: 100, batch_size: 8, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // zero is allowed and leaves the head unchanged
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidParameter("learning rate must be finite and >= 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("epochs and batch size must be >= 1".into()));
        }
        Ok(())
    }
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

impl LinearHead {
    pub fn zeros(dim: usize, classes: &[ClassId]) -> Result<Self> {
        let mut head = Self { dim, classes: Vec::new(), weights: Vec::new(), bias: Vec::new() };
        head.expand(classes)?;
        Ok(head)
    }

    pub fn from_parts(dim: usize, classes: Vec<ClassId>, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let n = classes.len();
        if weights.len() != n * dim || bias.len() != n {
            return Err(Error::InvalidParameter("parameter shapes do not match classes x dim".into()));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut head = Self::zeros(dim, &classes)?;
        head.weights = weights;
        head.bias = bias;
        Ok(head)
    }

    /// Appends zero-initialised rows for `new_classes`.
    pub fn expand(&mut self, new_classes: &[ClassId]) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        for (i, c) in new_classes.iter().enumerate() {
            if self.classes.contains(c) || new_classes[..i].contains(c) {
                return Err(Error::DuplicateClass(*c));
            }
        }
        self.classes.extend_from_slice(new_classes);
        self.weights.resize(self.classes.len() * self.dim, 0.0);
        self.bias.resize(self.classes.len(), 0.0);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn row_of(&self, class: ClassId) -> Result<usize> {
        self.classes.iter().position(|&c| c == class).ok_or(Error::UnknownClass(class))
    }

    fn logits_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    pub fn logits(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        check_dim(self.dim, x.dim())?;
        Ok(self.logits_unchecked(x.as_slice()))
    }

    /// Class probabilities, in row order.
    pub fn forward(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        if self.classes.is_empty() {
            return Err(Error::Empty("linear head classes"));
        }
        let mut p = self.logits(x)?;
        softmax_in_place(&mut p);
        Ok(p)
    }

    /// Largest logit; the lowest class id wins ties.
    pub fn predict(&self, x: &FeatureVector) -> Result<ClassId> {
        let logits = self.logits(x)?;
        let mut best: Option<(f64, ClassId)> = None;
        for (&l, &c) in logits.iter().zip(&self.classes) {
            let better = match best {
                None => true,
                Some((b, bc)) => l > b || (l == b && c < bc),
            };
            if better {
                best = Some((l, c));
            }
        }
        best.map(|(_, c)| c).ok_or(Error::Empty("linear head classes"))
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Empty("evaluation data"));
        }
        let mut correct = 0usize;
        for ex in data.examples() {
            if self.predict(&ex.vector)? == ex.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }

    fn check_batch(&self, batch: &[&LabeledExample]) -> Result<Vec<usize>> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        batch
            .iter()
            .map(|ex| {
                check_dim(self.dim, ex.vector.dim())?;
                self.row_of(ex.label)
            })
            .collect()
    }
}

/// Mean cross-entropy of `batch`, computed with log-sum-exp.
pub fn cross_entropy(head: &LinearHead, batch: &[&LabeledExample]) -> Result<f64> {
    let rows = head.check_batch(batch)?;
    let mut total = 0.0;
    for (ex, &row) in batch.iter().zip(&rows) {
        let logits = head.logits_unchecked(ex.vector.as_slice());
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(logits.iter().map(|l| libm::exp(l - max)).sum::<f64>());
        total += lse - logits[row];
    }
    Ok(total / batch.len() as f64)
}

/// Analytic gradient of [`cross_entropy`]: per example,
/// `(softmax(Wx + b) - onehot(y))` outer `x`, averaged over the batch.
pub fn gradient(head: &LinearHead, batch: &[&LabeledExample]) -> Result<Gradient> {
    let rows = head.check_batch(batch)?;
    let mut grad = Gradient { weights: vec![0.0; head.weights.len()], bias: vec![0.0; head.bias.len()] };
    accumulate_gradient(head, batch, &rows, &mut grad);
    Ok(grad)
}

fn accumulate_gradient(head: &LinearHead, batch: &[&LabeledExample], rows: &[usize], grad: &mut Gradient) {
    grad.weights.iter_mut().for_each(|v| *v = 0.0);
    grad.bias.iter_mut().for_each(|v| *v = 0.0);
    let scale = 1.0 / batch.len() as f64;
    for (ex, &row) in batch.iter().zip(rows) {
        let x = ex.vector.as_slice();
        let mut delta = head.logits_unchecked(x);
        softmax_in_place(&mut delta);
        delta[row] -= 1.0;
        for (k, d) in delta.iter().enumerate() {
            let d = d * scale;
            grad.bias[k] += d;
            for (g, v) in grad.weights[k * head.dim..(k + 1) * head.dim].iter_mut().zip(x) {
                *g += d * v;
            }
        }
    }
}

/// `cfg.epochs` passes; each pass reshuffles once and steps on consecutive
/// minibatches, keeping a short final batch.
pub fn train(head: &LinearHead, data: &Dataset, cfg: &TrainConfig) -> Result<LinearHead> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let all: Vec<&LabeledExample> = data.examples().iter().collect();
    let rows = head.check_batch(&all)?;

    let mut head = head.clone();
    let mut grad = Gradient { weights: vec![0.0; head.weights.len()], bias: vec![0.0; head.bias.len()] };
    let mut rng = rng::rng_from_seed(cfg.seed);
    let mut order: Vec<usize> = (0..all.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut batch_rows = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        rng::shuffle(&mut rng, &mut order);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch_rows.clear();
            batch.extend(chunk.iter().map(|&i| all[i]));
            batch_rows.extend(chunk.iter().map(|&i| rows[i]));
            accumulate_gradient(&head, &batch, &batch_rows, &mut grad);
            for (w, g) in head.weights.iter_mut().zip(&grad.weights) {
                *w -= cfg.learning_rate * g;
            }
            for (b, g) in head.bias.iter_mut().zip(&grad.bias) {
                *b -= cfg.learning_rate * g;
            }
        }
    }
    Ok(head)
}

/// Fresh head over `classes`, trained on every example seen so far.
pub fn run_flb_increment(all_data_so_far: &Dataset, classes: &[ClassId], cfg: &TrainConfig) -> Result<LinearHead> {
    let head = LinearHead::zeros(all_data_so_far.dim(), classes)?;
    train(&head, all_data_so_far, cfg)
}

/// Adds zero rows for `new_classes` and trains on the new increment only.
/// `new_data_only` may only contain the new classes.
pub fn run_ft_increment(
    head: &LinearHead,
    new_data_only: &Dataset,
    new_classes: &[ClassId],
    cfg: &TrainConfig,
) -> Result<LinearHead> {
    let allowed: BTreeMap<ClassId, ()> = new_classes.iter().map(|&c| (c, ())).collect();
    if let Some(ex) = new_data_only.examples().iter().find(|ex| !allowed.contains_key(&ex.label)) {
        return Err(Error::InvalidParameter(alloc::format!(
            "fine-tuning data contains class {} outside the new increment",
            ex.label
        )));
    }
    let mut head = head.clone();
    head.expand(new_classes)?;
    train(&head, new_data_only, cfg)
}
