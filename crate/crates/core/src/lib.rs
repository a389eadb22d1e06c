//! Few-shot class-incremental learning with centroid-based concepts.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure
//! computation; file formats, the CLI and parallel run scheduling live in the
//! `cbcl` companion crate.
//!
//! * [`feature`]: feature vectors, datasets, the synthetic generator and
//!   few-shot splits.
//! * [`agg_var`]: per-class streaming clustering into centroids.
//! * [`classifier`]: inverse-distance weighted voting over the nearest
//!   centroids, plus the NCM and 1-NN reference classifiers.
//! * [`linear`]: softmax linear head trained with minibatch SGD, used for
//!   the fine-tuning and batch upper-bound baselines.
//! * [`protocol`]: increment scheduling, cross-validated tuning, evaluation
//!   and aggregation over runs.
//! * [`arrangement`]: single-example object arrangement concepts.
//! * [`cleaning`]: Monte-Carlo table-cleaning simulation.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod agg_var;
pub mod arrangement;
pub mod classifier;
pub mod cleaning;
mod error;
pub mod feature;
pub mod linear;
pub mod protocol;
pub mod rng;

pub use agg_var::{cluster_class, update_class, Centroid, ClassModel, ModelStore};
pub use classifier::{predict, predict_1nn, predict_ncm, predict_scores, Hyperparams, ScoreMap};
pub use error::{Error, Result};
pub use feature::{
    euclidean_distance, generate_synthetic, split_shots, ClassId, Dataset, FeatureVector, LabelMap, LabeledExample,
    SyntheticSpec,
};
