#![allow(dead_code)]

use std::collections::BTreeMap;

use cbcl_core::rng::{derive_seed, index, rng_from_seed, uniform01};
use cbcl_core::{generate_synthetic, split_shots, ClassId, Dataset, FeatureVector, SyntheticSpec};

/// The `i`-th of a family of small random datasets: up to 10 classes, up to
/// 32 dimensions, overlapping enough that predictions are not all trivial.
pub fn random_dataset(i: u64) -> Dataset {
    let mut rng = rng_from_seed(derive_seed(0xda7a, i));
    let spec = SyntheticSpec {
        n_classes: 2 + index(&mut rng, 9),
        dim: 1 + index(&mut rng, 32),
        per_class_count: 8 + index(&mut rng, 13),
        class_mean_scale: 1.0 + 4.0 * uniform01(&mut rng),
        within_class_stddev: 0.3 + 1.5 * uniform01(&mut rng),
        seed: i,
    };
    generate_synthetic(&spec).unwrap()
}

pub fn random_split(i: u64) -> (Dataset, Dataset) {
    let ds = random_dataset(i);
    split_shots(&ds, 5, i).unwrap()
}

pub fn per_class(ds: &Dataset) -> BTreeMap<ClassId, Vec<FeatureVector>> {
    ds.by_class().into_iter().map(|(c, xs)| (c, xs.into_iter().cloned().collect())).collect()
}

pub fn max_pairwise(xs: &[FeatureVector]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in xs.iter().enumerate() {
        for b in &xs[i + 1..] {
            best = best.max(cbcl_core::euclidean_distance(a, b).unwrap());
        }
    }
    best
}
