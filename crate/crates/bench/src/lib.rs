//! Shared fixtures for the benchmarks.

use std::collections::BTreeMap;

use ckd_core::{ClassroomOutputs, LabelVector, Matrix, ModelId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(-3.0..3.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

pub fn random_labels(n: usize, classes: usize, seed: u64) -> LabelVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LabelVector::new((0..n).map(|_| rng.random_range(0..classes)).collect())
}

/// Student, teacher and `peers` peers with random logits.
pub fn classroom_outputs(batch: usize, classes: usize, peers: u16) -> ClassroomOutputs {
    let mut logits = BTreeMap::new();
    logits.insert(ModelId::Student, random_matrix(batch, classes, 0));
    logits.insert(ModelId::Teacher, random_matrix(batch, classes, 1));
    for p in 1..=peers {
        logits.insert(ModelId::Peer(p), random_matrix(batch, classes, 1 + p as u64));
    }
    ClassroomOutputs::new(logits).expect("outputs")
}
