//! Fixtures shared by the benchmarks.

use crossglg::gradcheck::random_training_set;
use crossglg::{ModelConfig, TrainingSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Desk model sized for `classes` base classes.
pub fn desk_config(classes: usize) -> ModelConfig {
    ModelConfig {
        n_classes: classes,
        ..ModelConfig::desk()
    }
}

/// One random sample per class with random guidance.
pub fn random_set(config: &ModelConfig) -> TrainingSet {
    random_training_set(config, 11)
}

/// Seeded features: `n` vectors of width `dim` in `[0, 1)`.
pub fn features(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect()
}
