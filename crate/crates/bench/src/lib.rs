//! Shared fixtures for the estimator benchmarks.

use markov_order::{MarkovChainModel, ProcessModel, Sample};

/// Path of the two-state chain `[[0.7, 0.3], [0.2, 0.8]]`.
pub fn two_state_path(n: usize, seed: u64) -> Sample {
    MarkovChainModel::binary_order1([[0.7, 0.3], [0.2, 0.8]])
        .expect("valid chain")
        .sample_path(n, seed, 0)
        .expect("n > 0")
}
