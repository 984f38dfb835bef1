//! Shared fixtures for the benchmarks.

use dbrsplash::models::{generate_denoise, DenoiseSpec};
use dbrsplash::partition::{over_partition_and_assign, WeightedCutProblem, DEFAULT_C_COMM, DEFAULT_GAMMA};
use dbrsplash::{FactorGraph, Partitioning};

/// Square denoising grid with the default model parameters.
pub fn grid(side: usize) -> FactorGraph {
    let spec = DenoiseSpec {
        width: side,
        height: side,
        ..DenoiseSpec::default()
    };
    generate_denoise(&spec).expect("valid spec").graph
}

/// Uninformed cut of `graph` over `workers`.
pub fn cut(graph: &FactorGraph, workers: usize) -> Partitioning {
    let prob = WeightedCutProblem::uninformed(graph, DEFAULT_C_COMM, DEFAULT_GAMMA, workers).expect("valid problem");
    over_partition_and_assign(&prob, workers, 1, 0).expect("partition")
}
