//! Shared fixtures for the benchmarks.

use medmamba::params::{normal, Rng};
use medmamba::{ModelConfig, Tensor};
use rand::SeedableRng;

pub fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    normal(&mut Rng::seed_from_u64(seed), shape.to_vec(), 1.0)
}

/// Model sized for per-sample timing at length `t`.
pub fn model_config(d_model: usize, n_layers: usize, t: usize) -> ModelConfig {
    ModelConfig {
        d_model,
        n_layers,
        d_state: 8,
        seq_len: t,
        channels: 8,
        ..ModelConfig::default()
    }
}
