//! Shared fixtures for the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use srlite_core::attention::{MsaConfig, WindowAttention};
use srlite_core::{ParamBuilder, ParamStore, Tensor};

/// Standard normal entries from a fixed seed.
pub fn randn(seed: u64, shape: &[usize]) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Tensor::from_vec(data, shape).expect("shape matches data")
}

/// One initialized window-attention layer and its parameters.
pub fn attention_layer(cfg: MsaConfig) -> (ParamStore<f32>, WindowAttention) {
    let mut ps = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let layer = WindowAttention::new(&mut ParamBuilder::new(&mut ps, &mut rng), "attn", cfg).expect("valid config");
    (ps, layer)
}
