//! Shared fixtures for unit tests.

use crate::dataio::fixtures::{item, tiny};
use crate::dataio::Dataset;
use crate::embed::{init_model, ModelConfig, ModelState, Params};
use crate::math::Mat;
use crate::propagate::GraphContext;
use crate::train::compare_gradients;

/// `tiny()` plus user 3 with no interactions and item 15 in no outfit.
pub fn tiny_with_isolated() -> Dataset {
    let mut ds = tiny();
    ds.users.push(3);
    ds.items.insert(15, item(2, 4, 3, 0.6));
    ds
}

pub fn small_config(ctx: &GraphContext) -> ModelConfig {
    ctx.model_config(&ModelConfig {
        dim: 6,
        hidden_dim: 5,
        heads: 2,
        views: 3,
        view_hidden: 4,
        ..ModelConfig::new(0, 0, 0, 0)
    })
}

pub fn small_model(ctx: &GraphContext, seed: u64) -> ModelState {
    init_model(&small_config(ctx), seed).unwrap()
}

/// Deterministic pseudo-random matrix with entries in [-1, 1].
pub fn pattern(rows: usize, cols: usize, salt: u64) -> Mat {
    let data = (0..rows * cols)
        .map(|k| {
            let x = (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt.wrapping_mul(0xBF58_476D_1CE4_E5B9);
            ((x >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect();
    Mat::from_vec(rows, cols, data)
}

/// Scales every parameter so gradients are not dominated by tiny init values.
pub fn enlarge(m: &mut ModelState, factor: f64) {
    for (_, t) in m.params.named_mut() {
        t.as_mut_slice().iter_mut().for_each(|x| *x *= factor);
    }
}

/// Worst relative gradient error on a sample of entries per tensor.
pub fn gradient_error(
    m: &ModelState,
    analytic: &Params,
    per_tensor: usize,
    loss: impl FnMut(&ModelState) -> f64,
) -> (f64, String) {
    let r = compare_gradients(m, analytic, per_tensor, 1e-5, loss);
    (r.max_rel_error, r.worst)
}
