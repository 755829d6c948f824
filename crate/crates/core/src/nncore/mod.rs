//! Dense numeric core shared by the extractor and the downstream model:
//! matrices, embedding tables, MLP stacks with forward traces, target
//! attention pooling, Adam, and hand-written backward passes.
//!
//! All arithmetic is `f32`; losses are accumulated in `f64` by callers.

mod adam;
mod attention;
mod embedding;
mod matrix;
mod mlp;
mod params;

pub use adam::{AdamConfig, AdamState, Moments};
pub use attention::{softmax, AttentionPooler, AttentionTrace};
pub use embedding::{EmbeddingTable, HashMode, EMBEDDING_INIT_BOUND};
pub use matrix::{axpy, dot, Matrix};
pub use mlp::{Activation, DenseLayer, MlpBackward, MlpStack, MlpTrace};
pub use params::{check_grad_shapes, flatten_params, Parameterized};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used everywhere a seed is accepted.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn sigmoid64(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
