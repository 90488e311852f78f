//! Sampling-based self-attention (SAMSA).
//!
//! Each attention head attends to `k` key-value rows picked by a
//! differentiable top-k sampler instead of all `n` tokens, making a layer
//! linear in sequence length at fixed `k`.

pub mod attention;
pub mod error;
pub mod graph;
pub mod gumbel;
pub mod model;
pub mod nn;
pub mod par;
pub mod real;
pub mod sampler;
pub mod tasks;
pub mod tensor;
pub mod verification;

pub use error::{Error, Result};
pub use par::Exec;
pub use real::{DType, Real};
pub use tensor::{Array, CustomOp, Tensor};

/// Operators with hand-written backward rules.
pub const CUSTOM_OPS: [&str; 3] = [
    gumbel::ST_GUMBEL_SOFTMAX,
    gumbel::ST_GUMBEL_SIGMOID,
    sampler::PAIRWISE_TOPK_SAMPLE,
];
