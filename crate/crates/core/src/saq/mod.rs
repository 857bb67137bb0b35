//! Staircase adaptive quantization (SAQ) of a KV cache.
//!
//! Tokens are cached newest-first at full precision and lose bits as they
//! age: every `S` tokens of additional age steps one rung down the bit
//! ladder (e.g. 16 → 8 → 4 → 2), and the oldest rung is open-ended.
//! Keys are quantized per channel within a group of `G` tokens, values per
//! token, each with an asymmetric min/max zero-point and scale.

mod cache;
mod decoder;
mod quant;

use thiserror::Error;

pub use cache::{staircase_bits, QuantAxis, QuantGroup, StaircaseCache, StaircaseConfig};
pub use decoder::{baseline_decode, DecodeStep, ProjectionWeights, ToyDecoder};
pub use quant::{dequantize, quantize, QuantSpec, FULL_PRECISION_BITS, SPEC_OVERHEAD_BITS};

#[derive(Debug, Error, PartialEq)]
pub enum SaqError {
    #[error("invalid staircase config: {0}")]
    InvalidConfig(String),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("decode_step called before prefill")]
    NotPrefilled,
    #[error("token has dimension {actual}, decoder expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
}
