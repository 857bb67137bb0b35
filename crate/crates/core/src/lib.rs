//! Attention scores in two settings.
//!
//! * [`mosaic`]: photomosaic composition where each grid cell picks the tile
//!   with the highest pixel-statistic attention score, emitted as a bundle
//!   that a click-and-display viewer can consume.
//! * [`prflash`]: probabilistic block-sparse attention driven by a harmonic
//!   block-distance keep model, checked against dense softmax attention.
//! * [`saq`]: staircase adaptive quantization of a KV cache, where each
//!   segment of older tokens is stored at fewer bits, with a full-precision
//!   baseline decoder.
//! * [`curvefit`]: the four-parameter smoothing curve and its damped
//!   Gauss-Newton fitter.

pub mod curvefit;
pub mod experiment;
pub mod matrix;
pub mod mosaic;
pub mod prflash;
pub mod saq;

pub use matrix::Matrix;
