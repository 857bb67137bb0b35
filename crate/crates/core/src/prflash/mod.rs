//! Probabilistic block-sparse attention.
//!
//! Query rows and key columns are grouped into blocks. A harmonic
//! block-distance model gives every block row/column a keep probability,
//! a seeded random draw blends into a decision factor, and rows/columns
//! whose factor falls below the adjusted sparsity threshold are dropped.
//! A query block always keeps its own diagonal key block, so no softmax
//! row is ever empty.

mod attention;
mod mask;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use attention::{dense_attention, sparse_attention, AttnTensors};
pub use mask::{
    adjusted_sparsity, block_pdf, build_mask, col_probability, decision_factor,
    nearest_rank_percentile, row_probability, BlockMaskPlan,
};

#[derive(Debug, Error, PartialEq)]
pub enum AttnError {
    #[error("invalid attention config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnConfig {
    pub context_length: usize,
    pub head_dim: usize,
    pub block_rows: usize,
    pub block_cols: usize,
    /// Block distance up to which the keep probability is 1.
    pub threshold_range: usize,
    /// Weight of the deterministic probability against the random draw.
    pub weight: f64,
    /// Target drop percentage in `[0, 100]`.
    pub target_drop: f64,
    pub seed: u64,
    pub causal: bool,
}

impl AttnConfig {
    pub fn validate(&self) -> Result<(), AttnError> {
        let bad = |m: &str| Err(AttnError::InvalidConfig(m.to_string()));
        if self.context_length == 0 {
            return bad("context length must be at least 1");
        }
        if self.head_dim == 0 {
            return bad("head dim must be at least 1");
        }
        if self.block_rows == 0 || self.block_cols == 0 {
            return bad("block sizes must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return bad("weight must lie in [0, 1]");
        }
        if !(0.0..=100.0).contains(&self.target_drop) {
            return bad("sparsity must lie in [0, 100]");
        }
        Ok(())
    }

    /// Number of query blocks, ⌈N/B_r⌉.
    pub fn row_blocks(&self) -> usize {
        self.context_length.div_ceil(self.block_rows)
    }

    /// Number of key blocks, ⌈N/B_c⌉.
    pub fn col_blocks(&self) -> usize {
        self.context_length.div_ceil(self.block_cols)
    }

    pub fn max_blocks(&self) -> usize {
        self.row_blocks().max(self.col_blocks())
    }
}
