use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttnConfig, AttnError};

/// Keep weight for a block at `distance` blocks from the diagonal: 1 within
/// `k`, then the harmonic tail 1/((n−k)(n−k+1)).
pub fn block_pdf(distance: usize, k: usize) -> f64 {
    if distance <= k {
        1.0
    } else {
        let a = (distance - k) as f64;
        1.0 / (a * (a + 1.0))
    }
}

/// Mean keep weight over the key blocks of query block `q`. Causal rows only
/// see key blocks at or left of the diagonal.
pub fn row_probability(q: usize, cfg: &AttnConfig) -> f64 {
    let m_c = cfg.col_blocks();
    let k = cfg.threshold_range;
    let last = if cfg.causal { q.min(m_c - 1) } else { m_c - 1 };
    let sum: f64 = (0..=last).map(|j| block_pdf(q.abs_diff(j), k)).sum();
    sum / (last + 1) as f64
}

/// Mean keep weight over the query blocks of key block `c`. Causal columns
/// only see query blocks at or below the diagonal.
pub fn col_probability(c: usize, cfg: &AttnConfig) -> f64 {
    let m_r = cfg.row_blocks();
    let k = cfg.threshold_range;
    let first = if cfg.causal { c.min(m_r - 1) } else { 0 };
    let sum: f64 = (first..m_r).map(|i| block_pdf(i.abs_diff(c), k)).sum();
    sum / (m_r - first) as f64
}

pub fn decision_factor(prob: f64, draw: f64, weight: f64) -> f64 {
    prob * weight + draw * (1.0 - weight)
}

/// Nearest-rank percentile: `sorted[⌈p/100·n⌉ − 1]`, minimum at `p = 0`.
pub fn nearest_rank_percentile(values: &[f64], percent: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty set");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (percent * sorted.len() as f64 / 100.0).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Blend of the `target_drop` percentile of `probs` with the target drop
/// fraction itself.
pub fn adjusted_sparsity(probs: &[f64], target_drop: f64, weight: f64) -> f64 {
    nearest_rank_percentile(probs, target_drop) * weight + target_drop / 100.0 * (1.0 - weight)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMaskPlan {
    pub row_probs: Vec<f64>,
    pub col_probs: Vec<f64>,
    pub row_decisions: Vec<f64>,
    pub col_decisions: Vec<f64>,
    /// Percentile of the pooled row and column probabilities.
    pub percentile: f64,
    pub adjusted_sparsity: f64,
    pub kept_rows: Vec<bool>,
    pub kept_cols: Vec<bool>,
}

impl BlockMaskPlan {
    pub fn kept_row_fraction(&self) -> f64 {
        fraction(&self.kept_rows)
    }

    pub fn kept_col_fraction(&self) -> f64 {
        fraction(&self.kept_cols)
    }
}

fn fraction(mask: &[bool]) -> f64 {
    mask.iter().filter(|&&k| k).count() as f64 / mask.len() as f64
}

/// Builds the row/column keep masks. Rows draw first, then columns, from a
/// ChaCha stream seeded by `cfg.seed`.
pub fn build_mask(cfg: &AttnConfig) -> Result<BlockMaskPlan, AttnError> {
    cfg.validate()?;
    let row_probs: Vec<f64> = (0..cfg.row_blocks()).map(|q| row_probability(q, cfg)).collect();
    let col_probs: Vec<f64> = (0..cfg.col_blocks()).map(|c| col_probability(c, cfg)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut decide = |p: &f64| decision_factor(*p, rng.random::<f64>(), cfg.weight);
    let row_decisions: Vec<f64> = row_probs.iter().map(&mut decide).collect();
    let col_decisions: Vec<f64> = col_probs.iter().map(&mut decide).collect();

    let pooled: Vec<f64> = row_probs.iter().chain(&col_probs).copied().collect();
    let percentile = nearest_rank_percentile(&pooled, cfg.target_drop);
    let s_adj = adjusted_sparsity(&pooled, cfg.target_drop, cfg.weight);

    let kept_rows = row_decisions.iter().map(|&d| d >= s_adj).collect();
    let kept_cols = col_decisions.iter().map(|&d| d >= s_adj).collect();
    Ok(BlockMaskPlan {
        row_probs,
        col_probs,
        row_decisions,
        col_decisions,
        percentile,
        adjusted_sparsity: s_adj,
        kept_rows,
        kept_cols,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(n: usize, b: usize, k: usize, w: f64, s: f64, causal: bool) -> AttnConfig {
        AttnConfig {
            context_length: n,
            head_dim: 4,
            block_rows: b,
            block_cols: b,
            threshold_range: k,
            weight: w,
            target_drop: s,
            seed: 7,
            causal,
        }
    }

    #[test]
    fn pdf_values() {
        assert_eq!(block_pdf(2, 2), 1.0);
        assert_eq!(block_pdf(3, 2), 0.5);
        assert!((block_pdf(5, 2) - 1.0 / 12.0).abs() < 1e-15);
        assert_eq!(block_pdf(0, 0), 1.0);
    }

    #[test]
    fn causal_row_probability_by_hand() {
        // q=3, k=1: distances 3,2,1,0 -> (1/6 + 1/2 + 1 + 1)/4
        let c = cfg(64, 16, 1, 1.0, 0.0, true);
        assert!((row_probability(3, &c) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(row_probability(0, &c), 1.0);
    }

    #[test]
    fn wide_threshold_gives_unit_probabilities() {
        for causal in [false, true] {
            let c = cfg(100, 8, 12, 1.0, 30.0, causal);
            assert!((0..c.row_blocks()).all(|q| row_probability(q, &c) == 1.0));
            assert!((0..c.col_blocks()).all(|q| col_probability(q, &c) == 1.0));
        }
    }

    #[test]
    fn decision_factor_cases() {
        assert_eq!(decision_factor(0.5, 0.93, 1.0), 0.5);
        assert_eq!(decision_factor(0.123, 0.7, 0.0), 0.7);
        assert!((decision_factor(0.4, 0.2, 0.5) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn adjusted_sparsity_cases() {
        assert_eq!(adjusted_sparsity(&[1.0; 5], 37.0, 1.0), 1.0);
        let p = [0.8, 0.2, 0.6, 0.4];
        assert_eq!(adjusted_sparsity(&p, 50.0, 0.0), 0.5);
        assert_eq!(adjusted_sparsity(&p, 50.0, 1.0), 0.4);
        assert_eq!(nearest_rank_percentile(&p, 0.0), 0.2);
        assert_eq!(nearest_rank_percentile(&p, 100.0), 0.8);
        assert_eq!(nearest_rank_percentile(&p, 75.0), 0.6);
    }

    #[test]
    fn full_keep_when_everything_is_near() {
        let c = cfg(64, 8, 7, 1.0, 80.0, true);
        let plan = build_mask(&c).unwrap();
        assert_eq!(plan.adjusted_sparsity, 1.0);
        assert!(plan.kept_rows.iter().chain(&plan.kept_cols).all(|&k| k));
    }

    #[test]
    fn pure_random_full_drop_keeps_nothing() {
        let plan = build_mask(&cfg(64, 8, 0, 0.0, 100.0, false)).unwrap();
        assert_eq!(plan.adjusted_sparsity, 1.0);
        assert!(plan.kept_rows.iter().chain(&plan.kept_cols).all(|&k| !k));
    }

    #[test]
    fn same_seed_same_plan() {
        let c = cfg(200, 16, 1, 0.5, 50.0, true);
        assert_eq!(build_mask(&c).unwrap(), build_mask(&c).unwrap());
        let mut other = c.clone();
        other.seed = 8;
        assert_ne!(
            build_mask(&c).unwrap().row_decisions,
            build_mask(&other).unwrap().row_decisions
        );
    }

    #[test]
    fn invalid_ranges_rejected() {
        assert!(build_mask(&cfg(10, 2, 0, 1.5, 10.0, true)).is_err());
        assert!(build_mask(&cfg(10, 2, 0, 0.5, 100.5, true)).is_err());
        assert!(build_mask(&cfg(10, 0, 0, 0.5, 10.0, true)).is_err());
    }

    proptest! {
        #[test]
        fn probabilities_in_unit_interval(
            n in 1usize..300, br in 1usize..40, bc in 1usize..40, k in 0usize..6, causal: bool
        ) {
            let mut c = cfg(n, br, k, 1.0, 0.0, causal);
            c.block_cols = bc;
            for q in 0..c.row_blocks() {
                let p = row_probability(q, &c);
                prop_assert!(p > 0.0 && p <= 1.0);
            }
            for q in 0..c.col_blocks() {
                let p = col_probability(q, &c);
                prop_assert!(p > 0.0 && p <= 1.0);
            }
        }

        #[test]
        fn row_probability_non_increasing_as_k_shrinks(
            n in 1usize..300, b in 1usize..20, k in 1usize..8, causal: bool
        ) {
            let hi = cfg(n, b, k, 1.0, 0.0, causal);
            let lo = cfg(n, b, k - 1, 1.0, 0.0, causal);
            for q in 0..hi.row_blocks() {
                prop_assert!(row_probability(q, &lo) <= row_probability(q, &hi));
            }
        }
    }
}
