use rand::Rng;

use super::{AttnConfig, BlockMaskPlan};
use crate::matrix::{dot, Matrix};

/// Single batch, single head Q, K, V of shape `N × d_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnTensors {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

impl AttnTensors {
    pub fn new(q: Matrix, k: Matrix, v: Matrix) -> Self {
        assert!(
            k.rows() == v.rows() && q.cols() == k.cols() && k.cols() == v.cols(),
            "K and V must share length and Q, K, V must share head dim"
        );
        Self { q, k, v }
    }

    /// Entries uniform in `[-1, 1)`.
    pub fn random<R: Rng + ?Sized>(n: usize, head_dim: usize, rng: &mut R) -> Self {
        let q = Matrix::random_uniform(n, head_dim, -1.0, 1.0, rng);
        let k = Matrix::random_uniform(n, head_dim, -1.0, 1.0, rng);
        let v = Matrix::random_uniform(n, head_dim, -1.0, 1.0, rng);
        Self { q, k, v }
    }

    pub fn len(&self) -> usize {
        self.q.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.q.rows() == 0
    }

    pub fn head_dim(&self) -> usize {
        self.q.cols()
    }
}

/// Exact `softmax(QKᵀ/√d_h + causal mask)·V`.
pub fn dense_attention(t: &AttnTensors, causal: bool) -> Matrix {
    let n = t.len();
    let keys = t.k.rows();
    let scale = 1.0 / (t.head_dim() as f64).sqrt();
    let mut out = Matrix::zeros(n, t.head_dim());
    let mut scores = Vec::with_capacity(keys);
    for i in 0..n {
        let end = if causal { (i + 1).min(keys) } else { keys };
        scores.clear();
        scores.extend((0..end).map(|j| dot(t.q.row(i), t.k.row(j)) * scale));
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            total += *s;
        }
        let row = out.row_mut(i);
        for (j, &p) in scores.iter().enumerate() {
            for (o, &v) in row.iter_mut().zip(t.v.row(j)) {
                *o += p * v;
            }
        }
        row.iter_mut().for_each(|o| *o /= total);
    }
    out
}

fn overlaps(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// Block-tiled attention that skips dropped blocks, with an online softmax
/// per query row.
///
/// Key block `kb` is visible to query block `qb` when both are kept, or when
/// `kb` overlaps `qb`'s token range (diagonal rescue). Causal masking is
/// applied per token on top.
pub fn sparse_attention(t: &AttnTensors, plan: &BlockMaskPlan, cfg: &AttnConfig) -> Matrix {
    let n = t.len();
    let d = t.head_dim();
    assert_eq!(t.k.rows(), n, "sparse attention needs square Q/K");
    assert_eq!(n, cfg.context_length, "tensor length differs from config");
    assert_eq!(plan.kept_rows.len(), cfg.row_blocks());
    assert_eq!(plan.kept_cols.len(), cfg.col_blocks());
    let (br, bc) = (cfg.block_rows, cfg.block_cols);
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Matrix::zeros(n, d);

    let mut visible = Vec::with_capacity(cfg.col_blocks());
    for qb in 0..cfg.row_blocks() {
        let q_range = (qb * br, ((qb + 1) * br).min(n));
        visible.clear();
        visible.extend((0..cfg.col_blocks()).filter(|&kb| {
            let k_range = (kb * bc, ((kb + 1) * bc).min(n));
            overlaps(q_range, k_range) || (plan.kept_rows[qb] && plan.kept_cols[kb])
        }));

        for i in q_range.0..q_range.1 {
            let q = t.q.row(i);
            let mut max = f64::NEG_INFINITY;
            let mut total = 0.0;
            let mut acc = vec![0.0; d];
            for &kb in &visible {
                let start = kb * bc;
                let mut end = ((kb + 1) * bc).min(n);
                if cfg.causal {
                    end = end.min(i + 1);
                }
                if start >= end {
                    continue;
                }
                for j in start..end {
                    let s = dot(q, t.k.row(j)) * scale;
                    if s > max {
                        let c = (max - s).exp();
                        total *= c;
                        acc.iter_mut().for_each(|a| *a *= c);
                        max = s;
                    }
                    let p = (s - max).exp();
                    total += p;
                    for (a, &v) in acc.iter_mut().zip(t.v.row(j)) {
                        *a += p * v;
                    }
                }
            }
            for (o, a) in out.row_mut(i).iter_mut().zip(&acc) {
                *o = a / total;
            }
        }
    }
    out
}
