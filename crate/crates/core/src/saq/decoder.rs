use rand::Rng;

use super::cache::{StaircaseCache, StaircaseConfig};
use super::SaqError;
use crate::matrix::{dot, Matrix};

/// Fixed `d × d` query/key/value projections.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionWeights {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

impl ProjectionWeights {
    /// Entries uniform in `[-1/√d, 1/√d)`.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let a = 1.0 / (dim as f64).sqrt();
        Self {
            w_q: Matrix::random_uniform(dim, dim, -a, a, rng),
            w_k: Matrix::random_uniform(dim, dim, -a, a, rng),
            w_v: Matrix::random_uniform(dim, dim, -a, a, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }
}

/// Output of one decode step. The attention weights are split at the
/// boundary between quantized groups and the full-precision residual.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeStep {
    pub output: Vec<f64>,
    pub group_weights: Vec<f64>,
    pub residual_weights: Vec<f64>,
}

fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    scores.iter_mut().for_each(|s| *s /= total);
}

/// Single-layer, single-head attention decoder over a staircase cache.
#[derive(Debug, Clone)]
pub struct ToyDecoder {
    weights: ProjectionWeights,
    config: StaircaseConfig,
    cache: Option<StaircaseCache>,
}

impl ToyDecoder {
    pub fn new(weights: ProjectionWeights, config: StaircaseConfig) -> Result<Self, SaqError> {
        config.validate()?;
        Ok(Self {
            weights,
            config,
            cache: None,
        })
    }

    pub fn weights(&self) -> &ProjectionWeights {
        &self.weights
    }

    pub fn cache(&self) -> Option<&StaircaseCache> {
        self.cache.as_ref()
    }

    /// Projects the prompt, caches it (quantized where old enough) and
    /// returns the exact full-precision keys and values.
    pub fn prefill(&mut self, prompt: &Matrix) -> Result<(Matrix, Matrix), SaqError> {
        if prompt.rows() == 0 {
            return Err(SaqError::EmptyPrompt);
        }
        self.check_dim(prompt.cols())?;
        let keys = prompt.matmul(&self.weights.w_k);
        let values = prompt.matmul(&self.weights.w_v);
        self.cache = Some(StaircaseCache::from_prefill(
            &keys,
            &values,
            self.config.clone(),
        ));
        Ok((keys, values))
    }

    /// Appends token `t` to the cache and attends over every cached token.
    pub fn decode_step(&mut self, token: &[f64]) -> Result<DecodeStep, SaqError> {
        self.check_dim(token.len())?;
        let cache = self.cache.as_mut().ok_or(SaqError::NotPrefilled)?;
        let q = self.weights.w_q.vec_mul(token);
        let k = self.weights.w_k.vec_mul(token);
        let v = self.weights.w_v.vec_mul(token);
        cache.push(&k, &v);

        let keys = cache.keys();
        let values = cache.values();
        let scale = 1.0 / (q.len() as f64).sqrt();
        let mut weights: Vec<f64> = (0..keys.rows())
            .map(|j| dot(&q, keys.row(j)) * scale)
            .collect();
        softmax_in_place(&mut weights);

        let mut output = vec![0.0; q.len()];
        for (j, &p) in weights.iter().enumerate() {
            for (o, &x) in output.iter_mut().zip(values.row(j)) {
                *o += p * x;
            }
        }
        let residual_weights = weights.split_off(cache.quantized_len());
        Ok(DecodeStep {
            output,
            group_weights: weights,
            residual_weights,
        })
    }

    fn check_dim(&self, actual: usize) -> Result<(), SaqError> {
        let expected = self.weights.dim();
        if actual != expected {
            return Err(SaqError::DimensionMismatch { expected, actual });
        }
        Ok(())
    }
}

/// Reference decode with an unquantized, unbounded cache. Row `i` of the
/// result is the output for `tokens` row `i`.
pub fn baseline_decode(weights: &ProjectionWeights, prompt: &Matrix, tokens: &Matrix) -> Matrix {
    let d = weights.dim();
    let mut keys: Vec<Vec<f64>> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    for i in 0..prompt.rows() {
        keys.push(weights.w_k.vec_mul(prompt.row(i)));
        values.push(weights.w_v.vec_mul(prompt.row(i)));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Matrix::zeros(tokens.rows(), d);
    for step in 0..tokens.rows() {
        let t = tokens.row(step);
        let q = weights.w_q.vec_mul(t);
        keys.push(weights.w_k.vec_mul(t));
        values.push(weights.w_v.vec_mul(t));
        let mut scores: Vec<f64> = keys.iter().map(|k| dot(&q, k) * scale).collect();
        softmax_in_place(&mut scores);
        let row = out.row_mut(step);
        for (p, v) in scores.iter().zip(&values) {
            for (o, &x) in row.iter_mut().zip(v) {
                *o += p * x;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64, dim: usize, ladder: &[u8]) -> ToyDecoder {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = ProjectionWeights::random(dim, &mut rng);
        ToyDecoder::new(w, StaircaseConfig::new(16, 4, ladder.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn decode_before_prefill_fails() {
        let mut d = setup(1, 4, &[16]);
        assert_eq!(d.decode_step(&[0.0; 4]), Err(SaqError::NotPrefilled));
        assert_eq!(d.prefill(&Matrix::zeros(0, 4)), Err(SaqError::EmptyPrompt));
        assert!(matches!(
            d.prefill(&Matrix::zeros(2, 3)),
            Err(SaqError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn prefill_returns_exact_projections() {
        let mut d = setup(2, 6, &[16, 4, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let x = Matrix::random_uniform(70, 6, -1.0, 1.0, &mut rng);
        let (k, v) = d.prefill(&x).unwrap();
        assert_eq!(k, x.matmul(&d.weights().w_k));
        assert_eq!(v, x.matmul(&d.weights().w_v));
        assert_ne!(d.cache().unwrap().keys(), k);
    }

    #[test]
    fn one_token_prompt_then_exact_step() {
        let mut d = setup(3, 5, &[16, 8, 4, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let x = Matrix::random_uniform(1, 5, -1.0, 1.0, &mut rng);
        let t = Matrix::random_uniform(1, 5, -1.0, 1.0, &mut rng);
        d.prefill(&x).unwrap();
        let step = d.decode_step(t.row(0)).unwrap();
        assert_eq!(step.residual_weights.len(), 2);
        assert!(step.group_weights.is_empty());
        let base = baseline_decode(d.weights(), &x, &t);
        for (a, b) in step.output.iter().zip(base.row(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_token_identity_by_hand() {
        // d=2, identity projections, prompt [1,0], token [0,1]:
        // q=[0,1], keys [1,0],[0,1] -> scores 0, 1/√2
        let w = ProjectionWeights {
            w_q: Matrix::identity(2),
            w_k: Matrix::identity(2),
            w_v: Matrix::identity(2),
        };
        let prompt = Matrix::from_rows(&[vec![1.0, 0.0]]);
        let tok = Matrix::from_rows(&[vec![0.0, 1.0]]);
        let out = baseline_decode(&w, &prompt, &tok);
        let e = (1.0 / 2f64.sqrt()).exp();
        let want = [1.0 / (1.0 + e), e / (1.0 + e)];
        assert!((out[(0, 0)] - want[0]).abs() < 1e-15);
        assert!((out[(0, 1)] - want[1]).abs() < 1e-15);

        let mut d = ToyDecoder::new(w, StaircaseConfig::new(4, 2, vec![16]).unwrap()).unwrap();
        d.prefill(&prompt).unwrap();
        assert_eq!(d.decode_step(tok.row(0)).unwrap().output, out.row(0).to_vec());
    }

    #[test]
    fn weights_split_sums_to_one() {
        let mut d = setup(4, 8, &[16, 8, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        d.prefill(&Matrix::random_uniform(45, 8, -1.0, 1.0, &mut rng)).unwrap();
        for _ in 0..30 {
            let t = Matrix::random_uniform(1, 8, -1.0, 1.0, &mut rng);
            let s = d.decode_step(t.row(0)).unwrap();
            let cache = d.cache().unwrap();
            assert_eq!(s.residual_weights.len(), cache.residual_len());
            assert_eq!(s.group_weights.len(), cache.quantized_len());
            let total: f64 = s.group_weights.iter().chain(&s.residual_weights).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
