//! Seeded runs that produce the line-delimited report records.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::prflash::{build_mask, dense_attention, sparse_attention, AttnConfig, AttnError, AttnTensors};
use crate::saq::{baseline_decode, ProjectionWeights, SaqError, StaircaseConfig, ToyDecoder};

fn timed<T>(enabled: bool, f: impl FnOnce() -> T) -> (T, Option<f64>) {
    let start = Instant::now();
    let out = f();
    (out, enabled.then(|| start.elapsed().as_secs_f64()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnRecord {
    pub record: String,
    pub trial: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "B_r")]
    pub block_rows: usize,
    #[serde(rename = "B_c")]
    pub block_cols: usize,
    pub k: usize,
    pub w: f64,
    pub s: f64,
    pub seed: u64,
    pub causal: bool,
    pub kept_row_fraction: f64,
    pub kept_col_fraction: f64,
    pub max_abs_diff_vs_dense: f64,
    pub wall_time_dense: Option<f64>,
    pub wall_time_sparse: Option<f64>,
}

/// Tensors for a trial come from stream 1 of the config's seed so they are
/// independent of the mask draws.
pub fn trial_tensors(cfg: &AttnConfig) -> AttnTensors {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    AttnTensors::random(cfg.context_length, cfg.head_dim, &mut rng)
}

pub fn run_attn_trial(cfg: &AttnConfig, trial: usize, timing: bool) -> Result<AttnRecord, AttnError> {
    let plan = build_mask(cfg)?;
    let tensors = trial_tensors(cfg);
    let (dense, wall_time_dense) = timed(timing, || dense_attention(&tensors, cfg.causal));
    let (sparse, wall_time_sparse) = timed(timing, || sparse_attention(&tensors, &plan, cfg));
    Ok(AttnRecord {
        record: "attn".into(),
        trial,
        n: cfg.context_length,
        block_rows: cfg.block_rows,
        block_cols: cfg.block_cols,
        k: cfg.threshold_range,
        w: cfg.weight,
        s: cfg.target_drop,
        seed: cfg.seed,
        causal: cfg.causal,
        kept_row_fraction: plan.kept_row_fraction(),
        kept_col_fraction: plan.kept_col_fraction(),
        max_abs_diff_vs_dense: sparse.max_abs_diff(&dense),
        wall_time_dense,
        wall_time_sparse,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvParams {
    pub prompt_len: usize,
    pub gen_len: usize,
    pub segment_size: usize,
    pub group_size: usize,
    pub ladder: Vec<u8>,
    pub dim: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvStepRecord {
    pub record: String,
    pub l_prompt: usize,
    pub gen_len: usize,
    #[serde(rename = "S")]
    pub segment_size: usize,
    #[serde(rename = "G")]
    pub group_size: usize,
    pub ladder: Vec<u8>,
    pub seed: u64,
    pub step: usize,
    pub max_abs_err: f64,
    pub mean_abs_err: f64,
    pub theoretical_cache_bits: u64,
    pub baseline_cache_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvSummary {
    pub record: String,
    pub l_prompt: usize,
    pub gen_len: usize,
    #[serde(rename = "S")]
    pub segment_size: usize,
    #[serde(rename = "G")]
    pub group_size: usize,
    pub ladder: Vec<u8>,
    pub seed: u64,
    pub dim: usize,
    pub prefill_cache_bits: u64,
    pub prefill_baseline_bits: u64,
    pub theoretical_cache_bits: u64,
    pub baseline_cache_bits: u64,
    pub cache_bits_ratio: f64,
    pub max_abs_err: f64,
    pub mean_abs_err: f64,
    pub wall_time_saq: Option<f64>,
    pub wall_time_baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KvRun {
    pub steps: Vec<KvStepRecord>,
    pub summary: KvSummary,
}

/// Weights, prompt and generated-token embeddings, drawn in that order.
pub fn kv_inputs(dim: usize, prompt_len: usize, gen_len: usize, seed: u64) -> (ProjectionWeights, Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = ProjectionWeights::random(dim, &mut rng);
    let prompt = Matrix::random_uniform(prompt_len, dim, -1.0, 1.0, &mut rng);
    let tokens = Matrix::random_uniform(gen_len, dim, -1.0, 1.0, &mut rng);
    (weights, prompt, tokens)
}

/// Runs staircase decoding and the full-precision baseline on the same
/// seeded stream and compares every step.
pub fn run_kv(p: &KvParams, timing: bool) -> Result<KvRun, SaqError> {
    let config = StaircaseConfig::new(p.segment_size, p.group_size, p.ladder.clone())?;
    if p.dim == 0 {
        return Err(SaqError::InvalidConfig("model dim must be at least 1".into()));
    }
    let (weights, prompt, tokens) = kv_inputs(p.dim, p.prompt_len, p.gen_len, p.seed);
    let (baseline, wall_time_baseline) = timed(timing, || baseline_decode(&weights, &prompt, &tokens));

    let mut decoder = ToyDecoder::new(weights, config)?;
    let start = Instant::now();
    decoder.prefill(&prompt)?;
    let cache = decoder.cache().expect("prefilled");
    let (prefill_cache_bits, prefill_baseline_bits) = (cache.theoretical_bits(), cache.baseline_bits());

    let mut outputs = Vec::with_capacity(p.gen_len);
    let mut ledgers = Vec::with_capacity(p.gen_len);
    for step in 0..p.gen_len {
        outputs.push(decoder.decode_step(tokens.row(step))?.output);
        let c = decoder.cache().expect("prefilled");
        ledgers.push((c.theoretical_bits(), c.baseline_bits()));
    }
    let wall_time_saq = timing.then(|| start.elapsed().as_secs_f64());

    let mut steps = Vec::with_capacity(p.gen_len);
    let (mut overall_max, mut overall_sum) = (0.0f64, 0.0);
    for (step, (out, (bits, base_bits))) in outputs.iter().zip(ledgers).enumerate() {
        let errs: Vec<f64> = out
            .iter()
            .zip(baseline.row(step))
            .map(|(a, b)| (a - b).abs())
            .collect();
        let max_abs_err = errs.iter().copied().fold(0.0, f64::max);
        let mean_abs_err = errs.iter().sum::<f64>() / errs.len() as f64;
        overall_max = overall_max.max(max_abs_err);
        overall_sum += mean_abs_err;
        steps.push(KvStepRecord {
            record: "kv_step".into(),
            l_prompt: p.prompt_len,
            gen_len: p.gen_len,
            segment_size: p.segment_size,
            group_size: p.group_size,
            ladder: p.ladder.clone(),
            seed: p.seed,
            step,
            max_abs_err,
            mean_abs_err,
            theoretical_cache_bits: bits,
            baseline_cache_bits: base_bits,
        });
    }

    let cache = decoder.cache().expect("prefilled");
    let (theoretical_cache_bits, baseline_cache_bits) = (cache.theoretical_bits(), cache.baseline_bits());
    let summary = KvSummary {
        record: "kv_summary".into(),
        l_prompt: p.prompt_len,
        gen_len: p.gen_len,
        segment_size: p.segment_size,
        group_size: p.group_size,
        ladder: p.ladder.clone(),
        seed: p.seed,
        dim: p.dim,
        prefill_cache_bits,
        prefill_baseline_bits,
        theoretical_cache_bits,
        baseline_cache_bits,
        cache_bits_ratio: theoretical_cache_bits as f64 / baseline_cache_bits as f64,
        max_abs_err: overall_max,
        mean_abs_err: if steps.is_empty() { 0.0 } else { overall_sum / steps.len() as f64 },
        wall_time_saq,
        wall_time_baseline,
    };
    Ok(KvRun { steps, summary })
}
