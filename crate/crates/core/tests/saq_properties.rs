use attnmosaic::experiment::{run_kv, KvParams};
use attnmosaic::saq::{dequantize, quantize, staircase_bits, StaircaseCache, StaircaseConfig};
use attnmosaic::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn params(prompt_len: usize, gen_len: usize, ladder: &[u8], seed: u64) -> KvParams {
    KvParams {
        prompt_len,
        gen_len,
        segment_size: 32,
        group_size: 8,
        ladder: ladder.to_vec(),
        dim: 16,
        seed,
    }
}

#[test]
fn round_trip_stays_within_half_a_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let normal = Normal::new(0.0, 3.0).unwrap();
    let mut violations = 0;
    for _ in 0..1000 {
        let len = rng.random_range(1..=256);
        let x: Vec<f64> = (0..len).map(|_| normal.sample(&mut rng)).collect();
        for bits in [2u8, 4, 8, 16] {
            let (codes, spec) = quantize(&x, bits);
            let y = dequantize(&codes, &spec);
            let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if err > spec.scale / 2.0 {
                violations += 1;
            }
        }
    }
    assert_eq!(violations, 0);
}

#[test]
fn on_grid_inputs_round_trip_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        for bits in [2u8, 4, 8, 16] {
            let levels = (1u32 << bits) - 1;
            let zero = f64::from(rng.random_range(-8i32..=8));
            let scale = 2f64.powi(-rng.random_range(0..6));
            let mut codes: Vec<u32> = (0..30).map(|_| rng.random_range(0..=levels)).collect();
            codes.push(0);
            codes.push(levels);
            let x: Vec<f64> = codes.iter().map(|&c| zero + f64::from(c) * scale).collect();
            let (q, spec) = quantize(&x, bits);
            assert_eq!(dequantize(&q, &spec), x);
        }
    }
}

#[test]
fn single_rung_ladder_matches_baseline() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = params(rng.random_range(1..=512), rng.random_range(0..=64), &[16], seed);
        let run = run_kv(&p, false).unwrap();
        assert!(run.summary.max_abs_err <= 1e-6, "seed {seed}: {}", run.summary.max_abs_err);
    }
}

#[test]
fn deeper_ladders_never_reduce_mean_error() {
    let ladders: [&[u8]; 4] = [&[16], &[16, 8], &[16, 8, 4], &[16, 8, 4, 2]];
    let means: Vec<f64> = ladders
        .iter()
        .map(|ladder| {
            (0..10u64)
                .map(|seed| run_kv(&params(256, 16, ladder, seed), false).unwrap().summary.mean_abs_err)
                .sum::<f64>()
                / 10.0
        })
        .collect();
    for w in means.windows(2) {
        assert!(w[0] <= w[1], "{means:?}");
    }
}

/// Bit ledger summed group by group: keys carry one quantizer per channel, values
/// one per token, 16-bit groups carry none.
fn hand_ledger(len: usize, dim: usize, s: usize, g: usize, ladder: &[u8]) -> u64 {
    let quantized = if len > s { (len - s).div_ceil(g) * g } else { 0 };
    let mut total = 0u64;
    for start in (0..quantized).step_by(g) {
        let newest = start + g - 1;
        let rung = ((len - 1 - newest) / s).min(ladder.len() - 1);
        let b = u64::from(ladder[rung]);
        let specs = if b == 16 { 0 } else { (dim + g) as u64 };
        total += 2 * (g * dim) as u64 * b + specs * 32;
    }
    total + 2 * ((len - quantized) * dim) as u64 * 16
}

#[test]
fn staircase_ledger_beats_full_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (len, dim) = (512, 64);
    let keys = Matrix::random_uniform(len, dim, -1.0, 1.0, &mut rng);
    let values = Matrix::random_uniform(len, dim, -1.0, 1.0, &mut rng);
    let cfg = StaircaseConfig::new(128, 32, vec![16, 8, 4, 2]).unwrap();
    let cache = StaircaseCache::from_prefill(&keys, &values, cfg);
    assert_eq!(cache.theoretical_bits(), hand_ledger(len, dim, 128, 32, &[16, 8, 4, 2]));
    assert_eq!(cache.theoretical_bits(), 528_384);
    assert_eq!(cache.baseline_bits(), 1_048_576);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cache_tracks_the_staircase(prompt in 1usize..200, pushes in 0usize..80, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 4;
        let cfg = StaircaseConfig::new(16, 4, vec![16, 8, 4, 2]).unwrap();
        let keys = Matrix::random_uniform(prompt, dim, -1.0, 1.0, &mut rng);
        let values = Matrix::random_uniform(prompt, dim, -1.0, 1.0, &mut rng);
        let mut cache = StaircaseCache::from_prefill(&keys, &values, cfg.clone());
        for _ in 0..pushes {
            let k: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            cache.push(&k, &v);
        }
        let len = prompt + pushes;
        prop_assert_eq!(cache.len(), len);
        prop_assert!(cache.residual_len() <= 16);
        for g in cache.key_groups() {
            prop_assert_eq!(g.bits(), staircase_bits(g.newest(), len, &cfg));
        }
        prop_assert_eq!(cache.theoretical_bits(), hand_ledger(len, dim, 16, 4, &[16, 8, 4, 2]));
        prop_assert!(cache.theoretical_bits() <= cache.baseline_bits());
    }
}
