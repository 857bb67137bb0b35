use serde::{Deserialize, Serialize};

/// Bit width treated as full precision; groups at this rung keep their raw values.
pub const FULL_PRECISION_BITS: u8 = 16;

/// Storage cost of one zero-point/scale pair (two 16-bit floats).
pub const SPEC_OVERHEAD_BITS: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub bits: u8,
    pub zero_point: f64,
    pub scale: f64,
}

impl QuantSpec {
    pub fn max_code(&self) -> u16 {
        ((1u32 << self.bits) - 1) as u16
    }
}

/// Asymmetric min/max quantization to `bits`-bit codes, rounding to nearest
/// (ties to even). A constant input gets scale 1 and all-zero codes.
pub fn quantize(x: &[f64], bits: u8) -> (Vec<u16>, QuantSpec) {
    assert!((1..=16).contains(&bits), "bits must be in 1..=16");
    assert!(!x.is_empty(), "cannot quantize an empty tensor");
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let levels = f64::from((1u32 << bits) - 1);
    if hi == lo {
        let spec = QuantSpec {
            bits,
            zero_point: lo,
            scale: 1.0,
        };
        return (vec![0; x.len()], spec);
    }
    let scale = (hi - lo) / levels;
    let codes = x
        .iter()
        .map(|&v| ((v - lo) / scale).round_ties_even().clamp(0.0, levels) as u16)
        .collect();
    let spec = QuantSpec {
        bits,
        zero_point: lo,
        scale,
    };
    (codes, spec)
}

pub fn dequantize(codes: &[u16], spec: &QuantSpec) -> Vec<f64> {
    codes
        .iter()
        .map(|&c| f64::from(c) * spec.scale + spec.zero_point)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_err(x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn on_grid_values_round_trip_exactly() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let (codes, spec) = quantize(&x, 2);
        assert_eq!(codes, vec![0, 1, 2, 3]);
        assert_eq!((spec.zero_point, spec.scale), (0.0, 1.0));
        assert_eq!(dequantize(&codes, &spec), x.to_vec());
    }

    #[test]
    fn rounds_to_nearest() {
        let x = [0.0, 0.4, 2.6, 3.0];
        let (codes, spec) = quantize(&x, 2);
        assert_eq!(codes, vec![0, 0, 3, 3]);
        let back = dequantize(&codes, &spec);
        assert_eq!(back, vec![0.0, 0.0, 3.0, 3.0]);
        assert!((max_err(&x, &back) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn ties_go_to_even() {
        let (codes, _) = quantize(&[0.0, 0.5, 1.5, 2.5, 3.0], 2);
        assert_eq!(codes, vec![0, 0, 2, 2, 3]);
    }

    #[test]
    fn constant_tensor() {
        let (codes, spec) = quantize(&[-2.5; 7], 4);
        assert!(codes.iter().all(|&c| c == 0));
        assert_eq!((spec.zero_point, spec.scale), (-2.5, 1.0));
        assert_eq!(dequantize(&codes, &spec), vec![-2.5; 7]);
    }

    #[test]
    fn sixteen_bits_unit_range() {
        let x: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.618).fract()).collect();
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let x: Vec<f64> = x.iter().map(|v| (v - lo) / (hi - lo)).collect();
        let (codes, spec) = quantize(&x, 16);
        assert!(max_err(&x, &dequantize(&codes, &spec)) <= 1.0 / (2.0 * 65535.0));
    }

    proptest! {
        #[test]
        fn half_step_bound(
            x in proptest::collection::vec(-100.0f64..100.0, 2..64),
            bits in prop::sample::select(vec![1u8, 2, 4, 8, 16]),
        ) {
            let (codes, spec) = quantize(&x, bits);
            prop_assert!(codes.iter().all(|&c| c <= spec.max_code()));
            let back = dequantize(&codes, &spec);
            if spec.scale != 1.0 || x.iter().any(|&v| v != x[0]) {
                prop_assert!(max_err(&x, &back) <= spec.scale / 2.0);
            }
        }

        #[test]
        fn more_bits_never_hurt(x in proptest::collection::vec(-10.0f64..10.0, 2..64)) {
            let err = |b| {
                let (c, s) = quantize(&x, b);
                max_err(&x, &dequantize(&c, &s))
            };
            // the B-bit grid is a subset of the 2B-bit grid; exact half-step
            // ties can differ by rounding noise only
            let slack = 1e-12 * 20.0;
            prop_assert!(err(2) + slack >= err(4));
            prop_assert!(err(4) + slack >= err(8));
            prop_assert!(err(8) + slack >= err(16));
        }
    }
}
