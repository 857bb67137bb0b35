use serde::{Deserialize, Serialize};

use super::quant::{dequantize, quantize, QuantSpec, FULL_PRECISION_BITS, SPEC_OVERHEAD_BITS};
use super::SaqError;
use crate::matrix::Matrix;

const ALLOWED_BITS: [u8; 5] = [16, 8, 4, 2, 1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaircaseConfig {
    /// Tokens per staircase segment (`S`).
    pub segment_size: usize,
    /// Tokens per quantization group (`G`), dividing `S`.
    pub group_size: usize,
    /// Bits per rung, newest first, starting at full precision.
    pub ladder: Vec<u8>,
}

impl StaircaseConfig {
    pub fn new(segment_size: usize, group_size: usize, ladder: Vec<u8>) -> Result<Self, SaqError> {
        let cfg = Self {
            segment_size,
            group_size,
            ladder,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SaqError> {
        let bad = |m: String| Err(SaqError::InvalidConfig(m));
        if self.segment_size == 0 || self.group_size == 0 {
            return bad("segment and group sizes must be at least 1".into());
        }
        if !self.segment_size.is_multiple_of(self.group_size) {
            return bad(format!(
                "group size {} does not divide segment size {}",
                self.group_size, self.segment_size
            ));
        }
        match self.ladder.first() {
            None => return bad("bit ladder is empty".into()),
            Some(&b) if b != FULL_PRECISION_BITS => {
                return bad(format!("bit ladder must start at {FULL_PRECISION_BITS}, got {b}"))
            }
            _ => {}
        }
        if let Some(b) = self.ladder.iter().find(|b| !ALLOWED_BITS.contains(b)) {
            return bad(format!("unsupported bit width {b}"));
        }
        if self.ladder.windows(2).any(|w| w[1] >= w[0]) {
            return bad(format!("bit ladder {:?} is not strictly decreasing", self.ladder));
        }
        Ok(())
    }

    pub fn rungs(&self) -> usize {
        self.ladder.len()
    }
}

/// Bits for a group whose newest token is `newest` when the sequence holds
/// `len` tokens: one rung down per whole segment of age, clamped at the last rung.
pub fn staircase_bits(newest: usize, len: usize, cfg: &StaircaseConfig) -> u8 {
    assert!(newest < len, "token {newest} outside sequence of {len}");
    let age = len - 1 - newest;
    let rung = (age / cfg.segment_size).min(cfg.rungs() - 1);
    cfg.ladder[rung]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantAxis {
    /// One zero-point/scale pair per channel across the group's tokens (keys).
    PerChannel,
    /// One zero-point/scale pair per token across channels (values).
    PerToken,
}

#[derive(Debug, Clone, PartialEq)]
enum GroupData {
    Full(Vec<f64>),
    Quantized {
        bits: u8,
        codes: Vec<u16>,
        specs: Vec<QuantSpec>,
    },
}

/// `len` consecutive tokens starting at `start`, row-major `len × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantGroup {
    pub start: usize,
    pub len: usize,
    pub dim: usize,
    pub axis: QuantAxis,
    data: GroupData,
}

impl QuantGroup {
    fn new(start: usize, dim: usize, axis: QuantAxis, values: Vec<f64>, bits: u8) -> Self {
        let len = values.len() / dim;
        let mut g = Self {
            start,
            len,
            dim,
            axis,
            data: GroupData::Full(values),
        };
        if bits != FULL_PRECISION_BITS {
            g.requantize(bits);
        }
        g
    }

    pub fn newest(&self) -> usize {
        self.start + self.len - 1
    }

    pub fn bits(&self) -> u8 {
        match &self.data {
            GroupData::Full(_) => FULL_PRECISION_BITS,
            GroupData::Quantized { bits, .. } => *bits,
        }
    }

    pub fn spec_count(&self) -> usize {
        match &self.data {
            GroupData::Full(_) => 0,
            GroupData::Quantized { specs, .. } => specs.len(),
        }
    }

    /// Row-major `len × dim` reconstruction.
    pub fn dequantize(&self) -> Vec<f64> {
        let (codes, specs) = match &self.data {
            GroupData::Full(v) => return v.clone(),
            GroupData::Quantized { codes, specs, .. } => (codes, specs),
        };
        let (len, dim) = (self.len, self.dim);
        let mut out = vec![0.0; len * dim];
        match self.axis {
            QuantAxis::PerToken => {
                for (t, spec) in specs.iter().enumerate() {
                    let row = dequantize(&codes[t * dim..(t + 1) * dim], spec);
                    out[t * dim..(t + 1) * dim].copy_from_slice(&row);
                }
            }
            QuantAxis::PerChannel => {
                for (c, spec) in specs.iter().enumerate() {
                    let col = dequantize(&codes[c * len..(c + 1) * len], spec);
                    for (t, v) in col.into_iter().enumerate() {
                        out[t * dim + c] = v;
                    }
                }
            }
        }
        out
    }

    /// Re-encodes the current (possibly already lossy) values at `bits`.
    fn requantize(&mut self, bits: u8) {
        let values = self.dequantize();
        let (len, dim) = (self.len, self.dim);
        let mut codes = Vec::with_capacity(len * dim);
        let mut specs = Vec::new();
        match self.axis {
            QuantAxis::PerToken => {
                for row in values.chunks(dim) {
                    let (c, s) = quantize(row, bits);
                    codes.extend(c);
                    specs.push(s);
                }
            }
            QuantAxis::PerChannel => {
                // codes stored channel-major
                let mut col = Vec::with_capacity(len);
                for c in 0..dim {
                    col.clear();
                    col.extend((0..len).map(|t| values[t * dim + c]));
                    let (cc, s) = quantize(&col, bits);
                    codes.extend(cc);
                    specs.push(s);
                }
            }
        }
        self.data = GroupData::Quantized { bits, codes, specs };
    }

    fn storage_bits(&self) -> u64 {
        let elems = (self.len * self.dim) as u64;
        elems * u64::from(self.bits()) + self.spec_count() as u64 * SPEC_OVERHEAD_BITS
    }
}

/// Quantized key/value groups followed by a full-precision residual of the
/// newest tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct StaircaseCache {
    dim: usize,
    config: StaircaseConfig,
    key_groups: Vec<QuantGroup>,
    value_groups: Vec<QuantGroup>,
    key_residual: Vec<f64>,
    value_residual: Vec<f64>,
    len: usize,
}

impl StaircaseCache {
    pub fn new(dim: usize, config: StaircaseConfig) -> Self {
        Self {
            dim,
            config,
            key_groups: Vec::new(),
            value_groups: Vec::new(),
            key_residual: Vec::new(),
            value_residual: Vec::new(),
            len: 0,
        }
    }

    /// Caches a whole prompt. The residual keeps at most `S` of the newest
    /// tokens; everything older is packed into whole groups of `G`.
    pub fn from_prefill(keys: &Matrix, values: &Matrix, config: StaircaseConfig) -> Self {
        assert_eq!(keys.rows(), values.rows());
        assert_eq!(keys.cols(), values.cols());
        let (len, dim) = (keys.rows(), keys.cols());
        let (s, g) = (config.segment_size, config.group_size);
        let packed = if len > s { (len - s).div_ceil(g) * g } else { 0 };

        let mut cache = Self::new(dim, config);
        cache.len = len;
        for start in (0..packed).step_by(g) {
            cache.pack_group(
                start,
                keys.as_slice()[start * dim..(start + g) * dim].to_vec(),
                values.as_slice()[start * dim..(start + g) * dim].to_vec(),
            );
        }
        cache.key_residual = keys.as_slice()[packed * dim..].to_vec();
        cache.value_residual = values.as_slice()[packed * dim..].to_vec();
        cache
    }

    fn pack_group(&mut self, start: usize, keys: Vec<f64>, values: Vec<f64>) {
        let g = self.config.group_size;
        let bits = staircase_bits(start + g - 1, self.len, &self.config);
        self.key_groups
            .push(QuantGroup::new(start, self.dim, QuantAxis::PerChannel, keys, bits));
        self.value_groups
            .push(QuantGroup::new(start, self.dim, QuantAxis::PerToken, values, bits));
    }

    /// Appends one token. When the residual overflows `S`, its oldest `G`
    /// tokens become a group, and every group that aged into a new segment
    /// steps down the ladder.
    pub fn push(&mut self, key: &[f64], value: &[f64]) {
        assert_eq!(key.len(), self.dim);
        assert_eq!(value.len(), self.dim);
        self.key_residual.extend_from_slice(key);
        self.value_residual.extend_from_slice(value);
        self.len += 1;

        let (s, g, dim) = (self.config.segment_size, self.config.group_size, self.dim);
        if self.residual_len() > s {
            let start = self.quantized_len();
            let keys: Vec<f64> = self.key_residual.drain(..g * dim).collect();
            let values: Vec<f64> = self.value_residual.drain(..g * dim).collect();
            self.pack_group(start, keys, values);
        }

        for group in self.key_groups.iter_mut().chain(self.value_groups.iter_mut()) {
            let target = staircase_bits(group.newest(), self.len, &self.config);
            if target < group.bits() {
                group.requantize(target);
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &StaircaseConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn residual_len(&self) -> usize {
        self.key_residual.len() / self.dim
    }

    pub fn quantized_len(&self) -> usize {
        self.len - self.residual_len()
    }

    pub fn key_groups(&self) -> &[QuantGroup] {
        &self.key_groups
    }

    pub fn value_groups(&self) -> &[QuantGroup] {
        &self.value_groups
    }

    pub fn key_residual(&self) -> &[f64] {
        &self.key_residual
    }

    pub fn value_residual(&self) -> &[f64] {
        &self.value_residual
    }

    /// Bits of each group, oldest first.
    pub fn group_bits(&self) -> Vec<u8> {
        self.key_groups.iter().map(QuantGroup::bits).collect()
    }

    /// All keys as seen by attention: dequantized groups then the residual.
    pub fn keys(&self) -> Matrix {
        self.assemble(&self.key_groups, &self.key_residual)
    }

    pub fn values(&self) -> Matrix {
        self.assemble(&self.value_groups, &self.value_residual)
    }

    fn assemble(&self, groups: &[QuantGroup], residual: &[f64]) -> Matrix {
        let mut data = Vec::with_capacity(self.len * self.dim);
        for g in groups {
            data.extend(g.dequantize());
        }
        data.extend_from_slice(residual);
        Matrix::from_vec(self.len, self.dim, data)
    }

    /// Theoretical storage: group payloads at their bits plus 32 bits per
    /// zero-point/scale pair, residual at 16 bits, keys and values both.
    pub fn theoretical_bits(&self) -> u64 {
        let groups: u64 = self
            .key_groups
            .iter()
            .chain(&self.value_groups)
            .map(QuantGroup::storage_bits)
            .sum();
        let residual = (self.key_residual.len() + self.value_residual.len()) as u64;
        groups + residual * u64::from(FULL_PRECISION_BITS)
    }

    /// Storage of the same tokens kept entirely at full precision.
    pub fn baseline_bits(&self) -> u64 {
        2 * (self.len * self.dim) as u64 * u64::from(FULL_PRECISION_BITS)
    }
}
