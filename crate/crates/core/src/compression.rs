//! Gradient codecs with error feedback.
//!
//! Every codec encodes `c = grad + residual` and hands back the new residual
//! `c − decode(encoded)`, so whatever the codec discards is carried into the
//! next encoding instead of being lost. Residuals stay with the producing
//! worker and are never transmitted.

use crate::error::{check_len, Error, Result};

/// Bits charged per dense value.
pub const VALUE_BITS: u64 = 64;
/// Bits charged per sparse index.
pub const INDEX_BITS: u64 = 32;
/// Bits charged for the two sign-codec scales.
pub const SCALE_BITS: u64 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Codec {
    Identity,
    OneBit,
    TopK { k: usize },
}

impl Codec {
    pub fn name(&self) -> &'static str {
        match self {
            Codec::Identity => "identity",
            Codec::OneBit => "one_bit",
            Codec::TopK { .. } => "top_k",
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        match *self {
            Codec::TopK { k } if k == 0 || k > m => Err(Error::config(
                "codec.k",
                format!("must be in [1, {m}], got {k}"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncodedGradient {
    Dense(Vec<f64>),
    OneBit {
        len: usize,
        /// Bit `i` set means coordinate `i` was `>= 0`.
        signs: Vec<u64>,
        positive_scale: f64,
        negative_scale: f64,
    },
    TopK {
        len: usize,
        /// Strictly ascending indices.
        entries: Vec<(u32, f64)>,
    },
}

impl EncodedGradient {
    pub fn len(&self) -> usize {
        match self {
            EncodedGradient::Dense(v) => v.len(),
            EncodedGradient::OneBit { len, .. } | EncodedGradient::TopK { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn codec_tag(&self) -> &'static str {
        match self {
            EncodedGradient::Dense(_) => "identity",
            EncodedGradient::OneBit { .. } => "one_bit",
            EncodedGradient::TopK { .. } => "top_k",
        }
    }
}

/// Per-worker error-feedback accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual(Vec<f64>);

impl Residual {
    pub fn zeros(m: usize) -> Self {
        Residual(vec![0.0; m])
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Residual(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

pub fn encode(
    codec: Codec,
    grad: &[f64],
    residual: &Residual,
) -> Result<(EncodedGradient, Residual)> {
    let m = grad.len();
    check_len("residual", m, residual.0.len())?;
    codec.validate(m)?;
    if grad.iter().chain(&residual.0).any(|v| !v.is_finite()) {
        return Err(Error::Divergence(
            "non-finite value passed to encoder".into(),
        ));
    }
    let c: Vec<f64> = grad.iter().zip(&residual.0).map(|(g, r)| g + r).collect();

    let encoded = match codec {
        Codec::Identity => {
            return Ok((EncodedGradient::Dense(c), Residual::zeros(m)));
        }
        Codec::OneBit => encode_sign(&c),
        Codec::TopK { k } => encode_topk(&c, k),
    };
    let decoded = decode(&encoded, m)?;
    let residual = c.iter().zip(&decoded).map(|(c, d)| c - d).collect();
    Ok((encoded, Residual(residual)))
}

fn encode_sign(c: &[f64]) -> EncodedGradient {
    let mut signs = vec![0u64; c.len().div_ceil(64)];
    let (mut pos_sum, mut pos_n, mut neg_sum, mut neg_n) = (0.0, 0usize, 0.0, 0usize);
    for (i, &v) in c.iter().enumerate() {
        if v >= 0.0 {
            signs[i / 64] |= 1 << (i % 64);
            pos_sum += v;
            pos_n += 1;
        } else {
            neg_sum -= v;
            neg_n += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    EncodedGradient::OneBit {
        len: c.len(),
        signs,
        positive_scale: mean(pos_sum, pos_n),
        negative_scale: mean(neg_sum, neg_n),
    }
}

fn encode_topk(c: &[f64], k: usize) -> EncodedGradient {
    let mut order: Vec<usize> = (0..c.len()).collect();
    // Larger magnitude first; equal magnitudes keep the lower index.
    order.sort_by(|&a, &b| c[b].abs().total_cmp(&c[a].abs()).then(a.cmp(&b)));
    let mut kept: Vec<usize> = order[..k].to_vec();
    kept.sort_unstable();
    EncodedGradient::TopK {
        len: c.len(),
        entries: kept.into_iter().map(|i| (i as u32, c[i])).collect(),
    }
}

pub fn decode(encoded: &EncodedGradient, m: usize) -> Result<Vec<f64>> {
    if encoded.len() != m {
        return Err(Error::CorruptPayload(format!(
            "payload length {} for a vector of length {m}",
            encoded.len()
        )));
    }
    match encoded {
        EncodedGradient::Dense(v) => Ok(v.clone()),
        EncodedGradient::OneBit {
            signs,
            positive_scale,
            negative_scale,
            ..
        } => {
            if signs.len() != m.div_ceil(64) {
                return Err(Error::CorruptPayload(
                    "sign bitmap has the wrong length".into(),
                ));
            }
            Ok((0..m)
                .map(|i| {
                    if signs[i / 64] >> (i % 64) & 1 == 1 {
                        *positive_scale
                    } else {
                        -negative_scale
                    }
                })
                .collect())
        }
        EncodedGradient::TopK { entries, .. } => {
            let mut out = vec![0.0; m];
            let mut prev: Option<u32> = None;
            for &(i, v) in entries {
                if i as usize >= m {
                    return Err(Error::CorruptPayload(format!("index {i} >= {m}")));
                }
                if prev.is_some_and(|p| p >= i) {
                    return Err(Error::CorruptPayload(
                        "indices not strictly ascending".into(),
                    ));
                }
                prev = Some(i);
                out[i as usize] = v;
            }
            Ok(out)
        }
    }
}

/// Size charged to the network for this payload.
pub fn encoded_size_bits(encoded: &EncodedGradient) -> u64 {
    match encoded {
        EncodedGradient::Dense(v) => VALUE_BITS * v.len() as u64,
        EncodedGradient::OneBit { len, .. } => *len as u64 + SCALE_BITS,
        EncodedGradient::TopK { entries, .. } => entries.len() as u64 * (INDEX_BITS + VALUE_BITS),
    }
}
