//! Symmetric linear quantization with per-group scales.
//!
//! A group `x` is mapped to integer codes
//!
//! ```text
//! S      = max(|x|) / denominator
//! code_i = clamp(round(x_i / S), -2^(b-1), 2^(b-1) - 1)
//! x̂_i    = S * code_i
//! ```
//!
//! `round` is half-away-from-zero. The default denominator is `2^(b-1) - 1`,
//! which maps `max(|x|)` onto the largest positive code so nothing is clipped.
//! [`ScaleDenominator::FullRange`] selects `2^b - 1` instead, under which every
//! element above `max(|x|)/2` in magnitude saturates. A group of all zeros gets
//! `S = 1` and zero codes.
//!
//! INT4 codes are stored two per byte in two's complement, element `2i` in the
//! low nibble and `2i+1` in the high nibble; an odd tail is padded with zero.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bf16::Bf16;
use crate::dtype::{DType, Kind};
use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleDenominator {
    /// `2^(b-1) - 1`
    #[default]
    Symmetric,
    /// `2^b - 1`
    FullRange,
}

impl ScaleDenominator {
    pub fn value(self, bits: u32) -> f64 {
        match self {
            ScaleDenominator::Symmetric => f64::from((1u32 << (bits - 1)) - 1),
            ScaleDenominator::FullRange => f64::from((1u32 << bits) - 1),
        }
    }
}

impl FromStr for ScaleDenominator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(ScaleDenominator::Symmetric),
            "full-range" | "full_range" => Ok(ScaleDenominator::FullRange),
            other => Err(Error::InvalidConfig(format!("unknown scale denominator `{other}`"))),
        }
    }
}

impl fmt::Display for ScaleDenominator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScaleDenominator::Symmetric => "symmetric",
            ScaleDenominator::FullRange => "full-range",
        })
    }
}

/// Inclusive code range for `bits`.
pub fn code_range(bits: u32) -> (i32, i32) {
    let half = 1i32 << (bits - 1);
    (-half, half - 1)
}

fn check_bits(bits: u32) -> Result<()> {
    match bits {
        4 | 8 => Ok(()),
        other => Err(Error::InvalidConfig(format!("integer quantization needs 4 or 8 bits, got {other}"))),
    }
}

/// Quantizes one group into `out`, returning its scale.
pub fn quantize_group_into(x: &[f32], bits: u32, denom: ScaleDenominator, out: &mut [i8]) -> Result<f32> {
    check_bits(bits)?;
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    if out.len() != x.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: out.len() });
    }
    let mut max_abs = 0f32;
    for &v in x {
        if !v.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        max_abs = max_abs.max(v.abs());
    }
    if max_abs == 0.0 {
        out.fill(0);
        return Ok(1.0);
    }
    let denominator = denom.value(bits);
    let (lo, hi) = code_range(bits);
    // x / S evaluated as x * denominator / max so ties land exactly.
    let ratio = denominator / f64::from(max_abs);
    for (o, &v) in out.iter_mut().zip(x) {
        let code = (f64::from(v) * ratio).round().clamp(f64::from(lo), f64::from(hi));
        *o = code as i8;
    }
    Ok((f64::from(max_abs) / denominator) as f32)
}

/// Symmetric quantization of one group with the default denominator.
pub fn quantize_group(x: &[f32], bits: u32) -> Result<(Vec<i8>, f32)> {
    quantize_group_with(x, bits, ScaleDenominator::Symmetric)
}

pub fn quantize_group_with(x: &[f32], bits: u32, denom: ScaleDenominator) -> Result<(Vec<i8>, f32)> {
    let mut codes = vec![0i8; x.len()];
    let scale = quantize_group_into(x, bits, denom, &mut codes)?;
    Ok((codes, scale))
}

pub fn dequantize_group(codes: &[i8], scale: f32) -> Vec<f32> {
    codes.iter().map(|&c| scale * f32::from(c)).collect()
}

/// Packs signed 4-bit codes two per byte.
pub fn pack_int4(codes: &[i8]) -> Result<Vec<u8>> {
    let mut out = vec![0u8; codes.len().div_ceil(2)];
    pack_int4_into(codes, &mut out)?;
    Ok(out)
}

fn pack_int4_into(codes: &[i8], out: &mut [u8]) -> Result<()> {
    for (byte, pair) in out.iter_mut().zip(codes.chunks(2)) {
        let mut packed = 0u8;
        for (shift, &c) in [0u8, 4].iter().zip(pair) {
            if !(-8..=7).contains(&c) {
                return Err(Error::CodeOutOfRange(i32::from(c)));
            }
            packed |= ((c as u8) & 0x0F) << shift;
        }
        *byte = packed;
    }
    Ok(())
}

#[inline]
fn nibble(v: u8) -> i8 {
    // sign-extend a 4-bit two's complement value
    ((v << 4) as i8) >> 4
}

/// Inverse of [`pack_int4`].
pub fn unpack_int4(bytes: &[u8], count: usize) -> Result<Vec<i8>> {
    if count.div_ceil(2) > bytes.len() {
        return Err(Error::LengthMismatch { left: count.div_ceil(2), right: bytes.len() });
    }
    let mut out = vec![0i8; count];
    unpack_int4_into(bytes, &mut out);
    Ok(out)
}

pub(crate) fn unpack_int4_into(bytes: &[u8], out: &mut [i8]) {
    for (pair, &b) in out.chunks_mut(2).zip(bytes) {
        pair[0] = nibble(b & 0x0F);
        if let Some(hi) = pair.get_mut(1) {
            *hi = nibble(b >> 4);
        }
    }
}

/// Element storage for one or more vectors of the same dtype.
#[derive(Debug, Clone, PartialEq)]
pub enum Codes {
    F32(Vec<f32>),
    Bf16(Vec<Bf16>),
    I8(Vec<i8>),
    /// Packed nibbles, each vector padded to whole bytes.
    I4(Vec<u8>),
}

impl Codes {
    fn empty(kind: Kind) -> Codes {
        match kind {
            Kind::Fp32 => Codes::F32(Vec::new()),
            Kind::Bf16 => Codes::Bf16(Vec::new()),
            Kind::Int8 => Codes::I8(Vec::new()),
            Kind::Int4 => Codes::I4(Vec::new()),
        }
    }

    fn kind(&self) -> Kind {
        match self {
            Codes::F32(_) => Kind::Fp32,
            Codes::Bf16(_) => Kind::Bf16,
            Codes::I8(_) => Kind::Int8,
            Codes::I4(_) => Kind::Int4,
        }
    }

    /// Number of stored units (floats, bf16 values, i8 codes or packed bytes).
    fn units(&self) -> usize {
        match self {
            Codes::F32(v) => v.len(),
            Codes::Bf16(v) => v.len(),
            Codes::I8(v) => v.len(),
            Codes::I4(v) => v.len(),
        }
    }

    /// Serialized size in bytes.
    pub fn byte_len(&self) -> usize {
        match self {
            Codes::F32(v) => 4 * v.len(),
            Codes::Bf16(v) => 2 * v.len(),
            Codes::I8(v) => v.len(),
            Codes::I4(v) => v.len(),
        }
    }
}

/// Units of [`Codes`] occupied by one vector.
fn units_per_vector(kind: Kind, dim: usize) -> usize {
    match kind {
        Kind::Int4 => dim.div_ceil(2),
        _ => dim,
    }
}

/// Codes plus per-group scales for a single vector.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedVector {
    dt: DType,
    dim: usize,
    codes: Codes,
    scales: Vec<f32>,
}

impl QuantizedVector {
    pub fn dtype(&self) -> DType {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn codes(&self) -> &Codes {
        &self.codes
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    /// Unpacked integer codes, or `None` for float dtypes.
    pub fn int_codes(&self) -> Option<Vec<i8>> {
        match &self.codes {
            Codes::I8(c) => Some(c.clone()),
            Codes::I4(bytes) => {
                let mut out = vec![0; self.dim];
                unpack_int4_into(bytes, &mut out);
                Some(out)
            }
            _ => None,
        }
    }

    pub fn dequantize(&self) -> Vec<f32> {
        let mut out = vec![0f32; self.dim];
        dequantize_row(self.dt, self.dim, &self.codes, 0, &self.scales, &mut out);
        out
    }
}

/// Quantizes `x` with the default scale denominator.
pub fn quantize_vector(x: &[f32], dt: DType) -> Result<QuantizedVector> {
    quantize_vector_with(x, dt, ScaleDenominator::Symmetric)
}

pub fn quantize_vector_with(x: &[f32], dt: DType, denom: ScaleDenominator) -> Result<QuantizedVector> {
    let dim = x.len();
    if dim == 0 {
        return Err(Error::EmptyInput);
    }
    dt.check_dim(dim)?;
    let mut codes = Codes::empty(dt.kind());
    let mut scales = Vec::with_capacity(dt.groups_per_vector(dim));
    let mut scratch = Vec::new();
    append_row(x, dt, denom, &mut codes, &mut scales, &mut scratch)?;
    Ok(QuantizedVector { dt, dim, codes, scales })
}

fn append_row(
    x: &[f32],
    dt: DType,
    denom: ScaleDenominator,
    codes: &mut Codes,
    scales: &mut Vec<f32>,
    scratch: &mut Vec<i8>,
) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let group = dt.group().effective(x.len());
    match codes {
        Codes::F32(out) => out.extend_from_slice(x),
        Codes::Bf16(out) => out.extend(x.iter().map(|&v| Bf16::from_f32(v))),
        Codes::I8(out) => {
            let start = out.len();
            out.resize(start + x.len(), 0);
            for (xg, cg) in x.chunks(group).zip(out[start..].chunks_mut(group)) {
                scales.push(quantize_group_into(xg, 8, denom, cg)?);
            }
        }
        Codes::I4(out) => {
            scratch.clear();
            scratch.resize(x.len(), 0);
            for (xg, cg) in x.chunks(group).zip(scratch.chunks_mut(group)) {
                scales.push(quantize_group_into(xg, 4, denom, cg)?);
            }
            let start = out.len();
            out.resize(start + x.len().div_ceil(2), 0);
            pack_int4_into(scratch, &mut out[start..])?;
        }
    }
    Ok(())
}

fn dequantize_row(dt: DType, dim: usize, codes: &Codes, row: usize, scales: &[f32], out: &mut [f32]) {
    let group = dt.group().effective(dim);
    let units = units_per_vector(dt.kind(), dim);
    let range = row * units..(row + 1) * units;
    match codes {
        Codes::F32(v) => out.copy_from_slice(&v[range]),
        Codes::Bf16(v) => out.iter_mut().zip(&v[range]).for_each(|(o, b)| *o = b.to_f32()),
        Codes::I8(v) => {
            for ((og, cg), &s) in out.chunks_mut(group).zip(v[range].chunks(group)).zip(scales) {
                og.iter_mut().zip(cg).for_each(|(o, &c)| *o = s * f32::from(c));
            }
        }
        Codes::I4(v) => {
            let mut unpacked = vec![0i8; dim];
            unpack_int4_into(&v[range], &mut unpacked);
            for ((og, cg), &s) in out.chunks_mut(group).zip(unpacked.chunks(group)).zip(scales) {
                og.iter_mut().zip(cg).for_each(|(o, &c)| *o = s * f32::from(c));
            }
        }
    }
}

/// A compressed database: `count` vectors of one dtype and dimension, laid out
/// contiguously, with ids.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedStore {
    dt: DType,
    dim: usize,
    ids: Vec<u64>,
    codes: Codes,
    scales: Vec<f32>,
}

impl QuantizedStore {
    pub fn from_matrix(m: &EmbeddingMatrix, dt: DType) -> Result<Self> {
        Self::from_matrix_with(m, dt, ScaleDenominator::Symmetric)
    }

    /// Quantizes every row of `m`; rows are processed in parallel.
    pub fn from_matrix_with(m: &EmbeddingMatrix, dt: DType, denom: ScaleDenominator) -> Result<Self> {
        let dim = m.dim();
        dt.check_dim(dim)?;
        const CHUNK: usize = 256;
        let parts: Vec<(Codes, Vec<f32>)> = m
            .data()
            .par_chunks(CHUNK * dim)
            .map(|block| {
                let mut codes = Codes::empty(dt.kind());
                let mut scales = Vec::new();
                let mut scratch = Vec::new();
                for row in block.chunks_exact(dim) {
                    append_row(row, dt, denom, &mut codes, &mut scales, &mut scratch)?;
                }
                Ok((codes, scales))
            })
            .collect::<Result<_>>()?;
        let mut codes = Codes::empty(dt.kind());
        let mut scales = Vec::with_capacity(m.len() * dt.groups_per_vector(dim));
        for (c, s) in parts {
            match (&mut codes, c) {
                (Codes::F32(a), Codes::F32(b)) => a.extend(b),
                (Codes::Bf16(a), Codes::Bf16(b)) => a.extend(b),
                (Codes::I8(a), Codes::I8(b)) => a.extend(b),
                (Codes::I4(a), Codes::I4(b)) => a.extend(b),
                _ => return Err(Error::Invariant("mixed code kinds while quantizing".into())),
            }
            scales.extend(s);
        }
        Ok(Self { dt, dim, ids: m.ids().to_vec(), codes, scales })
    }

    /// Assembles a store from decoded parts, checking every structural invariant.
    pub fn from_parts(dt: DType, dim: usize, ids: Vec<u64>, codes: Codes, scales: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("dimension must be positive".into()));
        }
        dt.check_dim(dim)?;
        if codes.kind() != dt.kind() {
            return Err(Error::Corrupt(format!("codes do not match dtype {dt}")));
        }
        let n = ids.len();
        let expect_units = n * units_per_vector(dt.kind(), dim);
        if codes.units() != expect_units {
            return Err(Error::Corrupt(format!("expected {expect_units} code units, found {}", codes.units())));
        }
        if scales.len() != n * dt.groups_per_vector(dim) {
            return Err(Error::Corrupt("scale count does not match dtype and count".into()));
        }
        if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Corrupt("scales must be finite and non-negative".into()));
        }
        match &codes {
            Codes::F32(v) if v.iter().any(|x| !x.is_finite()) => {
                return Err(Error::Corrupt("non-finite fp32 element".into()))
            }
            Codes::Bf16(v) if v.iter().any(|b| !b.to_f32().is_finite()) => {
                return Err(Error::Corrupt("non-finite bf16 element".into()))
            }
            Codes::I4(v) if dim % 2 == 1 => {
                let stride = dim.div_ceil(2);
                if v.chunks(stride).any(|row| row[stride - 1] & 0xF0 != 0) {
                    return Err(Error::Corrupt("non-zero int4 padding nibble".into()));
                }
            }
            _ => {}
        }
        let mut seen = std::collections::HashSet::with_capacity(n);
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::DuplicateId(*dup));
        }
        Ok(Self { dt, dim, ids, codes, scales })
    }

    pub fn dtype(&self) -> DType {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn codes(&self) -> &Codes {
        &self.codes
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn code_bytes(&self) -> usize {
        self.codes.byte_len()
    }

    pub fn scale_bytes(&self) -> usize {
        4 * self.scales.len()
    }

    /// Code plus scale bytes, i.e. `len() * bytes_per_vector`.
    pub fn payload_bytes(&self) -> usize {
        self.code_bytes() + self.scale_bytes()
    }

    fn row_scales(&self, i: usize) -> &[f32] {
        let g = self.dt.groups_per_vector(self.dim);
        &self.scales[i * g..(i + 1) * g]
    }

    /// Copy of row `i` as a standalone vector.
    pub fn vector(&self, i: usize) -> QuantizedVector {
        let units = units_per_vector(self.dt.kind(), self.dim);
        let r = i * units..(i + 1) * units;
        let codes = match &self.codes {
            Codes::F32(v) => Codes::F32(v[r].to_vec()),
            Codes::Bf16(v) => Codes::Bf16(v[r].to_vec()),
            Codes::I8(v) => Codes::I8(v[r].to_vec()),
            Codes::I4(v) => Codes::I4(v[r].to_vec()),
        };
        QuantizedVector { dt: self.dt, dim: self.dim, codes, scales: self.row_scales(i).to_vec() }
    }

    pub fn dequantize_row(&self, i: usize, out: &mut [f32]) {
        dequantize_row(self.dt, self.dim, &self.codes, i, self.row_scales(i), out);
    }

    /// Full-precision image of the store.
    pub fn dequantize(&self) -> EmbeddingMatrix {
        let mut data = vec![0f32; self.len() * self.dim];
        data.par_chunks_mut(self.dim).enumerate().for_each(|(i, out)| self.dequantize_row(i, out));
        EmbeddingMatrix::with_ids(self.dim, data, self.ids.clone())
            .expect("dequantized values are finite and ids unique")
    }

    /// Unpacked integer codes for all rows (`len() * dim`), `None` for float dtypes.
    pub fn int_codes(&self) -> Option<Vec<i8>> {
        match &self.codes {
            Codes::I8(v) => Some(v.clone()),
            Codes::I4(bytes) => {
                let stride = self.dim.div_ceil(2);
                let mut out = vec![0i8; self.len() * self.dim];
                out.par_chunks_mut(self.dim)
                    .zip(bytes.par_chunks(stride))
                    .for_each(|(o, b)| unpack_int4_into(b, o));
                Some(out)
            }
            _ => None,
        }
    }
}
