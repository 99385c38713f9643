//! Distance, similarity and summary-statistic kernels.
//!
//! Float kernels accumulate in f64 in index order. Integer kernels compute an
//! exact 64-bit integer dot product per group and combine groups in index
//! order as `Σ_g S_p,g · S_q,g · dot_g`, so results are reproducible
//! bit-for-bit regardless of thread count.

use rayon::prelude::*;

use crate::dtype::DType;
use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;
use crate::quantize::{Codes, QuantizedStore, QuantizedVector};

fn check_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: a, found: b })
    }
}

pub fn euclidean(p: &[f32], q: &[f32]) -> Result<f64> {
    check_len(p.len(), q.len())?;
    Ok(p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

#[inline]
pub(crate) fn dot_f32(p: &[f32], q: &[f32]) -> f64 {
    let mut acc = 0f64;
    for (&a, &b) in p.iter().zip(q) {
        acc += f64::from(a) * f64::from(b);
    }
    acc
}

#[inline]
pub(crate) fn norm_f32(p: &[f32]) -> f64 {
    dot_f32(p, p).sqrt()
}

/// Cosine similarity in f64.
pub fn cosine(p: &[f32], q: &[f32]) -> Result<f64> {
    check_len(p.len(), q.len())?;
    let (np, nq) = (norm_f32(p), norm_f32(q));
    if np == 0.0 || nq == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(dot_f32(p, q) / (np * nq))
}

/// Exact integer dot product. Products are summed in i32 over blocks short
/// enough that the block sum cannot overflow, then widened.
#[inline]
pub(crate) fn dot_i8(a: &[i8], b: &[i8]) -> i64 {
    // 128 * 128 * 2^16 = 2^30
    const BLOCK: usize = 1 << 16;
    let mut total = 0i64;
    for (ca, cb) in a.chunks(BLOCK).zip(b.chunks(BLOCK)) {
        let s: i32 = ca.iter().zip(cb).map(|(&x, &y)| i32::from(x) * i32::from(y)).sum();
        total += i64::from(s);
    }
    total
}

#[inline]
fn grouped_dot(a: &[i8], sa: &[f32], b: &[i8], sb: &[f32], group: usize) -> f64 {
    let mut acc = 0f64;
    for ((ga, gb), (&x, &y)) in a.chunks(group).zip(b.chunks(group)).zip(sa.iter().zip(sb)) {
        acc += f64::from(x) * f64::from(y) * dot_i8(ga, gb) as f64;
    }
    acc
}

#[inline]
fn mixed_dot(q: &[f32], codes: &[i8], scales: &[f32], group: usize) -> f64 {
    let mut acc = 0f64;
    for ((gq, gc), &s) in q.chunks(group).zip(codes.chunks(group)).zip(scales) {
        let mut inner = 0f64;
        for (&x, &c) in gq.iter().zip(gc) {
            inner += f64::from(x) * f64::from(c);
        }
        acc += f64::from(s) * inner;
    }
    acc
}

/// Cosine between two quantized vectors computed from codes and scales,
/// without materializing dequantized floats.
pub fn cosine_quantized(p: &QuantizedVector, q: &QuantizedVector) -> Result<f64> {
    if p.dtype() != q.dtype() {
        return Err(Error::DTypeMismatch { left: p.dtype().to_string(), right: q.dtype().to_string() });
    }
    check_len(p.dim(), q.dim())?;
    match (p.int_codes(), q.int_codes()) {
        (Some(cp), Some(cq)) => {
            let g = p.dtype().group().effective(p.dim());
            let dot = grouped_dot(&cp, p.scales(), &cq, q.scales(), g);
            let np = grouped_dot(&cp, p.scales(), &cp, p.scales(), g).sqrt();
            let nq = grouped_dot(&cq, q.scales(), &cq, q.scales(), g).sqrt();
            if np == 0.0 || nq == 0.0 {
                return Err(Error::ZeroVector);
            }
            Ok(dot / (np * nq))
        }
        _ => cosine(&p.dequantize(), &q.dequantize()),
    }
}

pub fn rmse(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { left: p.len(), right: q.len() });
    }
    if p.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sum: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sum / p.len() as f64).sqrt())
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::EmptyInput);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0f64, 0f64, 0f64);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantInput);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone)]
enum Values {
    Float(Vec<f32>),
    Int { codes: Vec<i8>, scales: Vec<f32>, group: usize },
}

/// Vectors decoded once into the form the scoring kernels consume: widened
/// floats for FP32/BF16, unpacked codes plus scales for INT8/INT4. Row norms
/// are precomputed.
#[derive(Debug, Clone)]
pub struct ScoringMatrix {
    dt: DType,
    dim: usize,
    ids: Vec<u64>,
    values: Values,
    norms: Vec<f64>,
}

impl ScoringMatrix {
    pub fn from_matrix(m: &EmbeddingMatrix) -> Self {
        let norms = m.data().par_chunks(m.dim()).map(norm_f32).collect();
        Self { dt: DType::FP32, dim: m.dim(), ids: m.ids().to_vec(), values: Values::Float(m.data().to_vec()), norms }
    }

    pub fn from_store(store: &QuantizedStore) -> Self {
        let dim = store.dim();
        let dt = store.dtype();
        match (store.codes(), store.int_codes()) {
            (Codes::F32(v), _) => {
                let m = EmbeddingMatrix::with_ids(dim, v.clone(), store.ids().to_vec())
                    .expect("store invariants hold");
                Self { dt, ..Self::from_matrix(&m) }
            }
            (_, Some(codes)) => {
                let group = dt.group().effective(dim);
                let gpv = dt.groups_per_vector(dim);
                let scales = store.scales().to_vec();
                let norms = codes
                    .par_chunks(dim)
                    .zip(scales.par_chunks(gpv.max(1)))
                    .map(|(c, s)| grouped_dot(c, s, c, s, group).sqrt())
                    .collect();
                Self { dt, dim, ids: store.ids().to_vec(), values: Values::Int { codes, scales, group }, norms }
            }
            _ => {
                let m = store.dequantize();
                Self { dt, ..Self::from_matrix(&m) }
            }
        }
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

    pub fn norm(&self, i: usize) -> f64 {
        self.norms[i]
    }

    fn float_row(v: &[f32], dim: usize, i: usize) -> &[f32] {
        &v[i * dim..(i + 1) * dim]
    }

    /// Dot product between row `i` of `self` and row `j` of `other`, both of
    /// the same representation.
    pub fn dot(&self, i: usize, other: &ScoringMatrix, j: usize) -> Result<f64> {
        let d = self.dim;
        match (&self.values, &other.values) {
            (Values::Float(a), Values::Float(b)) => {
                Ok(dot_f32(Self::float_row(a, d, i), Self::float_row(b, d, j)))
            }
            (Values::Int { codes: ca, scales: sa, group }, Values::Int { codes: cb, scales: sb, .. })
                if self.dt == other.dt =>
            {
                let g = d / group;
                Ok(grouped_dot(
                    &ca[i * d..(i + 1) * d],
                    &sa[i * g..(i + 1) * g],
                    &cb[j * d..(j + 1) * d],
                    &sb[j * g..(j + 1) * g],
                    *group,
                ))
            }
            _ => Err(Error::DTypeMismatch { left: self.dt.to_string(), right: other.dt.to_string() }),
        }
    }

    /// Cosine of row `i` against row `j` of `other`; zero-norm rows score 0.
    pub fn cosine(&self, i: usize, other: &ScoringMatrix, j: usize) -> Result<f64> {
        let dot = self.dot(i, other, j)?;
        Ok(safe_ratio(dot, self.norms[i] * other.norms[j]))
    }

    /// Dot product of a full-precision query with row `j`. Integer rows use
    /// `Σ_g S_g · Σ_i q_i · c_i`.
    pub fn dot_query(&self, q: &[f32], j: usize) -> f64 {
        let d = self.dim;
        match &self.values {
            Values::Float(v) => dot_f32(q, Self::float_row(v, d, j)),
            Values::Int { codes, scales, group } => {
                let g = d / group;
                mixed_dot(q, &codes[j * d..(j + 1) * d], &scales[j * g..(j + 1) * g], *group)
            }
        }
    }

    pub fn cosine_query(&self, q: &[f32], q_norm: f64, j: usize) -> f64 {
        safe_ratio(self.dot_query(q, j), q_norm * self.norms[j])
    }
}

#[inline]
fn safe_ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}
