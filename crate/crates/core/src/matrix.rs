use std::collections::HashSet;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Dense row-major FP32 vectors with stable ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
    ids: Vec<u64>,
}

impl EmbeddingMatrix {
    /// Rows get ids `0..n`.
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        let n = if dim == 0 { 0 } else { data.len() / dim };
        Self::with_ids(dim, data, (0..n as u64).collect())
    }

    pub fn with_ids(dim: usize, data: Vec<f32>, ids: Vec<u64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("dimension must be positive".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::LengthMismatch { left: data.len(), right: ids.len() * dim });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for &id in &ids {
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id));
            }
        }
        Ok(Self { dim, data, ids })
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::with_ids(dim, Vec::new(), Vec::new())
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).ok_or(Error::EmptyInput)?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    /// `n` rows of i.i.d. standard normal entries, optionally scaled to unit norm.
    pub fn gaussian(n: usize, dim: usize, normalize: bool, rng: &mut Rng) -> Result<Self> {
        let mut data: Vec<f32> = (0..n * dim).map(|_| StandardNormal.sample(rng)).collect();
        if normalize {
            for row in data.chunks_mut(dim) {
                let norm = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|v| *v = (f64::from(*v) / norm) as f32);
                }
            }
        }
        Self::new(dim, data)
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    /// New matrix holding the given rows (by position), ids preserved.
    pub fn select(&self, positions: &[usize]) -> EmbeddingMatrix {
        let mut data = Vec::with_capacity(positions.len() * self.dim);
        let mut ids = Vec::with_capacity(positions.len());
        for &p in positions {
            data.extend_from_slice(self.row(p));
            ids.push(self.ids[p]);
        }
        EmbeddingMatrix { dim: self.dim, data, ids }
    }

    /// Little-endian f32 bytes of the data block.
    pub fn payload_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn into_parts(self) -> (usize, Vec<f32>, Vec<u64>) {
        (self.dim, self.data, self.ids)
    }
}
