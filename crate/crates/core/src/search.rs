//! Exact brute-force top-k cosine retrieval.
//!
//! Every query is scored against every database row. Rows are split into
//! fixed-size blocks scored in parallel; each block keeps its own k best and
//! the partial lists are merged under the same total order, so the output is
//! identical for any thread count. Ranking is by descending score, ties by
//! ascending id.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;
use crate::quantize::{QuantizedStore, ScaleDenominator};
use crate::similarity::{norm_f32, ScoringMatrix};

const BLOCK_ROWS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: u64,
    pub score: f64,
}

impl Hit {
    /// `Greater` means ranked higher.
    fn rank_cmp(&self, other: &Hit) -> Ordering {
        self.score.total_cmp(&other.score).then_with(|| other.id.cmp(&self.id))
    }
}

struct Ranked(Hit);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rank_cmp(&other.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKResult {
    pub query_id: u64,
    pub hits: Vec<Hit>,
}

impl TopKResult {
    pub fn ids(&self) -> Vec<u64> {
        self.hits.iter().map(|h| h.id).collect()
    }
}

/// Bounded selection of the `k` highest-ranked hits.
struct TopK {
    k: usize,
    heap: BinaryHeap<Reverse<Ranked>>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self { k, heap: BinaryHeap::with_capacity(k + 1) }
    }

    fn push(&mut self, hit: Hit) {
        if self.heap.len() < self.k {
            self.heap.push(Reverse(Ranked(hit)));
        } else if let Some(Reverse(worst)) = self.heap.peek() {
            if hit.rank_cmp(&worst.0) == Ordering::Greater {
                self.heap.pop();
                self.heap.push(Reverse(Ranked(hit)));
            }
        }
    }

    fn into_sorted(self) -> Vec<Hit> {
        let mut hits: Vec<Hit> = self.heap.into_iter().map(|Reverse(Ranked(h))| h).collect();
        hits.sort_by(|a, b| b.rank_cmp(a));
        hits
    }
}

/// Top `k` of `n` rows scored by `score(j)`.
fn select_top_k<F>(n: usize, ids: &[u64], k: usize, score: F) -> Vec<Hit>
where
    F: Fn(usize) -> f64 + Sync,
{
    let partials: Vec<Vec<Hit>> = (0..n.div_ceil(BLOCK_ROWS))
        .into_par_iter()
        .map(|b| {
            let mut top = TopK::new(k);
            for j in b * BLOCK_ROWS..((b + 1) * BLOCK_ROWS).min(n) {
                top.push(Hit { id: ids[j], score: score(j) });
            }
            top.into_sorted()
        })
        .collect();
    let mut merged = TopK::new(k);
    partials.into_iter().flatten().for_each(|h| merged.push(h));
    merged.into_sorted()
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    Ok(())
}

/// Exact top-k over full-precision vectors.
pub fn knn_float(queries: &EmbeddingMatrix, db: &EmbeddingMatrix, k: usize) -> Result<Vec<TopKResult>> {
    check_k(k)?;
    if queries.dim() != db.dim() {
        return Err(Error::DimensionMismatch { expected: db.dim(), found: queries.dim() });
    }
    let scoring = ScoringMatrix::from_matrix(db);
    Ok(search_float_queries(queries, &scoring, k))
}

fn search_float_queries(queries: &EmbeddingMatrix, db: &ScoringMatrix, k: usize) -> Vec<TopKResult> {
    queries
        .rows()
        .zip(queries.ids())
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(q, &query_id)| {
            let qn = norm_f32(q);
            let hits = select_top_k(db.len(), db.ids(), k, |j| db.cosine_query(q, qn, j));
            TopKResult { query_id, hits }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub enum Queries<'a> {
    Float(&'a EmbeddingMatrix),
    Quantized(&'a QuantizedStore),
}

#[derive(Debug, Clone, Copy)]
pub struct SearchOptions {
    pub k: usize,
    /// Quantize full-precision queries with the database dtype before scoring.
    pub quantize_queries: bool,
    pub denominator: ScaleDenominator,
}

impl SearchOptions {
    pub fn new(k: usize) -> Self {
        Self { k, quantize_queries: true, denominator: ScaleDenominator::Symmetric }
    }
}

/// Exact top-k against a quantized database.
///
/// With `quantize_queries` set (or when queries are already quantized) both
/// sides are scored through the code/scale kernels. Otherwise each
/// full-precision query is scored directly against the codes.
pub fn knn_quantized(queries: Queries<'_>, db: &QuantizedStore, opts: SearchOptions) -> Result<Vec<TopKResult>> {
    check_k(opts.k)?;
    let scoring = ScoringMatrix::from_store(db);
    knn_prepared(queries, &scoring, opts)
}

/// As [`knn_quantized`] with the database already decoded for scoring.
pub fn knn_prepared(queries: Queries<'_>, db: &ScoringMatrix, opts: SearchOptions) -> Result<Vec<TopKResult>> {
    check_k(opts.k)?;
    let qdim = match queries {
        Queries::Float(m) => m.dim(),
        Queries::Quantized(s) => s.dim(),
    };
    if qdim != db.dim() {
        return Err(Error::DimensionMismatch { expected: db.dim(), found: qdim });
    }
    let quantized_queries;
    let qstore = match queries {
        Queries::Float(m) if !opts.quantize_queries => return Ok(search_float_queries(m, db, opts.k)),
        Queries::Float(m) => {
            quantized_queries = QuantizedStore::from_matrix_with(m, db.dtype(), opts.denominator)?;
            &quantized_queries
        }
        Queries::Quantized(s) => s,
    };
    if qstore.dtype() != db.dtype() {
        return Err(Error::DTypeMismatch { left: qstore.dtype().to_string(), right: db.dtype().to_string() });
    }
    let qs = ScoringMatrix::from_store(qstore);
    (0..qs.len())
        .into_par_iter()
        .map(|i| {
            // dtype and dim were checked above, so scoring cannot fail
            let hits = select_top_k(db.len(), db.ids(), opts.k, |j| qs.cosine(i, db, j).unwrap_or(f64::NAN));
            if hits.iter().any(|h| h.score.is_nan()) {
                return Err(Error::Invariant("non-finite score".into()));
            }
            Ok(TopKResult { query_id: qs.ids()[i], hits })
        })
        .collect()
}
