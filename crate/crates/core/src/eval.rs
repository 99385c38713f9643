//! Evaluation protocols: pairwise cosine RMSE, top-k retrieval overlap and
//! STS correlation, each producing an [`EvalReport`].

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde_json::json;

use crate::dtype::{DType, GroupSize, Kind};
use crate::error::{Error, Result};
use crate::io::split;
use crate::matrix::EmbeddingMatrix;
use crate::pq::{pq_encode, pq_fit, pq_reconstruct, PQCodebook, PQConfig};
use crate::quantize::{QuantizedStore, ScaleDenominator};
use crate::rng::Rng;
use crate::search::{knn_float, knn_prepared, Queries, SearchOptions, TopKResult};
use crate::similarity::{pearson, rmse, ScoringMatrix};

pub use crate::report::{EvalReport, Experiment, Histogram, Metadata, MergedReport, ReportRow};

pub const HISTOGRAM_BINS: usize = 100;

/// A representation under evaluation: a scalar dtype or a PQ configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Scalar(DType),
    Pq(PQConfig),
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Scalar(dt) => dt.table_label().to_string(),
            Method::Pq(cfg) => cfg.label(),
        }
    }

    pub fn group(&self) -> Option<u32> {
        match self {
            Method::Scalar(dt) if dt.kind().is_integer() => match dt.group() {
                GroupSize::Elements(g) => Some(g),
                GroupSize::WholeVector => None,
            },
            _ => None,
        }
    }

    /// Sort key, most precise first. Smaller groups are more precise than
    /// larger ones; whole-vector scaling is the least precise of a kind.
    fn precision_key(&self) -> (u8, u64, u64) {
        match self {
            Method::Scalar(dt) => {
                let kind = match dt.kind() {
                    Kind::Fp32 => 0,
                    Kind::Bf16 => 1,
                    Kind::Int8 => 2,
                    Kind::Int4 => 3,
                };
                let group = match dt.group() {
                    GroupSize::Elements(g) => g as u64,
                    GroupSize::WholeVector => u64::MAX,
                };
                (kind, group, 0)
            }
            Method::Pq(cfg) => {
                let bits = (cfg.centroids as f64).log2().ceil() as u64 * cfg.subspaces as u64;
                (4, u64::MAX - bits, u64::MAX - cfg.subspaces as u64)
            }
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Scalar(dt) => write!(f, "{dt}"),
            Method::Pq(cfg) => write!(f, "pq:{}:{}", cfg.subspaces, cfg.centroids),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.len() >= 2 && t[..2].eq_ignore_ascii_case("pq") {
            PQConfig::parse(t).map(Method::Pq)
        } else {
            t.parse().map(Method::Scalar)
        }
    }
}

impl serde::Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses a comma-separated method list.
pub fn parse_methods(text: &str) -> Result<Vec<Method>> {
    text.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

fn sort_rows(rows: &mut [(Method, ReportRow)]) {
    rows.sort_by_key(|a| a.0.precision_key());
}

fn row_for(method: &Method, value: f64, baseline: f64) -> ReportRow {
    ReportRow::new(method.label(), method.to_string(), method.group(), value, baseline)
}

/// Cosines of all pairs `i < j` in row-major pair order.
fn pair_cosines(sm: &ScoringMatrix) -> Result<Vec<f64>> {
    let n = sm.len();
    let per_row: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| sm.cosine(i, sm, j)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    Ok(per_row.into_iter().flatten().collect())
}

/// RMSE between quantized and full-precision cosines over every pair of a
/// random sample of `sample_n` rows.
pub fn eval_pairwise_rmse(
    db: &EmbeddingMatrix,
    dtypes: &[DType],
    sample_n: usize,
    denom: ScaleDenominator,
    rng: &mut Rng,
) -> Result<EvalReport> {
    if sample_n > db.len() {
        return Err(Error::SampleTooLarge { requested: sample_n, available: db.len() });
    }
    if sample_n < 2 {
        return Err(Error::InvalidConfig("sample size must be at least 2".into()));
    }
    for dt in dtypes {
        dt.check_dim(db.dim())?;
    }
    let positions = rand::seq::index::sample(rng, db.len(), sample_n).into_vec();
    let sample = db.select(&positions);
    let baseline = pair_cosines(&ScoringMatrix::from_matrix(&sample))?;

    let cells: Vec<(Vec<f64>, f64)> = dtypes
        .par_iter()
        .map(|&dt| {
            let store = QuantizedStore::from_matrix_with(&sample, dt, denom)?;
            let values = pair_cosines(&ScoringMatrix::from_store(&store))?;
            let err = rmse(&values, &baseline)?;
            Ok((values, err))
        })
        .collect::<Result<_>>()?;

    let mut histograms = vec![Histogram::build("fp32".into(), &baseline, HISTOGRAM_BINS, -1.0, 1.0)];
    let mut rows = Vec::with_capacity(dtypes.len());
    for (dt, (values, err)) in dtypes.iter().zip(&cells) {
        let m = Method::Scalar(*dt);
        if *dt != DType::FP32 {
            histograms.push(Histogram::build(m.to_string(), values, HISTOGRAM_BINS, -1.0, 1.0));
        }
        rows.push((m, row_for(&m, *err, 0.0)));
    }
    sort_rows(&mut rows);

    let mut metadata = Metadata { seed: rng.seed(), ..Default::default() };
    metadata.params.insert("sample_n".into(), json!(sample_n));
    metadata.params.insert("pairs".into(), json!(baseline.len()));
    metadata.params.insert("scale_denominator".into(), json!(denom.to_string()));
    Ok(EvalReport {
        experiment: Experiment::RmsePairwise,
        dataset: None,
        rows: rows.into_iter().map(|(_, r)| r).collect(),
        histograms,
        metadata,
    })
}

/// Greedy scan of `pool` in shuffled order, keeping a vector when its
/// absolute cosine to every kept vector is below `max_abs_cos`.
pub fn select_orthogonal_queries(
    pool: &EmbeddingMatrix,
    count: usize,
    max_abs_cos: f64,
    rng: &mut Rng,
) -> Result<EmbeddingMatrix> {
    if count == 0 {
        return Err(Error::InvalidConfig("query count must be at least 1".into()));
    }
    if !(max_abs_cos > 0.0 && max_abs_cos <= 1.0) {
        return Err(Error::InvalidConfig(format!("max_abs_cos must be in (0, 1], got {max_abs_cos}")));
    }
    let sm = ScoringMatrix::from_matrix(pool);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(rng);
    let mut kept: Vec<usize> = Vec::with_capacity(count);
    for i in order {
        if sm.norm(i) == 0.0 {
            continue;
        }
        let mut ok = true;
        for &j in &kept {
            if sm.cosine(i, &sm, j)?.abs() >= max_abs_cos {
                ok = false;
                break;
            }
        }
        if ok {
            kept.push(i);
            if kept.len() == count {
                break;
            }
        }
    }
    if kept.len() < count {
        return Err(Error::InsufficientCandidates { found: kept.len(), requested: count });
    }
    for (a, &i) in kept.iter().enumerate() {
        for &j in &kept[a + 1..] {
            if sm.cosine(i, &sm, j)?.abs() >= max_abs_cos {
                return Err(Error::Invariant("selected queries are not pairwise near-orthogonal".into()));
            }
        }
    }
    Ok(pool.select(&kept))
}

#[derive(Debug, Clone, Copy)]
pub struct RetrievalOptions {
    pub train_n: usize,
    pub test_n: usize,
    pub k: usize,
    pub n_queries: usize,
    pub max_abs_cos: f64,
    pub quantize_queries: bool,
    pub denominator: ScaleDenominator,
}

impl RetrievalOptions {
    pub fn new(train_n: usize, test_n: usize) -> Self {
        Self {
            train_n,
            test_n,
            k: 10,
            n_queries: 10,
            max_abs_cos: 0.1,
            quantize_queries: true,
            denominator: ScaleDenominator::Symmetric,
        }
    }
}

fn overlap(a: &TopKResult, b: &TopKResult) -> usize {
    let ids: HashSet<u64> = a.hits.iter().map(|h| h.id).collect();
    b.hits.iter().filter(|h| ids.contains(&h.id)).count()
}

fn pq_search(queries: &EmbeddingMatrix, test: &EmbeddingMatrix, cfg: &PQConfig, opts: &RetrievalOptions) -> Result<Vec<TopKResult>> {
    let cb: PQCodebook = pq_fit(test, cfg)?;
    let db = pq_reconstruct(&pq_encode(test, &cb)?, &cb)?;
    if opts.quantize_queries {
        let q = pq_reconstruct(&pq_encode(queries, &cb)?, &cb)?;
        knn_float(&q, &db, opts.k)
    } else {
        knn_float(queries, &db, opts.k)
    }
}

/// Top-k overlap between a full-precision baseline and each method.
///
/// The pool is permuted and split into train and test parts. Queries come
/// from the train part and search the test part. PQ codebooks are trained on
/// the test part they encode.
pub fn eval_retrieval_overlap(
    pool: &EmbeddingMatrix,
    methods: &[Method],
    opts: RetrievalOptions,
    rng: &mut Rng,
) -> Result<EvalReport> {
    if opts.k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    for m in methods {
        match m {
            Method::Scalar(dt) => dt.check_dim(pool.dim())?,
            Method::Pq(cfg) => cfg.validate(pool.dim())?,
        }
    }
    let (train, test) = split(pool, (opts.train_n, opts.test_n), &mut rng.derive(1))?;
    let queries = select_orthogonal_queries(&train, opts.n_queries, opts.max_abs_cos, &mut rng.derive(2))?;
    let baseline = knn_float(&queries, &test, opts.k)?;

    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    let total: usize = baseline.iter().map(|r| r.hits.len()).sum();
    for r in &baseline {
        seen.extend(r.ids());
    }
    if seen.len() != total {
        let msg = format!("baseline top-k lists share ids: {} unique of {total}", seen.len());
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let results: Vec<Vec<TopKResult>> = methods
        .par_iter()
        .map(|m| match m {
            Method::Scalar(dt) => {
                let store = QuantizedStore::from_matrix_with(&test, *dt, opts.denominator)?;
                let sopts = SearchOptions { k: opts.k, quantize_queries: opts.quantize_queries, denominator: opts.denominator };
                knn_prepared(Queries::Float(&queries), &ScoringMatrix::from_store(&store), sopts)
            }
            Method::Pq(cfg) => pq_search(&queries, &test, cfg, &opts),
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(methods.len());
    for (m, res) in methods.iter().zip(&results) {
        let per_query: Vec<usize> = baseline.iter().zip(res).map(|(b, r)| overlap(b, r)).collect();
        let acc = if total == 0 { 0.0 } else { per_query.iter().sum::<usize>() as f64 / total as f64 };
        let mut row = row_for(m, acc, 1.0);
        row.per_query_overlap = Some(per_query);
        rows.push((*m, row));
    }
    sort_rows(&mut rows);

    let mut metadata = Metadata { seed: rng.seed(), warnings, ..Default::default() };
    metadata.params.insert("train_n".into(), json!(opts.train_n));
    metadata.params.insert("test_n".into(), json!(opts.test_n));
    metadata.params.insert("k".into(), json!(opts.k));
    metadata.params.insert("n_queries".into(), json!(opts.n_queries));
    metadata.params.insert("max_abs_cos".into(), json!(opts.max_abs_cos));
    metadata.params.insert("quantize_queries".into(), json!(opts.quantize_queries));
    metadata.params.insert("scale_denominator".into(), json!(opts.denominator.to_string()));
    metadata.params.insert("query_ids".into(), json!(queries.ids()));
    Ok(EvalReport {
        experiment: Experiment::RetrievalOverlap,
        dataset: None,
        rows: rows.into_iter().map(|(_, r)| r).collect(),
        histograms: Vec::new(),
        metadata,
    })
}

#[derive(Debug, Clone)]
pub struct StsOptions {
    pub dataset: Option<String>,
    /// Fraction of pairs held out for PQ training; the rest are scored.
    /// Zero scores every pair and trains PQ on all of them.
    pub train_fraction: f64,
    pub denominator: ScaleDenominator,
}

impl Default for StsOptions {
    fn default() -> Self {
        Self { dataset: None, train_fraction: 0.5, denominator: ScaleDenominator::Symmetric }
    }
}

fn paired_cosines(a: &ScoringMatrix, b: &ScoringMatrix) -> Result<Vec<f64>> {
    (0..a.len()).into_par_iter().map(|i| a.cosine(i, b, i)).collect()
}

fn stack(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let mut data = Vec::with_capacity(a.data().len() + b.data().len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    EmbeddingMatrix::new(a.dim(), data)
}

/// Pearson correlation between per-pair cosine and gold relatedness scores
/// for each method, with ratios to the full-precision correlation.
pub fn eval_sts(
    a: &EmbeddingMatrix,
    b: &EmbeddingMatrix,
    gold: &[f64],
    methods: &[Method],
    opts: &StsOptions,
    rng: &mut Rng,
) -> Result<EvalReport> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.len() != gold.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: gold.len() });
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    if !(0.0..1.0).contains(&opts.train_fraction) {
        return Err(Error::InvalidConfig(format!("train fraction must be in [0, 1), got {}", opts.train_fraction)));
    }
    for m in methods {
        match m {
            Method::Scalar(dt) => dt.check_dim(a.dim())?,
            Method::Pq(cfg) => cfg.validate(a.dim())?,
        }
    }

    let n = a.len();
    let (train_idx, test_idx): (Vec<usize>, Vec<usize>) = if opts.train_fraction > 0.0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let n_train = (n as f64 * opts.train_fraction).floor() as usize;
        (order[..n_train].to_vec(), order[n_train..].to_vec())
    } else {
        ((0..n).collect(), (0..n).collect())
    };
    let (a_test, b_test) = (a.select(&test_idx), b.select(&test_idx));
    let gold_test: Vec<f64> = test_idx.iter().map(|&i| gold[i]).collect();

    let base_cos = paired_cosines(&ScoringMatrix::from_matrix(&a_test), &ScoringMatrix::from_matrix(&b_test))?;
    let base = pearson(&base_cos, &gold_test)?;

    let values: Vec<f64> = methods
        .par_iter()
        .map(|m| {
            let cos = match m {
                Method::Scalar(dt) => {
                    let sa = QuantizedStore::from_matrix_with(&a_test, *dt, opts.denominator)?;
                    let sb = QuantizedStore::from_matrix_with(&b_test, *dt, opts.denominator)?;
                    paired_cosines(&ScoringMatrix::from_store(&sa), &ScoringMatrix::from_store(&sb))?
                }
                Method::Pq(cfg) => {
                    let train = stack(&a.select(&train_idx), &b.select(&train_idx))?;
                    let cb = pq_fit(&train, cfg)?;
                    let ra = pq_reconstruct(&pq_encode(&a_test, &cb)?, &cb)?;
                    let rb = pq_reconstruct(&pq_encode(&b_test, &cb)?, &cb)?;
                    paired_cosines(&ScoringMatrix::from_matrix(&ra), &ScoringMatrix::from_matrix(&rb))?
                }
            };
            pearson(&cos, &gold_test)
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<(Method, ReportRow)> =
        methods.iter().zip(values).map(|(m, v)| (*m, row_for(m, v, base))).collect();
    sort_rows(&mut rows);

    let mut metadata = Metadata { seed: rng.seed(), ..Default::default() };
    metadata.params.insert("pairs".into(), json!(n));
    metadata.params.insert("test_pairs".into(), json!(test_idx.len()));
    metadata.params.insert("train_fraction".into(), json!(opts.train_fraction));
    metadata.params.insert("fp32_correlation".into(), json!(base));
    metadata.params.insert("scale_denominator".into(), json!(opts.denominator.to_string()));
    Ok(EvalReport {
        experiment: Experiment::StsCorrelation,
        dataset: opts.dataset.clone(),
        rows: rows.into_iter().map(|(_, r)| r).collect(),
        histograms: Vec::new(),
        metadata,
    })
}

/// Compares two report rows by declining precision of their methods.
/// Rows whose method does not parse sort last.
pub fn compare_rows(a: &ReportRow, b: &ReportRow) -> Ordering {
    let key = |r: &ReportRow| r.method.parse::<Method>().ok().map(|m| m.precision_key());
    match (key(a), key(b)) {
        (Some(x), Some(y)) => x.cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}
