//! Product quantization baseline.
//!
//! A `d`-dimensional vector is cut into `M` equal sub-vectors; each sub-space
//! has its own k-means codebook of `K` centroids and a vector is stored as the
//! `M` indices of its nearest centroids. Similarity between two encoded
//! vectors is the cosine of their reconstructions.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;
use crate::rng::Rng;
use crate::similarity::cosine;

pub const MAX_CENTROIDS: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PQConfig {
    /// Number of sub-vectors (M).
    pub subspaces: usize,
    /// Centroids per sub-space codebook (K).
    pub centroids: usize,
    pub iters: usize,
    /// Stop once the relative inertia decrease falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl PQConfig {
    pub fn new(subspaces: usize, centroids: usize) -> Self {
        Self { subspaces, centroids, iters: 25, tol: 1e-4, seed: crate::rng::DEFAULT_SEED }
    }

    /// Table label, e.g. `PQ[32,256]`.
    pub fn label(&self) -> String {
        format!("PQ[{},{}]", self.subspaces, self.centroids)
    }

    /// Parses `pq:M:K`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("expected pq:M:K, got `{text}`"));
        let mut parts = text.trim().split(':');
        if !parts.next().is_some_and(|p| p.eq_ignore_ascii_case("pq")) {
            return Err(bad());
        }
        let m: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let k: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        let cfg = Self::new(m, k);
        cfg.validate_shape()?;
        Ok(cfg)
    }

    fn validate_shape(&self) -> Result<()> {
        if self.subspaces == 0 {
            return Err(Error::InvalidConfig("M must be at least 1".into()));
        }
        if self.centroids == 0 || self.centroids > MAX_CENTROIDS {
            return Err(Error::InvalidConfig(format!("K must be in 1..={MAX_CENTROIDS}")));
        }
        if self.iters == 0 {
            return Err(Error::InvalidConfig("iters must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidConfig("tol must be non-negative".into()));
        }
        Ok(())
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        self.validate_shape()?;
        if !dim.is_multiple_of(self.subspaces) {
            return Err(Error::IndivisibleDim { dim, subspaces: self.subspaces });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PQCodebook {
    config: PQConfig,
    dim: usize,
    /// `M × K × (d/M)`, row-major.
    centroids: Vec<f32>,
    /// Inertia after each assignment step, per sub-space. Empty when loaded from disk.
    inertia: Vec<Vec<f64>>,
}

impl PQCodebook {
    pub fn from_parts(config: PQConfig, dim: usize, centroids: Vec<f32>) -> Result<Self> {
        config.validate(dim)?;
        if centroids.len() != config.centroids * dim {
            return Err(Error::Corrupt(format!(
                "expected {} centroid values, found {}",
                config.centroids * dim,
                centroids.len()
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::Corrupt("non-finite centroid".into()));
        }
        Ok(Self { config, dim, centroids, inertia: Vec::new() })
    }

    pub fn config(&self) -> &PQConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sub_dim(&self) -> usize {
        self.dim / self.config.subspaces
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn inertia_history(&self) -> &[Vec<f64>] {
        &self.inertia
    }

    /// Centroid `c` of sub-space `m`.
    pub fn centroid(&self, m: usize, c: usize) -> &[f32] {
        let s = self.sub_dim();
        let start = (m * self.config.centroids + c) * s;
        &self.centroids[start..start + s]
    }

    fn subspace(&self, m: usize) -> &[f32] {
        let len = self.config.centroids * self.sub_dim();
        &self.centroids[m * len..(m + 1) * len]
    }
}

/// Centroid indices for `n` vectors, `M` per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PQCodes {
    subspaces: usize,
    centroids: usize,
    ids: Vec<u64>,
    codes: Vec<u16>,
}

impl PQCodes {
    pub fn from_parts(subspaces: usize, centroids: usize, ids: Vec<u64>, codes: Vec<u16>) -> Result<Self> {
        if subspaces == 0 || codes.len() != ids.len() * subspaces {
            return Err(Error::Corrupt("code count does not match ids and M".into()));
        }
        if codes.iter().any(|&c| usize::from(c) >= centroids) {
            return Err(Error::Corrupt("centroid index out of range".into()));
        }
        Ok(Self { subspaces, centroids, ids, codes })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn subspaces(&self) -> usize {
        self.subspaces
    }

    pub fn centroids(&self) -> usize {
        self.centroids
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn codes(&self) -> &[u16] {
        &self.codes
    }

    pub fn row(&self, i: usize) -> &[u16] {
        &self.codes[i * self.subspaces..(i + 1) * self.subspaces]
    }
}

#[inline]
fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0f32;
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Index of the nearest centroid (lowest index on ties) and its squared distance.
#[inline]
fn nearest(x: &[f32], book: &[f32], sub: usize) -> (usize, f32) {
    let mut best = (0, f32::INFINITY);
    for (c, centroid) in book.chunks_exact(sub).enumerate() {
        let d = sq_dist(x, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance from the nearest chosen centre.
fn seed_centroids(points: &[f32], sub: usize, k: usize, rng: &mut Rng) -> Vec<f32> {
    let n = points.len() / sub;
    let mut book = Vec::with_capacity(k * sub);
    let first = rng.gen_range(0..n);
    book.extend_from_slice(&points[first * sub..(first + 1) * sub]);
    let mut dist: Vec<f64> = points.chunks_exact(sub).map(|p| f64::from(sq_dist(p, &book[..sub]))).collect();
    for _ in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            // rounding can run past the end; fall back to the last positive weight
            if dist[chosen] == 0.0 {
                chosen = dist.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let start = book.len();
        book.extend_from_slice(&points[pick * sub..(pick + 1) * sub]);
        let centre = book[start..].to_vec();
        for (d, p) in dist.iter_mut().zip(points.chunks_exact(sub)) {
            *d = d.min(f64::from(sq_dist(p, &centre)));
        }
    }
    book
}

/// Lloyd iterations over one sub-space. Returns the codebook and the inertia
/// recorded after every assignment step.
fn kmeans(points: &[f32], sub: usize, cfg: &PQConfig, rng: &mut Rng) -> (Vec<f32>, Vec<f64>) {
    let n = points.len() / sub;
    let k = cfg.centroids;
    let mut book = seed_centroids(points, sub, k, rng);
    let mut history = Vec::new();
    let mut assign = vec![0usize; n];
    let mut dists = vec![0f32; n];
    for iter in 0..cfg.iters {
        assign
            .par_iter_mut()
            .zip(dists.par_iter_mut())
            .zip(points.par_chunks_exact(sub))
            .for_each(|((a, d), p)| {
                let (c, dist) = nearest(p, &book, sub);
                *a = c;
                *d = dist;
            });
        let inertia: f64 = dists.iter().map(|&d| f64::from(d)).sum();
        let converged = history.last().is_some_and(|&prev: &f64| {
            prev <= 0.0 || (prev - inertia) / prev < cfg.tol
        });
        history.push(inertia);
        if converged || iter + 1 == cfg.iters || inertia == 0.0 {
            break;
        }
        // update step
        let mut sums = vec![0f64; k * sub];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.chunks_exact(sub).zip(&assign) {
            counts[c] += 1;
            for (s, &v) in sums[c * sub..(c + 1) * sub].iter_mut().zip(p) {
                *s += f64::from(v);
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = counts[c] as f64;
                for (dst, s) in book[c * sub..(c + 1) * sub].iter_mut().zip(&sums[c * sub..(c + 1) * sub]) {
                    *dst = (s / inv) as f32;
                }
            }
        }
        // empty clusters take the points currently farthest from their centroid
        for c in (0..k).filter(|&c| counts[c] == 0) {
            let far = dists
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            book[c * sub..(c + 1) * sub].copy_from_slice(&points[far * sub..(far + 1) * sub]);
            dists[far] = 0.0;
        }
    }
    (book, history)
}

/// Trains one k-means codebook per sub-space. Sub-spaces are trained in
/// parallel, each from its own stream of `cfg.seed`.
pub fn pq_fit(train: &EmbeddingMatrix, cfg: &PQConfig) -> Result<PQCodebook> {
    let dim = train.dim();
    cfg.validate(dim)?;
    if train.len() < cfg.centroids {
        return Err(Error::TooFewTrainingVectors { needed: cfg.centroids, got: train.len() });
    }
    let sub = dim / cfg.subspaces;
    let base = Rng::new(cfg.seed);
    let per_space: Vec<(Vec<f32>, Vec<f64>)> = (0..cfg.subspaces)
        .into_par_iter()
        .map(|m| {
            let points: Vec<f32> = train.rows().flat_map(|r| r[m * sub..(m + 1) * sub].iter().copied()).collect();
            let mut rng = base.derive(m as u64);
            kmeans(&points, sub, cfg, &mut rng)
        })
        .collect();
    let mut centroids = Vec::with_capacity(cfg.centroids * dim);
    let mut inertia = Vec::with_capacity(cfg.subspaces);
    for (book, hist) in per_space {
        centroids.extend(book);
        inertia.push(hist);
    }
    Ok(PQCodebook { config: *cfg, dim, centroids, inertia })
}

fn check_dim(cb: &PQCodebook, dim: usize) -> Result<()> {
    if cb.dim != dim {
        return Err(Error::DimensionMismatch { expected: cb.dim, found: dim });
    }
    Ok(())
}

/// Nearest-centroid index per sub-vector (Euclidean, lowest index on ties).
pub fn pq_encode(x: &EmbeddingMatrix, cb: &PQCodebook) -> Result<PQCodes> {
    check_dim(cb, x.dim())?;
    let m = cb.config.subspaces;
    let sub = cb.sub_dim();
    let mut codes = vec![0u16; x.len() * m];
    codes.par_chunks_mut(m.max(1)).zip(x.data().par_chunks(x.dim())).for_each(|(out, row)| {
        for (s, (o, part)) in out.iter_mut().zip(row.chunks_exact(sub)).enumerate() {
            *o = nearest(part, cb.subspace(s), sub).0 as u16;
        }
    });
    Ok(PQCodes { subspaces: m, centroids: cb.config.centroids, ids: x.ids().to_vec(), codes })
}

fn check_codes(codes: &PQCodes, cb: &PQCodebook) -> Result<()> {
    if codes.subspaces != cb.config.subspaces || codes.centroids != cb.config.centroids {
        return Err(Error::InvalidConfig(format!(
            "codes were produced for PQ[{},{}], codebook is {}",
            codes.subspaces,
            codes.centroids,
            cb.config.label()
        )));
    }
    Ok(())
}

fn reconstruct_row(codes: &[u16], cb: &PQCodebook, out: &mut [f32]) {
    let sub = cb.sub_dim();
    for (s, (o, &c)) in out.chunks_exact_mut(sub).zip(codes).enumerate() {
        o.copy_from_slice(cb.centroid(s, usize::from(c)));
    }
}

/// Concatenation of the assigned centroids.
pub fn pq_reconstruct(codes: &PQCodes, cb: &PQCodebook) -> Result<EmbeddingMatrix> {
    check_codes(codes, cb)?;
    let mut data = vec![0f32; codes.len() * cb.dim];
    data.par_chunks_mut(cb.dim).enumerate().for_each(|(i, out)| reconstruct_row(codes.row(i), cb, out));
    EmbeddingMatrix::with_ids(cb.dim, data, codes.ids.clone())
}

/// Cosine between the reconstructions of two encoded vectors.
pub fn pq_cosine(a: &[u16], b: &[u16], cb: &PQCodebook) -> Result<f64> {
    let m = cb.config.subspaces;
    if a.len() != m || b.len() != m {
        return Err(Error::LengthMismatch { left: a.len().min(b.len()), right: m });
    }
    if a.iter().chain(b).any(|&c| usize::from(c) >= cb.config.centroids) {
        return Err(Error::InvalidConfig("centroid index out of range".into()));
    }
    let (mut ra, mut rb) = (vec![0f32; cb.dim], vec![0f32; cb.dim]);
    reconstruct_row(a, cb, &mut ra);
    reconstruct_row(b, cb, &mut rb);
    cosine(&ra, &rb)
}

/// Mean squared per-element reconstruction error of `x` under `cb`.
pub fn reconstruction_mse(x: &EmbeddingMatrix, cb: &PQCodebook) -> Result<f64> {
    let codes = pq_encode(x, cb)?;
    let rec = pq_reconstruct(&codes, cb)?;
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sse: f64 = x
        .data()
        .iter()
        .zip(rec.data())
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum();
    Ok(sse / x.data().len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs() -> EmbeddingMatrix {
        let mut rng = Rng::new(8);
        let noise = Normal::new(0.0f32, 0.05).unwrap();
        let mut data = Vec::new();
        for i in 0..200 {
            let (cx, cy) = if i % 2 == 0 { (-5.0, 1.0) } else { (4.0, -3.0) };
            data.push(cx + noise.sample(&mut rng));
            data.push(cy + noise.sample(&mut rng));
        }
        EmbeddingMatrix::new(2, data).unwrap()
    }

    #[test]
    fn config_parsing() {
        let cfg = PQConfig::parse("pq:32:256").unwrap();
        assert_eq!((cfg.subspaces, cfg.centroids), (32, 256));
        assert_eq!(cfg.label(), "PQ[32,256]");
        for bad in ["pq:32", "pq:0:16", "pq:4:0", "pq:4:70000", "x:4:4", "pq:4:4:4"] {
            assert!(PQConfig::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn exact_clustering_of_repeated_values() {
        // K distinct sub-vector values, each repeated
        let values = [[0.0f32, 1.0], [3.0, 3.0], [-2.0, 5.0], [7.0, -1.0]];
        let rows: Vec<Vec<f32>> = (0..40).map(|i| values[i % 4].to_vec()).collect();
        let m = EmbeddingMatrix::from_rows(&rows).unwrap();
        let cb = pq_fit(&m, &PQConfig::new(1, 4)).unwrap();
        let mut found: Vec<Vec<f32>> = (0..4).map(|c| cb.centroid(0, c).to_vec()).collect();
        found.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expect: Vec<Vec<f32>> = values.iter().map(|v| v.to_vec()).collect();
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(found, expect);
        assert_eq!(*cb.inertia_history()[0].last().unwrap(), 0.0);
    }

    #[test]
    fn two_blobs_recover_means() {
        let m = blobs();
        let cb = pq_fit(&m, &PQConfig::new(1, 2)).unwrap();
        // closed-form oracle: per-blob sample means
        let mut means = [[0f64; 2]; 2];
        for (i, r) in m.rows().enumerate() {
            means[i % 2][0] += f64::from(r[0]) / 100.0;
            means[i % 2][1] += f64::from(r[1]) / 100.0;
        }
        for mean in means {
            let hit = (0..2).any(|c| {
                let cen = cb.centroid(0, c);
                (f64::from(cen[0]) - mean[0]).abs() < 1e-6 && (f64::from(cen[1]) - mean[1]).abs() < 1e-6
            });
            assert!(hit, "no centroid near {mean:?}");
        }
    }

    #[test]
    fn fit_errors() {
        let m = blobs();
        assert!(matches!(pq_fit(&m, &PQConfig::new(3, 2)), Err(Error::IndivisibleDim { dim: 2, subspaces: 3 })));
        let small = m.select(&[0, 1]);
        assert!(matches!(pq_fit(&small, &PQConfig::new(1, 3)), Err(Error::TooFewTrainingVectors { .. })));
    }

    #[test]
    fn fit_is_deterministic() {
        let mut rng = Rng::new(1);
        let m = EmbeddingMatrix::gaussian(300, 16, false, &mut rng).unwrap();
        let cfg = PQConfig { seed: 77, ..PQConfig::new(4, 8) };
        assert_eq!(pq_fit(&m, &cfg).unwrap(), pq_fit(&m, &cfg).unwrap());
    }

    #[test]
    fn inertia_never_increases() {
        let mut rng = Rng::new(2);
        let m = EmbeddingMatrix::gaussian(500, 12, false, &mut rng).unwrap();
        let cfg = PQConfig { tol: 0.0, iters: 40, ..PQConfig::new(3, 16) };
        let cb = pq_fit(&m, &cfg).unwrap();
        for hist in cb.inertia_history() {
            assert!(hist.len() > 1);
            for w in hist.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-9), "{w:?}");
            }
        }
    }

    #[test]
    fn centroid_concatenation_is_fixed_point() {
        let mut rng = Rng::new(3);
        let m = EmbeddingMatrix::gaussian(200, 8, false, &mut rng).unwrap();
        let cb = pq_fit(&m, &PQConfig::new(4, 5)).unwrap();
        let row: Vec<f32> = (0..4).flat_map(|s| cb.centroid(s, (s * 2) % 5).to_vec()).collect();
        let x = EmbeddingMatrix::new(8, row.clone()).unwrap();
        let rec = pq_reconstruct(&pq_encode(&x, &cb).unwrap(), &cb).unwrap();
        assert_eq!(rec.row(0), row.as_slice());
    }

    #[test]
    fn encoding_is_optimal_per_subspace() {
        let mut rng = Rng::new(4);
        let train = EmbeddingMatrix::gaussian(64, 6, false, &mut rng).unwrap();
        let cb = pq_fit(&train, &PQConfig::new(2, 3)).unwrap();
        let x = EmbeddingMatrix::gaussian(20, 6, false, &mut rng).unwrap();
        let codes = pq_encode(&x, &cb).unwrap();
        let rec = pq_reconstruct(&codes, &cb).unwrap();
        for (i, row) in x.rows().enumerate() {
            let err = crate::similarity::euclidean(row, rec.row(i)).unwrap();
            // exhaustive oracle over all K^M = 9 assignments
            for a in 0..3 {
                for b in 0..3 {
                    let alt: Vec<f32> = cb.centroid(0, a).iter().chain(cb.centroid(1, b)).copied().collect();
                    assert!(err <= crate::similarity::euclidean(row, &alt).unwrap() + 1e-9);
                }
            }
        }
    }

    #[test]
    fn pq_cosine_matches_reconstruction() {
        let mut rng = Rng::new(5);
        let m = EmbeddingMatrix::gaussian(100, 8, false, &mut rng).unwrap();
        let cb = pq_fit(&m, &PQConfig::new(2, 4)).unwrap();
        let codes = pq_encode(&m, &cb).unwrap();
        let rec = pq_reconstruct(&codes, &cb).unwrap();
        assert!((pq_cosine(codes.row(3), codes.row(3), &cb).unwrap() - 1.0).abs() < 1e-12);
        for (i, j) in [(0, 1), (5, 9), (40, 2)] {
            let direct = cosine(rec.row(i), rec.row(j)).unwrap();
            assert!((pq_cosine(codes.row(i), codes.row(j), &cb).unwrap() - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn toy_codebook_cosine() {
        // two centroids per 1-d sub-space: {1, -1} and {2, 0.5}
        let cfg = PQConfig::new(2, 2);
        let cb = PQCodebook::from_parts(cfg, 2, vec![1.0, -1.0, 2.0, 0.5]).unwrap();
        // a -> (1, 0.5), b -> (-1, 2)
        let oracle = (1.0 * -1.0 + 0.5 * 2.0) / ((1.25f64).sqrt() * 5f64.sqrt());
        assert!((pq_cosine(&[0, 1], &[1, 0], &cb).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn mse_shrinks_with_more_centroids() {
        let mut rng = Rng::new(6);
        let m = EmbeddingMatrix::gaussian(400, 8, false, &mut rng).unwrap();
        let mut last = f64::INFINITY;
        for k in [1, 2, 4, 8, 16] {
            let cb = pq_fit(&m, &PQConfig::new(2, k)).unwrap();
            let mse = reconstruction_mse(&m, &cb).unwrap();
            assert!(mse <= last, "K={k}: {mse} > {last}");
            last = mse;
        }
    }
}
