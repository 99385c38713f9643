//! Acceptance suite. Prints one line per criterion and exits non-zero when
//! any criterion fails. Dataset-backed criteria run only when their inputs
//! are configured through environment variables:
//!
//! * `QUANTVEC_DBPEDIA` (and `QUANTVEC_DBPEDIA_DIM` for raw files): the 1M
//!   dbpedia embedding file in any ingestible format.
//! * `QUANTVEC_STS_A`, `QUANTVEC_STS_B`, `QUANTVEC_STS_GOLD`: precomputed
//!   sentence-pair embeddings and one gold score per line.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng as _;
use quantvec::eval::{eval_pairwise_rmse, eval_retrieval_overlap, eval_sts, parse_methods, Method, RetrievalOptions, StsOptions};
use quantvec::io::{self, InputFormat};
use quantvec::pq::{pq_encode, pq_fit, pq_reconstruct, reconstruction_mse, PQConfig};
use quantvec::quantize::{quantize_group_with, QuantizedStore, ScaleDenominator};
use quantvec::{knn_float, knn_quantized, DType, EmbeddingMatrix, GroupSize, Kind, Queries, Rng, SearchOptions};

const SEED: u64 = 42;

const C1_LIMIT: Duration = Duration::from_secs(10);
const C2_LIMIT: Duration = Duration::from_secs(5);
const C3_LIMIT: Duration = Duration::from_secs(120);
const C4_LIMIT: Duration = Duration::from_secs(120);
const C7_LIMIT: Duration = Duration::from_secs(30);
const C8_LIMIT: Duration = Duration::from_secs(30);

/// Relative slack on the half-step bound for f64 evaluation of x / S.
const ROUND_TRIP_SLACK: f64 = 1e-12;
const TABLE1: [(&str, f64); 6] =
    [("bf16", 0.0015), ("int8", 0.0028), ("int4:32", 0.0048), ("int4:64", 0.0092), ("int4:128", 0.0163), ("int4:256", 0.0324)];
const TABLE1_REL_TOL: f64 = 0.25;
const TABLE2: [(&str, f64); 6] =
    [("bf16", 0.98), ("int8", 0.83), ("int4:32", 0.67), ("int4:64", 0.56), ("int4:128", 0.45), ("int4:256", 0.28)];
const TABLE2_ABS_TOL: f64 = 0.10;
const STS_SCALAR_MIN_RATIO: f64 = 0.93;
const STS_PQ_MAX_RATIO: f64 = 0.80;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String, ok: bool) -> Outcome {
    let detail = format!("{detail}; {:.2}s (limit {}s)", elapsed.as_secs_f64(), limit.as_secs());
    check(ok && elapsed < limit, detail)
}

fn dt(s: &str) -> DType {
    s.parse().unwrap()
}

fn c1_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let rng = Rng::new(SEED);
    let db = EmbeddingMatrix::gaussian(500, 128, false, &mut rng.derive(1)).unwrap();
    let queries = EmbeddingMatrix::gaussian(50, 128, false, &mut rng.derive(2)).unwrap();
    let mut mismatches = 0usize;
    let mut compared = 0usize;
    for name in ["bf16", "int8", "int4:32", "int4:64"] {
        let d = dt(name);
        let store = QuantizedStore::from_matrix(&db, d).unwrap();
        let deq = store.dequantize();
        // Queries quantized like the database, and queries kept in full precision.
        let qdeq = QuantizedStore::from_matrix(&queries, d).unwrap().dequantize();
        let runs = [
            (knn_quantized(Queries::Float(&queries), &store, SearchOptions::new(10)).unwrap(), knn_float(&qdeq, &deq, 10).unwrap()),
            (
                knn_quantized(Queries::Float(&queries), &store, SearchOptions { quantize_queries: false, ..SearchOptions::new(10) })
                    .unwrap(),
                knn_float(&queries, &deq, 10).unwrap(),
            ),
        ];
        for (got, want) in &runs {
            for (g, w) in got.iter().zip(want) {
                compared += 1;
                if g.ids() != w.ids() {
                    mismatches += 1;
                }
            }
        }
    }
    within(start.elapsed(), C1_LIMIT, format!("{mismatches} mismatched id lists of {compared}"), mismatches == 0)
}

fn c2_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(SEED).derive(3);
    let mut worst = 0.0f64;
    let mut clipped_default = 0usize;
    let mut violations = 0usize;
    let mut checked = 0usize;
    let mut scale_mismatches = 0usize;
    for bits in [4u32, 8] {
        let qmax = (1i32 << (bits - 1)) - 1;
        for denom in [ScaleDenominator::Symmetric, ScaleDenominator::FullRange] {
            for _ in 0..10_000 {
                let len = rng.gen_range(1..=256);
                let mag = 10f64.powf(rng.gen_range(-6.0..6.0));
                let x: Vec<f32> = (0..len).map(|_| (rng.gen_range(-1.0..1.0) * mag) as f32).collect();
                let (codes, stored) = quantize_group_with(&x, bits, denom).unwrap();
                // Codes are rounded against the real-valued scale max|x| / denominator;
                // the stored scale is that value rounded to f32.
                let max = x.iter().fold(0f64, |m, &v| m.max((v as f64).abs()));
                let s = if max == 0.0 { 1.0 } else { max / denom.value(bits) };
                if stored != s as f32 {
                    scale_mismatches += 1;
                }
                for (&xi, &c) in x.iter().zip(&codes) {
                    let c = c as i32;
                    let raw = (xi as f64 / s).round();
                    let is_clipped = raw > qmax as f64 || raw < (-qmax - 1) as f64;
                    if denom == ScaleDenominator::Symmetric && is_clipped {
                        clipped_default += 1;
                    }
                    if is_clipped {
                        continue;
                    }
                    checked += 1;
                    let err = (xi as f64 - s * c as f64).abs();
                    worst = worst.max(err / s);
                    if err > s / 2.0 * (1.0 + ROUND_TRIP_SLACK) {
                        violations += 1;
                    }
                }
            }
        }
    }
    let detail = format!(
        "{checked} elements, {violations} over S/2, worst |x - S*code| = {worst:.9} S, {clipped_default} clipped with default denominator, {scale_mismatches} stored scales off"
    );
    within(start.elapsed(), C2_LIMIT, detail, violations == 0 && clipped_default == 0 && scale_mismatches == 0)
}

const TABLE_DTYPES: [&str; 6] = ["bf16", "int8", "int4:32", "int4:64", "int4:128", "int4:256"];

fn c3_rmse_ordering() -> Outcome {
    let start = Instant::now();
    let db = EmbeddingMatrix::gaussian(1000, 1536, true, &mut Rng::new(SEED).derive(4)).unwrap();
    let dtypes: Vec<DType> = TABLE_DTYPES.iter().map(|s| dt(s)).collect();
    let r = eval_pairwise_rmse(&db, &dtypes, 1000, ScaleDenominator::Symmetric, &mut Rng::new(SEED)).unwrap();
    let values: Vec<f64> = TABLE_DTYPES.iter().map(|m| r.row(m).unwrap().value).collect();
    let strict = values.windows(2).all(|w| w[0] < w[1]);
    let shown: Vec<String> = TABLE_DTYPES.iter().zip(&values).map(|(m, v)| format!("{m}={v:.5}")).collect();
    within(start.elapsed(), C3_LIMIT, shown.join(" "), strict)
}

fn c4_overlap_ordering() -> Outcome {
    let start = Instant::now();
    let pool = EmbeddingMatrix::gaussian(10_000, 1536, true, &mut Rng::new(SEED).derive(5)).unwrap();
    let mut names = vec!["fp32"];
    names.extend(TABLE_DTYPES);
    let methods = parse_methods(&names.join(",")).unwrap();
    let opts = RetrievalOptions::new(9_000, 1_000);
    let r = eval_retrieval_overlap(&pool, &methods, opts, &mut Rng::new(SEED)).unwrap();
    let values: Vec<f64> = TABLE_DTYPES.iter().map(|m| r.row(m).unwrap().value).collect();
    let fp32 = r.row("fp32").unwrap().value;
    let monotone = values.windows(2).all(|w| w[0] >= w[1]);
    let shown: Vec<String> = names.iter().map(|m| format!("{m}={:.2}", r.row(m).unwrap().value)).collect();
    let elapsed = start.elapsed();
    let mut detail = shown.join(" ");
    if !monotone {
        detail.push_str(&format!("; {}", overlap_replicates(&methods)));
    }
    within(elapsed, C4_LIMIT, detail, monotone && fp32 == 1.0)
}

/// Context for a failed single draw: the same protocol over independent
/// replicate seeds. Reported only; the verdict uses the pinned seed.
fn overlap_replicates(methods: &[Method]) -> String {
    const REPLICATES: u64 = 20;
    let mut sums = vec![0.0; TABLE_DTYPES.len()];
    let mut monotone = 0;
    for rep in 0..REPLICATES {
        let seed = 1000 + rep;
        let pool = EmbeddingMatrix::gaussian(10_000, 1536, true, &mut Rng::new(seed).derive(5)).unwrap();
        let r = eval_retrieval_overlap(&pool, methods, RetrievalOptions::new(9_000, 1_000), &mut Rng::new(seed)).unwrap();
        let values: Vec<f64> = TABLE_DTYPES.iter().map(|m| r.row(m).unwrap().value).collect();
        monotone += values.windows(2).all(|w| w[0] >= w[1]) as usize;
        for (s, v) in sums.iter_mut().zip(&values) {
            *s += v;
        }
    }
    let means: Vec<String> = sums.iter().map(|s| format!("{:.3}", s / REPLICATES as f64)).collect();
    format!("replicate seeds 1000..1020: {monotone}/{REPLICATES} monotone, mean accuracy {}", means.join(" "))
}

fn load_env_matrix(var: &str, dim_var: &str) -> Option<EmbeddingMatrix> {
    let path = std::env::var(var).ok()?;
    let path = Path::new(&path);
    let dim = std::env::var(dim_var).ok().and_then(|d| d.parse().ok());
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let m = match ext.as_str() {
        "qvst" => io::load_store(path).map(|s| s.dequantize()),
        "jsonl" => io::ingest(path, InputFormat::Jsonl, dim).map(|r| r.0),
        "csv" => io::ingest(path, InputFormat::Csv, dim).map(|r| r.0),
        _ => io::ingest(path, InputFormat::RawF32Le, dim).map(|r| r.0),
    };
    Some(m.unwrap_or_else(|e| panic!("{var}={}: {e}", path.display())))
}

fn c5_dbpedia() -> Outcome {
    let Some(db) = load_env_matrix("QUANTVEC_DBPEDIA", "QUANTVEC_DBPEDIA_DIM") else {
        return Outcome::Skip("dataset not present (set QUANTVEC_DBPEDIA)".into());
    };
    let dtypes: Vec<DType> = TABLE1.iter().map(|(m, _)| dt(m)).collect();
    let r1 = eval_pairwise_rmse(&db, &dtypes, 1000, ScaleDenominator::Symmetric, &mut Rng::new(SEED)).unwrap();
    let mut ok = true;
    let mut shown = Vec::new();
    for (m, want) in TABLE1 {
        let got = r1.row(m).unwrap().value;
        ok &= (got - want).abs() <= TABLE1_REL_TOL * want;
        shown.push(format!("rmse {m}={got:.4}/{want}"));
    }
    let test_n = db.len() / 10;
    let methods: Vec<Method> = TABLE2.iter().map(|(m, _)| m.parse().unwrap()).collect();
    let r2 = eval_retrieval_overlap(&db, &methods, RetrievalOptions::new(db.len() - test_n, test_n), &mut Rng::new(SEED)).unwrap();
    for (m, want) in TABLE2 {
        let got = r2.row(m).unwrap().value;
        ok &= (got - want).abs() <= TABLE2_ABS_TOL;
        shown.push(format!("acc {m}={got:.2}/{want}"));
    }
    check(ok, shown.join(" "))
}

fn c6_sts() -> Outcome {
    let (Some(a), Some(b), Ok(gold_path)) = (
        load_env_matrix("QUANTVEC_STS_A", "QUANTVEC_STS_DIM"),
        load_env_matrix("QUANTVEC_STS_B", "QUANTVEC_STS_DIM"),
        std::env::var("QUANTVEC_STS_GOLD"),
    ) else {
        return Outcome::Skip("embeddings not present (set QUANTVEC_STS_A, QUANTVEC_STS_B, QUANTVEC_STS_GOLD)".into());
    };
    let gold: Vec<f64> = std::fs::read_to_string(gold_path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse().unwrap())
        .collect();
    let methods = parse_methods("fp32,int8,int4,pq:32:256").unwrap();
    let r = eval_sts(&a, &b, &gold, &methods, &StsOptions::default(), &mut Rng::new(SEED)).unwrap();
    let ratio = |m: &str| r.row(m).unwrap().ratio.unwrap();
    let (i8r, i4r, pqr) = (ratio("int8"), ratio("int4"), ratio("pq:32:256"));
    check(
        i8r >= STS_SCALAR_MIN_RATIO && i4r >= STS_SCALAR_MIN_RATIO && pqr <= STS_PQ_MAX_RATIO,
        format!("ratios int8={i8r:.4} int4={i4r:.4} PQ[32,256]={pqr:.4}"),
    )
}

fn c7_pq() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(SEED).derive(7);
    let (n, d) = (4096, 64);
    let centers = EmbeddingMatrix::gaussian(16, d, false, &mut rng).unwrap();
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        let c = centers.row(i % 16);
        data.extend(c.iter().map(|&v| v * 5.0 + rng.sample::<f32, _>(rand_distr::StandardNormal) * 0.5));
    }
    let x = EmbeddingMatrix::new(d, data).unwrap();
    let cb4 = pq_fit(&x, &PQConfig::new(8, 4)).unwrap();
    let cb16 = pq_fit(&x, &PQConfig::new(8, 16)).unwrap();
    let (mse4, mse16) = (reconstruction_mse(&x, &cb4).unwrap(), reconstruction_mse(&x, &cb16).unwrap());

    // One vector per centroid index, built from centroid c of every subspace.
    let m = cb16.config().subspaces;
    let mut rows = Vec::new();
    let mut expected = Vec::new();
    for c in 0..16u16 {
        let mut row = Vec::with_capacity(d);
        for s in 0..m {
            let pick = (c as usize + s) % 16;
            row.extend_from_slice(cb16.centroid(s, pick));
            expected.push(pick as u16);
        }
        rows.push(row);
    }
    let concat = EmbeddingMatrix::from_rows(&rows).unwrap();
    let codes = pq_encode(&concat, &cb16).unwrap();
    let recon = pq_reconstruct(&codes, &cb16).unwrap();
    let exact = recon.data() == concat.data();
    let codes_match = codes.codes() == expected.as_slice();
    within(
        start.elapsed(),
        C7_LIMIT,
        format!("mse K=4 {mse4:.4}, K=16 {mse16:.4}; centroid concatenations reconstruct exactly: {exact}"),
        mse16 <= mse4 && exact && codes_match,
    )
}

fn c8_persistence() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(SEED).derive(8);
    let tmp = tempfile::tempdir().unwrap();
    let kinds = [Kind::Fp32, Kind::Bf16, Kind::Int8, Kind::Int4];
    let mut failures = Vec::new();
    for i in 0..1000 {
        let kind = kinds[i % 4];
        let dim = [1usize, 3, 8, 16, 33, 64, 96, 128][rng.gen_range(0..8)];
        let group = if kind.is_integer() && rng.gen_bool(0.6) {
            let divisors: Vec<u32> = (1..=dim as u32).filter(|g| dim as u32 % g == 0).collect();
            GroupSize::Elements(divisors[rng.gen_range(0..divisors.len())])
        } else {
            GroupSize::WholeVector
        };
        let dtype = DType::new(kind, group).unwrap();
        let n = rng.gen_range(0..40);
        let m = EmbeddingMatrix::gaussian(n, dim, rng.gen_bool(0.5), &mut rng.derive(1000 + i as u64)).unwrap();
        let store = QuantizedStore::from_matrix(&m, dtype).unwrap();
        let bytes = io::store_to_bytes(&store);
        let path = tmp.path().join(format!("s{i}.qvst"));
        io::save_store(&store, &path).unwrap();
        let loaded = io::load_store(&path).unwrap();
        let on_disk = std::fs::read(&path).unwrap();
        let payload_ok = store.payload_bytes() == dtype.bytes_per_vector(dim) * n
            && loaded.payload_bytes() == dtype.bytes_per_vector(dim) * n;
        if on_disk != bytes || io::store_to_bytes(&loaded) != bytes || loaded != store || !payload_ok {
            failures.push(format!("{dtype} n={n} d={dim}"));
        }
    }
    within(start.elapsed(), C8_LIMIT, format!("1000 stores, {} failures {:?}", failures.len(), failures.first()), failures.is_empty())
}

fn c9_accounting() -> Outcome {
    let (d, n) = (1536usize, 1_000_000u64);
    let fp32 = DType::FP32.payload_bytes(d, n);
    let int4 = DType::int4(GroupSize::WholeVector).unwrap();
    let codes = int4.code_bytes_per_vector(d) as u64 * n;
    let with_scales = int4.payload_bytes(d, n);
    check(
        fp32 == 6_144_000_000 && codes == 768_000_000 && fp32 / codes == 8 && with_scales == codes + 4 * n,
        format!("fp32 {fp32} bytes, int4 codes {codes} bytes, int4 with scales {with_scales} bytes"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 oracle equivalence", c1_oracle_equivalence),
        ("2 round-trip bound", c2_round_trip),
        ("3 pairwise RMSE ordering", c3_rmse_ordering),
        ("4 retrieval overlap ordering", c4_overlap_ordering),
        ("5 dbpedia reproduction", c5_dbpedia),
        ("6 STS reproduction", c6_sts),
        ("7 PQ sanity", c7_pq),
        ("8 bit-exact persistence", c8_persistence),
        ("9 memory accounting", c9_accounting),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Outcome::Fail(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Outcome::Pass(d) => println!("criterion {name}: PASS ({d})"),
            Outcome::Skip(d) => println!("criterion {name}: SKIP ({d})"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("criterion {name}: FAIL ({d})");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
