use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use quantvec::eval::{self, MergedReport};
use quantvec::io::{self, DatasetManifest, InputFormat};
use quantvec::pq::{pq_encode, pq_fit, reconstruction_mse, PQConfig};
use quantvec::{
    DType, EmbeddingMatrix, Error, ErrorClass, EvalReport, GroupSize, Method, QuantizedStore, Queries, Result, Rng,
    RetrievalOptions, ScaleDenominator, SearchOptions, StsOptions,
};

#[derive(Debug, Parser, Serialize)]
#[command(name = "quantvec", version, about = "Quantized embedding store with exact cosine kNN search")]
struct Cli {
    /// Worker threads for parallel kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[arg(long, global = true, env = "QUANTVEC_SEED", default_value_t = quantvec::rng::DEFAULT_SEED)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Parse an embedding file into an FP32 store plus a manifest.
    Ingest(IngestArgs),
    /// Quantize a matrix into a store file.
    Quantize(QuantizeArgs),
    /// Exact top-k search of queries against a store.
    Search(SearchArgs),
    /// Run an evaluation protocol.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Product-quantization codebooks and codes.
    #[command(subcommand)]
    Pq(PqCommand),
    /// Combine report files.
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Format {
    /// Store file written by `ingest` or `quantize`.
    Qvst,
    /// Headerless little-endian f32 rows; needs `--dim`.
    Raw,
    Jsonl,
    Csv,
}

#[derive(Debug, Args, Serialize)]
struct MatrixArgs {
    #[arg(long)]
    input: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct IngestArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    /// Output store; the manifest goes next to it as `<output>.manifest.json`.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct QuantizeArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    /// fp32, bf16, int8[:g] or int4[:g].
    #[arg(long)]
    dtype: DType,
    /// Overrides the group size of an integer dtype.
    #[arg(long)]
    group_size: Option<u32>,
    #[arg(long, default_value_t)]
    scale_denominator: ScaleDenominator,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SearchArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, value_enum)]
    queries_format: Option<Format>,
    #[arg(long, short, default_value_t = 10)]
    k: usize,
    /// Quantize queries with the store dtype before scoring.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    quantize_queries: bool,
    #[arg(long, default_value_t)]
    scale_denominator: ScaleDenominator,
    /// JSON output path (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ReportArgs {
    /// Writes `<prefix>.csv` and `<prefix>.json`; the CSV also goes to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Record the wall-clock time in the report metadata.
    #[arg(long)]
    timestamp: bool,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum EvalCommand {
    /// RMSE of quantized pairwise cosines against FP32.
    Rmse {
        #[command(flatten)]
        matrix: MatrixArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        dtypes: Vec<DType>,
        #[arg(long, default_value_t = 1000)]
        sample_n: usize,
        #[arg(long, default_value_t)]
        scale_denominator: ScaleDenominator,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Top-k overlap with the FP32 result lists.
    Retrieval {
        #[command(flatten)]
        matrix: MatrixArgs,
        /// Scalar dtypes and/or `pq:M:K` configurations.
        #[arg(long, alias = "methods", value_delimiter = ',', required = true)]
        dtypes: Vec<Method>,
        #[arg(long)]
        train_n: usize,
        #[arg(long)]
        test_n: usize,
        #[arg(long, short, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 10)]
        n_queries: usize,
        #[arg(long, default_value_t = 0.1)]
        max_abs_cos: f64,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        quantize_queries: bool,
        #[arg(long, default_value_t)]
        scale_denominator: ScaleDenominator,
        /// Accuracy of an external approximate index, echoed into the report.
        #[arg(long)]
        reference_hnsw_accuracy: Option<f64>,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Pearson correlation of pair cosines with gold scores.
    Sts {
        /// First sentence of each pair.
        #[arg(long)]
        a: PathBuf,
        /// Second sentence of each pair.
        #[arg(long)]
        b: PathBuf,
        #[arg(long, value_enum)]
        format: Option<Format>,
        #[arg(long)]
        dim: Option<usize>,
        /// One gold score per line.
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<Method>,
        #[arg(long)]
        dataset: Option<String>,
        /// Share of pairs used only for PQ training.
        #[arg(long, default_value_t = 0.5)]
        train_fraction: f64,
        #[arg(long, default_value_t)]
        scale_denominator: ScaleDenominator,
        #[command(flatten)]
        report: ReportArgs,
    },
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum PqCommand {
    /// Fit a codebook.
    Train {
        #[command(flatten)]
        matrix: MatrixArgs,
        /// `pq:M:K`.
        #[arg(long)]
        config: String,
        #[arg(long, default_value_t = 25)]
        iters: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Encode a matrix with a codebook.
    Encode {
        #[command(flatten)]
        matrix: MatrixArgs,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum ReportCommand {
    /// Merge JSON reports into one JSON document and a long-format CSV.
    Merge {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Writes `<prefix>.csv` and `<prefix>.json`.
        #[arg(long)]
        output: PathBuf,
    },
}

fn detect_format(path: &Path, explicit: Option<Format>) -> Result<Format> {
    if let Some(f) = explicit {
        return Ok(f);
    }
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    Ok(match ext.as_str() {
        "qvst" => Format::Qvst,
        "jsonl" | "ndjson" => Format::Jsonl,
        "csv" => Format::Csv,
        "f32" | "bin" | "raw" => Format::Raw,
        _ => return Err(Error::InvalidConfig(format!("cannot infer format of {}; pass --format", path.display()))),
    })
}

fn load_matrix(path: &Path, format: Option<Format>, dim: Option<usize>) -> Result<(EmbeddingMatrix, DatasetManifest)> {
    let input = match detect_format(path, format)? {
        Format::Qvst => {
            let m = io::load_store(path)?.dequantize();
            let manifest = DatasetManifest::for_matrix(&m, vec![path.display().to_string()], "qvst");
            return Ok((m, manifest));
        }
        Format::Raw => InputFormat::RawF32Le,
        Format::Jsonl => InputFormat::Jsonl,
        Format::Csv => InputFormat::Csv,
    };
    io::ingest(path, input, dim)
}

fn load(m: &MatrixArgs) -> Result<(EmbeddingMatrix, DatasetManifest)> {
    load_matrix(&m.input, m.format, m.dim)
}

fn with_group(dt: DType, group: Option<u32>) -> Result<DType> {
    match group {
        None => Ok(dt),
        Some(g) if dt.kind().is_integer() => DType::new(dt.kind(), GroupSize::Elements(g)),
        Some(_) => Err(Error::InvalidConfig(format!("--group-size does not apply to {dt}"))),
    }
}

fn read_gold(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t.parse().map_err(|_| Error::Parse { line: i + 1, message: format!("bad gold score `{t}`") })?;
        if !v.is_finite() {
            return Err(Error::NonFiniteValue { line: i + 1 });
        }
        out.push(v);
    }
    Ok(out)
}

fn emit_report(mut report: EvalReport, args: &ReportArgs, run_config: serde_json::Value) -> Result<()> {
    report.metadata.run_config = Some(run_config);
    if args.timestamp {
        report.metadata.created_unix = SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs());
    }
    for w in &report.metadata.warnings {
        eprintln!("warning: {w}");
    }
    let csv = report.to_csv()?;
    std::io::stdout().write_all(csv.as_bytes())?;
    if let Some(prefix) = &args.output {
        report.save(prefix)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let run_config = serde_json::to_value(cli)?;
    log::info!("run config: {run_config}");
    match &cli.command {
        Command::Ingest(a) => {
            let (m, manifest) = load(&a.matrix)?;
            let store = QuantizedStore::from_matrix(&m, DType::FP32)?;
            io::save_store(&store, &a.output)?;
            let mut mpath = a.output.clone().into_os_string();
            mpath.push(".manifest.json");
            manifest.save(Path::new(&mpath))?;
            println!("ingested {} vectors of dim {} (checksum {})", manifest.count, manifest.dim, manifest.checksum);
        }
        Command::Quantize(a) => {
            let dt = with_group(a.dtype, a.group_size)?;
            let (m, _) = load(&a.matrix)?;
            let store = QuantizedStore::from_matrix_with(&m, dt, a.scale_denominator)?;
            io::save_store(&store, &a.output)?;
            let written = fs::metadata(&a.output)?.len();
            let fp32 = DType::FP32.payload_bytes(m.dim(), m.len() as u64);
            let payload = store.payload_bytes() as u64;
            let codes = store.code_bytes() as u64;
            println!("dtype: {dt}");
            println!("vectors: {} x {}", m.len(), m.dim());
            println!("bytes written: {written}");
            println!("payload bytes: {payload} (codes {codes}, scales {})", store.scale_bytes());
            println!("fp32 payload bytes: {fp32}");
            if payload > 0 {
                println!("compression ratio: {:.4}", fp32 as f64 / payload as f64);
                println!("compression ratio excluding scales: {:.4}", fp32 as f64 / codes as f64);
            }
        }
        Command::Search(a) => {
            let store = io::load_store(&a.store)?;
            let (queries, _) = load_matrix(&a.queries, a.queries_format, Some(store.dim()))?;
            let opts =
                SearchOptions { k: a.k, quantize_queries: a.quantize_queries, denominator: a.scale_denominator };
            let results = quantvec::knn_quantized(Queries::Float(&queries), &store, opts)?;
            let doc = serde_json::json!({ "run_config": run_config, "results": results });
            let text = serde_json::to_string_pretty(&doc)? + "\n";
            match &a.output {
                Some(p) => fs::write(p, text)?,
                None => std::io::stdout().write_all(text.as_bytes())?,
            }
        }
        Command::Eval(EvalCommand::Rmse { matrix, dtypes, sample_n, scale_denominator, report }) => {
            let (m, manifest) = load(matrix)?;
            let mut r = eval::eval_pairwise_rmse(&m, dtypes, *sample_n, *scale_denominator, &mut Rng::new(cli.seed))?;
            r.metadata.manifest_checksum = Some(manifest.checksum);
            emit_report(r, report, run_config)?;
        }
        Command::Eval(EvalCommand::Retrieval {
            matrix,
            dtypes,
            train_n,
            test_n,
            k,
            n_queries,
            max_abs_cos,
            quantize_queries,
            scale_denominator,
            reference_hnsw_accuracy,
            report,
        }) => {
            let (m, manifest) = load(matrix)?;
            let opts = RetrievalOptions {
                train_n: *train_n,
                test_n: *test_n,
                k: *k,
                n_queries: *n_queries,
                max_abs_cos: *max_abs_cos,
                quantize_queries: *quantize_queries,
                denominator: *scale_denominator,
            };
            let methods = seeded(dtypes, cli.seed);
            let mut r = eval::eval_retrieval_overlap(&m, &methods, opts, &mut Rng::new(cli.seed))?;
            r.metadata.manifest_checksum = Some(manifest.checksum);
            r.metadata.reference_hnsw_accuracy = *reference_hnsw_accuracy;
            emit_report(r, report, run_config)?;
        }
        Command::Eval(EvalCommand::Sts {
            a,
            b,
            format,
            dim,
            gold,
            methods,
            dataset,
            train_fraction,
            scale_denominator,
            report,
        }) => {
            let (ma, mfa) = load_matrix(a, *format, *dim)?;
            let (mb, mfb) = load_matrix(b, *format, Some(ma.dim()))?;
            let gold = read_gold(gold)?;
            let opts = StsOptions {
                dataset: dataset.clone(),
                train_fraction: *train_fraction,
                denominator: *scale_denominator,
            };
            let methods = seeded(methods, cli.seed);
            let mut r = eval::eval_sts(&ma, &mb, &gold, &methods, &opts, &mut Rng::new(cli.seed))?;
            r.metadata.manifest_checksum = Some(format!("{}+{}", mfa.checksum, mfb.checksum));
            emit_report(r, report, run_config)?;
        }
        Command::Pq(PqCommand::Train { matrix, config, iters, tol, output }) => {
            let mut cfg = PQConfig::parse(config)?;
            cfg.iters = *iters;
            cfg.tol = *tol;
            cfg.seed = cli.seed;
            let (m, _) = load(matrix)?;
            let cb = pq_fit(&m, &cfg)?;
            fs::write(output, io::codebook_to_bytes(&cb))?;
            println!("codebook {} over {} vectors of dim {}", cfg.label(), m.len(), m.dim());
            println!("reconstruction mse: {}", reconstruction_mse(&m, &cb)?);
        }
        Command::Pq(PqCommand::Encode { matrix, codebook, output }) => {
            let cb = io::codebook_from_bytes(&fs::read(codebook)?)?;
            let (m, _) = load_matrix(&matrix.input, matrix.format, matrix.dim.or(Some(cb.dim())))?;
            let codes = pq_encode(&m, &cb)?;
            let bytes = io::codes_to_bytes(&codes);
            fs::write(output, &bytes)?;
            println!("encoded {} vectors with {}; bytes written: {}", codes.len(), cb.config().label(), bytes.len());
        }
        Command::Report(ReportCommand::Merge { inputs, output }) => {
            let reports = inputs.iter().map(|p| EvalReport::load_json(p)).collect::<Result<Vec<_>>>()?;
            let merged = MergedReport { reports };
            fs::write(output.with_extension("csv"), merged.to_csv()?)?;
            fs::write(output.with_extension("json"), serde_json::to_string_pretty(&merged)? + "\n")?;
            println!("merged {} reports", merged.reports.len());
        }
    }
    Ok(())
}

/// PQ configurations take the run seed.
fn seeded(methods: &[Method], seed: u64) -> Vec<Method> {
    methods
        .iter()
        .map(|m| match m {
            Method::Pq(cfg) => Method::Pq(PQConfig { seed, ..*cfg }),
            other => *other,
        })
        .collect()
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Input => 1,
        ErrorClass::Validation => 2,
        ErrorClass::Internal => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
