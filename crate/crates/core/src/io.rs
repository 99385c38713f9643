//! Dataset ingestion, binary store/codebook files, manifests and splits.
//!
//! # Store file (`QVST`)
//!
//! All integers little-endian, all reals IEEE-754 binary32 little-endian.
//!
//! ```text
//! offset  size            field
//! 0       4               magic "QVST"
//! 4       2               format version (1)
//! 6       1               kind: 0 fp32, 1 bf16, 2 int8, 3 int4
//! 7       1               bits: 32, 16, 8, 4
//! 8       4               dim
//! 12      8               count
//! 20      4               group size, 0 = whole vector
//! 24      8·count         ids
//! ..      4·count·groups  scales, row-major (absent for fp32/bf16)
//! ..      count·codebytes codes, row-major; int4 rows padded to whole bytes
//! ..      8               FNV-1a 64 of every preceding byte
//! ```
//!
//! `groups = ceil(dim / g)` and `codebytes = 4·dim | 2·dim | dim | ceil(dim/2)`,
//! so the scales and codes sections together hold exactly
//! `count · bytes_per_vector(dtype, dim)` bytes.
//!
//! # PQ codebook (`PQCB`) and codes (`PQCD`)
//!
//! ```text
//! PQCB: magic, u16 version, u16 reserved(0), u32 M, u32 K, u32 dim, u32 iters,
//!       f64 tol, u64 seed, f32 centroids[M·K·dim/M], u64 FNV-1a
//! PQCD: magic, u16 version, u8 code width (1 if K ≤ 256 else 2), u8 reserved(0),
//!       u32 M, u32 K, u64 count, u64 ids[count], codes[count·M], u64 FNV-1a
//! ```

use std::fs;
use std::hash::Hasher;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bf16::Bf16;
use crate::dtype::{DType, GroupSize, Kind};
use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;
use crate::pq::{PQCodebook, PQCodes, PQConfig};
use crate::quantize::{Codes, QuantizedStore};
use crate::rng::Rng;

pub const STORE_MAGIC: &[u8; 4] = b"QVST";
pub const PQ_CODEBOOK_MAGIC: &[u8; 4] = b"PQCB";
pub const PQ_CODES_MAGIC: &[u8; 4] = b"PQCD";
pub const FORMAT_VERSION: u16 = 1;
pub const STORE_HEADER_BYTES: usize = 24;
const TRAILER_BYTES: usize = 8;

/// 64-bit FNV-1a.
pub fn checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    RawF32Le,
    Jsonl,
    Csv,
}

impl InputFormat {
    pub fn name(self) -> &'static str {
        match self {
            InputFormat::RawF32Le => "raw_f32le",
            InputFormat::Jsonl => "jsonl",
            InputFormat::Csv => "csv",
        }
    }
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "raw" | "raw_f32le" | "f32" | "bin" => Ok(InputFormat::RawF32Le),
            "jsonl" | "ndjson" => Ok(InputFormat::Jsonl),
            "csv" => Ok(InputFormat::Csv),
            other => Err(Error::InvalidConfig(format!("unknown input format `{other}`"))),
        }
    }
}

fn push_row(line: usize, values: &[f64], dim: &mut Option<usize>, data: &mut Vec<f32>) -> Result<()> {
    let expected = *dim.get_or_insert(values.len());
    if values.len() != expected || expected == 0 {
        return Err(Error::DimMismatch { line, expected, found: values.len() });
    }
    for &v in values {
        let x = v as f32;
        if !x.is_finite() {
            return Err(Error::NonFiniteValue { line });
        }
        data.push(x);
    }
    Ok(())
}

/// Row `i` without an explicit id gets id `i`.
fn finish(dim: Option<usize>, data: Vec<f32>, ids: Vec<Option<u64>>) -> Result<EmbeddingMatrix> {
    let dim = dim.ok_or(Error::InvalidConfig("dimension unknown for empty input; pass it explicitly".into()))?;
    let ids = ids.into_iter().enumerate().map(|(i, id)| id.unwrap_or(i as u64)).collect();
    EmbeddingMatrix::with_ids(dim, data, ids)
}

/// Little-endian f32 rows with no header.
pub fn parse_raw_f32le(bytes: &[u8], dim: usize) -> Result<EmbeddingMatrix> {
    if dim == 0 {
        return Err(Error::InvalidConfig("dimension must be positive".into()));
    }
    let row_bytes = 4 * dim;
    if !bytes.len().is_multiple_of(row_bytes) {
        return Err(Error::Parse {
            line: bytes.len() / row_bytes + 1,
            message: format!("{} bytes is not a whole number of {row_bytes}-byte rows", bytes.len()),
        });
    }
    let mut data = Vec::with_capacity(bytes.len() / 4);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
        if !v.is_finite() {
            return Err(Error::NonFiniteValue { line: i / dim + 1 });
        }
        data.push(v);
    }
    EmbeddingMatrix::new(dim, data)
}

#[derive(Deserialize)]
struct JsonRow {
    id: Option<u64>,
    vector: Vec<f64>,
}

/// One JSON object per line with a required `vector` array and optional
/// `id`. Blank lines are skipped; other fields are ignored.
pub fn parse_jsonl<R: BufRead>(reader: R, dim: Option<usize>) -> Result<EmbeddingMatrix> {
    let mut dim = dim;
    let mut data = Vec::new();
    let mut ids = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonRow =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
        push_row(lineno, &row.vector, &mut dim, &mut data)?;
        ids.push(row.id);
    }
    finish(dim, data, ids)
}

/// Comma-separated rows of reals. An optional first line of column names is
/// recognised by containing a non-numeric field; if its first column is
/// `id`, that column holds row ids.
pub fn parse_csv<R: Read>(reader: R, dim: Option<usize>) -> Result<EmbeddingMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut dim = dim;
    let mut data = Vec::new();
    let mut ids = Vec::new();
    let mut id_column = false;
    let mut values = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(i + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let lineno = record.position().map_or(i + 1, |p| p.line() as usize);
        if i == 0 && record.iter().any(|f| f.parse::<f64>().is_err()) {
            id_column = record.get(0).is_some_and(|f| f.eq_ignore_ascii_case("id"));
            continue;
        }
        let mut fields = record.iter();
        let id = if id_column {
            let raw = fields.next().unwrap_or("");
            Some(raw.parse::<u64>().map_err(|_| Error::Parse { line: lineno, message: format!("bad id `{raw}`") })?)
        } else {
            None
        };
        values.clear();
        for f in fields {
            let v: f64 = f.parse().map_err(|_| Error::Parse { line: lineno, message: format!("bad number `{f}`") })?;
            values.push(v);
        }
        push_row(lineno, &values, &mut dim, &mut data)?;
        ids.push(id);
    }
    finish(dim, data, ids)
}

/// Reproducibility record for an ingested matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub sources: Vec<String>,
    pub dim: usize,
    pub count: usize,
    pub encoding: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_sizes: Option<(usize, usize)>,
    /// FNV-1a 64 of the little-endian f32 data block, as 16 hex digits.
    pub checksum: String,
}

impl DatasetManifest {
    pub fn for_matrix(m: &EmbeddingMatrix, sources: Vec<String>, encoding: &str) -> Self {
        Self {
            sources,
            dim: m.dim(),
            count: m.len(),
            encoding: encoding.to_string(),
            split_seed: None,
            split_sizes: None,
            checksum: format!("{:016x}", checksum(&m.payload_bytes())),
        }
    }

    /// Recomputes the checksum and shape of `m` against this manifest.
    pub fn verify(&self, m: &EmbeddingMatrix) -> Result<()> {
        if m.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: m.dim() });
        }
        if m.len() != self.count {
            return Err(Error::LengthMismatch { left: self.count, right: m.len() });
        }
        let stored = u64::from_str_radix(&self.checksum, 16)
            .map_err(|_| Error::Corrupt(format!("bad manifest checksum `{}`", self.checksum)))?;
        let computed = checksum(&m.payload_bytes());
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(fs::File::open(path)?))?)
    }
}

/// Reads an embedding file and builds its manifest.
pub fn ingest(path: &Path, format: InputFormat, dim: Option<usize>) -> Result<(EmbeddingMatrix, DatasetManifest)> {
    let m = match format {
        InputFormat::RawF32Le => {
            let dim = dim.ok_or(Error::InvalidConfig("raw input needs an explicit dimension".into()))?;
            parse_raw_f32le(&fs::read(path)?, dim)?
        }
        InputFormat::Jsonl => parse_jsonl(BufReader::new(fs::File::open(path)?), dim)?,
        InputFormat::Csv => parse_csv(BufReader::new(fs::File::open(path)?), dim)?,
    };
    let manifest = DatasetManifest::for_matrix(&m, vec![path.display().to_string()], format.name());
    Ok((m, manifest))
}

/// Fisher–Yates permutation, then the first `sizes.0` rows and the next
/// `sizes.1` rows. Ids are preserved.
pub fn split(m: &EmbeddingMatrix, sizes: (usize, usize), rng: &mut Rng) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    let (a, b) = sizes;
    if a.checked_add(b).is_none_or(|t| t > m.len()) {
        return Err(Error::SizesExceedCount { first: a, second: b, count: m.len() });
    }
    let mut order: Vec<usize> = (0..m.len()).collect();
    order.shuffle(rng);
    Ok((m.select(&order[..a]), m.select(&order[a..a + b])))
}

fn kind_code(kind: Kind) -> u8 {
    match kind {
        Kind::Fp32 => 0,
        Kind::Bf16 => 1,
        Kind::Int8 => 2,
        Kind::Int4 => 3,
    }
}

fn kind_from_code(code: u8) -> Result<Kind> {
    Ok(match code {
        0 => Kind::Fp32,
        1 => Kind::Bf16,
        2 => Kind::Int8,
        3 => Kind::Int4,
        other => return Err(Error::Corrupt(format!("unknown dtype kind {other}"))),
    })
}

/// Serializes a store to the `QVST` layout.
pub fn store_to_bytes(store: &QuantizedStore) -> Vec<u8> {
    let dt = store.dtype();
    let n = store.len();
    let mut out = Vec::with_capacity(STORE_HEADER_BYTES + 8 * n + store.payload_bytes() + TRAILER_BYTES);
    out.extend_from_slice(STORE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(kind_code(dt.kind()));
    out.push(dt.bits() as u8);
    out.extend_from_slice(&(store.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    let group = match dt.group() {
        GroupSize::WholeVector => 0,
        GroupSize::Elements(g) => g,
    };
    out.extend_from_slice(&group.to_le_bytes());
    store.ids().iter().for_each(|id| out.extend_from_slice(&id.to_le_bytes()));
    store.scales().iter().for_each(|s| out.extend_from_slice(&s.to_le_bytes()));
    match store.codes() {
        Codes::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Codes::Bf16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_bits().to_le_bytes())),
        Codes::I8(v) => out.extend(v.iter().map(|&c| c as u8)),
        Codes::I4(v) => out.extend_from_slice(v),
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

/// Bounds-checked little-endian reader over a byte slice.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::TruncatedFile {
            expected: self.pos as u64 + n as u64,
            found: self.bytes.len() as u64,
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
}

fn check_magic(bytes: &[u8], magic: &[u8; 4]) -> Result<()> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedFile { expected: 4, found: bytes.len() as u64 });
    }
    if &bytes[..4] != magic {
        return Err(Error::BadMagic);
    }
    Ok(())
}

/// Checks total length against the header-derived size, then the trailer.
fn check_body(bytes: &[u8], expected: Option<u64>) -> Result<()> {
    let expected = expected.ok_or_else(|| Error::Corrupt("header sizes overflow".into()))?;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::TruncatedFile { expected, found });
    }
    if found > expected {
        return Err(Error::Corrupt(format!("{} trailing bytes", found - expected)));
    }
    let body = &bytes[..bytes.len() - TRAILER_BYTES];
    let stored = u64::from_le_bytes(bytes[body.len()..].try_into().expect("8 bytes"));
    let computed = checksum(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    Ok(())
}

fn sized(parts: &[(u64, u64)]) -> Option<u64> {
    parts.iter().try_fold(0u64, |acc, &(count, width)| acc.checked_add(count.checked_mul(width)?))
}

/// Parses a `QVST` image. Never returns a partially decoded store.
pub fn store_from_bytes(bytes: &[u8]) -> Result<QuantizedStore> {
    check_magic(bytes, STORE_MAGIC)?;
    let mut cur = Cursor::new(bytes);
    cur.take(4)?;
    let version = cur.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let kind = kind_from_code(cur.u8()?)?;
    let bits = cur.u8()?;
    if u32::from(bits) != kind.bits() {
        return Err(Error::Corrupt(format!("{kind:?} cannot have {bits} bits")));
    }
    let dim = cur.u32()? as usize;
    let count = cur.u64()?;
    let group = cur.u32()?;
    let group = if group == 0 { GroupSize::WholeVector } else { GroupSize::Elements(group) };
    let dt = DType::new(kind, group).map_err(|e| Error::Corrupt(e.to_string()))?;
    if dim == 0 {
        return Err(Error::Corrupt("zero dimension".into()));
    }
    dt.check_dim(dim).map_err(|e| Error::Corrupt(e.to_string()))?;
    let expected = sized(&[
        (1, (STORE_HEADER_BYTES + TRAILER_BYTES) as u64),
        (count, 8),
        (count, dt.bytes_per_vector(dim) as u64),
    ]);
    check_body(bytes, expected)?;
    let n = count as usize;
    let ids: Vec<u64> = cur.take(8 * n)?.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
    let scales: Vec<f32> = cur
        .take(n * dt.scale_bytes_per_vector(dim))?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let raw = cur.take(n * dt.code_bytes_per_vector(dim))?;
    let codes = match kind {
        Kind::Fp32 => Codes::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
        Kind::Bf16 => Codes::Bf16(raw.chunks_exact(2).map(|c| Bf16(u16::from_le_bytes([c[0], c[1]]))).collect()),
        Kind::Int8 => Codes::I8(raw.iter().map(|&b| b as i8).collect()),
        Kind::Int4 => Codes::I4(raw.to_vec()),
    };
    QuantizedStore::from_parts(dt, dim, ids, codes, scales)
}

pub fn save_store(store: &QuantizedStore, path: &Path) -> Result<()> {
    fs::write(path, store_to_bytes(store))?;
    Ok(())
}

pub fn load_store(path: &Path) -> Result<QuantizedStore> {
    store_from_bytes(&fs::read(path)?)
}

pub fn codebook_to_bytes(cb: &PQCodebook) -> Vec<u8> {
    let cfg = cb.config();
    let mut out = Vec::with_capacity(40 + 4 * cb.centroids().len() + TRAILER_BYTES);
    out.extend_from_slice(PQ_CODEBOOK_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    for v in [cfg.subspaces, cfg.centroids, cb.dim(), cfg.iters] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&cfg.tol.to_le_bytes());
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    cb.centroids().iter().for_each(|c| out.extend_from_slice(&c.to_le_bytes()));
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

pub fn codebook_from_bytes(bytes: &[u8]) -> Result<PQCodebook> {
    check_magic(bytes, PQ_CODEBOOK_MAGIC)?;
    let mut cur = Cursor::new(bytes);
    cur.take(4)?;
    let version = cur.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    if cur.u16()? != 0 {
        return Err(Error::Corrupt("reserved field set".into()));
    }
    let m = cur.u32()? as usize;
    let k = cur.u32()? as usize;
    let dim = cur.u32()? as usize;
    let iters = cur.u32()? as usize;
    let tol = cur.f64()?;
    let seed = cur.u64()?;
    let cfg = PQConfig { subspaces: m, centroids: k, iters, tol, seed };
    if dim == 0 {
        return Err(Error::Corrupt("zero dimension".into()));
    }
    cfg.validate(dim).map_err(|e| Error::Corrupt(e.to_string()))?;
    check_body(bytes, sized(&[(1, 40 + TRAILER_BYTES as u64), (k as u64, 4 * dim as u64)]))?;
    let centroids = cur
        .take(4 * k * dim)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    PQCodebook::from_parts(cfg, dim, centroids)
}

pub fn codes_to_bytes(codes: &PQCodes) -> Vec<u8> {
    let wide = codes.centroids() > 256;
    let mut out = Vec::with_capacity(24 + codes.len() * (8 + codes.subspaces() * 2) + TRAILER_BYTES);
    out.extend_from_slice(PQ_CODES_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(if wide { 2 } else { 1 });
    out.push(0);
    out.extend_from_slice(&(codes.subspaces() as u32).to_le_bytes());
    out.extend_from_slice(&(codes.centroids() as u32).to_le_bytes());
    out.extend_from_slice(&(codes.len() as u64).to_le_bytes());
    codes.ids().iter().for_each(|id| out.extend_from_slice(&id.to_le_bytes()));
    if wide {
        codes.codes().iter().for_each(|c| out.extend_from_slice(&c.to_le_bytes()));
    } else {
        out.extend(codes.codes().iter().map(|&c| c as u8));
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

pub fn codes_from_bytes(bytes: &[u8]) -> Result<PQCodes> {
    check_magic(bytes, PQ_CODES_MAGIC)?;
    let mut cur = Cursor::new(bytes);
    cur.take(4)?;
    let version = cur.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let width = cur.u8()?;
    if cur.u8()? != 0 {
        return Err(Error::Corrupt("reserved field set".into()));
    }
    let m = cur.u32()? as usize;
    let k = cur.u32()? as usize;
    let count = cur.u64()?;
    if m == 0 || k == 0 || k > crate::pq::MAX_CENTROIDS {
        return Err(Error::Corrupt("invalid M or K".into()));
    }
    let expect_width = if k > 256 { 2 } else { 1 };
    if width != expect_width {
        return Err(Error::Corrupt(format!("code width {width} does not fit K={k}")));
    }
    check_body(bytes, sized(&[(1, 24 + TRAILER_BYTES as u64), (count, 8), (count, m as u64 * u64::from(width))]))?;
    let n = count as usize;
    let ids = cur.take(8 * n)?.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
    let raw = cur.take(n * m * usize::from(width))?;
    let codes = if width == 2 {
        raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()
    } else {
        raw.iter().map(|&b| u16::from(b)).collect()
    };
    PQCodes::from_parts(m, k, ids, codes)
}
