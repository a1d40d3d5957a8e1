//! Dataset representation, preprocessing and vector-file ingestion.
//!
//! Every raw point `p` in `R^(d-1)` is stored as `x = (p; 1)` so that the
//! point-to-hyperplane distance folds into a single absolute inner product.
//! Hyperplane queries are rescaled so their normal vector (the first `d - 1`
//! coefficients) has unit length.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// On-disk vector formats understood by [`load_vectors`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VectorFormat {
    /// `[i32 dim][dim x f32]` records, little-endian.
    Fvecs,
    /// `[i32 dim][dim x u8]` records, little-endian.
    Bvecs,
    /// Comma-separated decimal floats, one point per line, no header.
    Csv,
    /// `[u32 n][u32 d_raw][n * d_raw x f32]`, little-endian.
    RawF32,
}

impl VectorFormat {
    pub fn name(self) -> &'static str {
        match self {
            VectorFormat::Fvecs => "fvecs",
            VectorFormat::Bvecs => "bvecs",
            VectorFormat::Csv => "csv",
            VectorFormat::RawF32 => "raw_f32",
        }
    }

    /// Guess the format from a file extension.
    pub fn from_extension(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "fvecs" => Some(VectorFormat::Fvecs),
            "bvecs" => Some(VectorFormat::Bvecs),
            "csv" => Some(VectorFormat::Csv),
            "f32" | "raw" | "bin" => Some(VectorFormat::RawF32),
            _ => None,
        }
    }
}

impl fmt::Display for VectorFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VectorFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fvecs" => Ok(VectorFormat::Fvecs),
            "bvecs" => Ok(VectorFormat::Bvecs),
            "csv" => Ok(VectorFormat::Csv),
            "raw_f32" | "raw" | "f32" => Ok(VectorFormat::RawF32),
            other => Err(format!(
                "unknown vector format '{other}' (expected fvecs, bvecs, csv or raw_f32)"
            )),
        }
    }
}

/// A deduplicated set of dimension-appended points stored row-major as `f32`.
///
/// Point ids are the row indices `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    n: usize,
    dim: usize,
    values: Vec<f32>,
}

impl PointSet {
    /// Builds a point set from raw `(d-1)`-dimensional rows laid out
    /// contiguously. Each row is dimension-appended, and exact duplicate rows
    /// are dropped keeping the first occurrence.
    pub fn from_raw(raw: &[f32], raw_dim: usize) -> Result<Self> {
        if raw_dim == 0 {
            return Err(Error::InvalidInput(
                "raw dimension must be at least 1".into(),
            ));
        }
        if !raw.len().is_multiple_of(raw_dim) {
            return Err(Error::InvalidInput(format!(
                "{} values do not divide into rows of {raw_dim}",
                raw.len()
            )));
        }
        if raw.is_empty() {
            return Err(Error::Empty);
        }
        let dim = raw_dim + 1;
        let rows = raw.len() / raw_dim;
        let mut values = Vec::with_capacity(rows * dim);
        let mut seen: HashMap<u64, Vec<usize>> = HashMap::with_capacity(rows);
        let mut n = 0;
        for chunk in raw.chunks_exact(raw_dim) {
            let row = append_dimension(chunk)?;
            let key = row_hash(&row);
            let bucket = seen.entry(key).or_default();
            let duplicate = bucket
                .iter()
                .any(|&i| bitwise_eq(&values[i * dim..(i + 1) * dim], &row));
            if duplicate {
                continue;
            }
            bucket.push(n);
            values.extend_from_slice(&row);
            n += 1;
        }
        Ok(PointSet { n, dim, values })
    }

    /// Like [`PointSet::from_raw`] but from a list of rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty)?;
        let raw_dim = first.as_ref().len();
        let mut flat = Vec::with_capacity(rows.len() * raw_dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != raw_dim {
                return Err(Error::DimensionMismatch {
                    expected: raw_dim,
                    actual: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        Self::from_raw(&flat, raw_dim)
    }

    /// Appends without deduplication; only for exercising degenerate inputs.
    #[cfg(test)]
    pub(crate) fn with_duplicates(raw: &[f32], raw_dim: usize) -> Self {
        let values: Vec<f32> = raw
            .chunks_exact(raw_dim)
            .flat_map(|c| append_dimension(c).unwrap())
            .collect();
        PointSet {
            n: raw.len() / raw_dim,
            dim: raw_dim + 1,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Dimensionality after appending, `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Dimensionality of the raw points, `d - 1`.
    pub fn raw_dim(&self) -> usize {
        self.dim - 1
    }

    /// The appended point `x = (p; 1)` with id `i`.
    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// The raw point `p` with id `i`.
    pub fn raw_row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim - 1]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.dim)
    }

    /// 64-bit fingerprint of the stored values.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write(&(self.n as u64).to_le_bytes());
        h.write(&(self.dim as u64).to_le_bytes());
        for v in &self.values {
            h.write(&v.to_le_bytes());
        }
        h.finish()
    }

    /// Mean Euclidean norm of the raw points.
    pub fn mean_raw_norm(&self) -> f64 {
        let total: f64 = (0..self.n)
            .map(|i| {
                self.raw_row(i)
                    .iter()
                    .map(|&v| f64::from(v) * f64::from(v))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum();
        total / self.n as f64
    }

    /// Writes the raw `(d-1)`-dimensional points in `format`.
    pub fn write_to(&self, path: impl AsRef<Path>, format: VectorFormat) -> Result<()> {
        let bytes = self.encode(format)?;
        let mut file = fs::File::create(path)?;
        file.write_all(&bytes)?;
        Ok(())
    }

    pub fn encode(&self, format: VectorFormat) -> Result<Vec<u8>> {
        let raw_dim = self.raw_dim();
        let mut out = Vec::new();
        match format {
            VectorFormat::RawF32 => {
                out.reserve(8 + self.n * raw_dim * 4);
                out.extend_from_slice(&(self.n as u32).to_le_bytes());
                out.extend_from_slice(&(raw_dim as u32).to_le_bytes());
                for i in 0..self.n {
                    for v in self.raw_row(i) {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
            VectorFormat::Fvecs => {
                for i in 0..self.n {
                    out.extend_from_slice(&(raw_dim as i32).to_le_bytes());
                    for v in self.raw_row(i) {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
            VectorFormat::Bvecs => {
                for i in 0..self.n {
                    out.extend_from_slice(&(raw_dim as i32).to_le_bytes());
                    for &v in self.raw_row(i) {
                        if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                            return Err(Error::InvalidInput(format!(
                                "value {v} is not representable as u8"
                            )));
                        }
                        out.push(v as u8);
                    }
                }
            }
            VectorFormat::Csv => {
                for i in 0..self.n {
                    let line = self
                        .raw_row(i)
                        .iter()
                        .map(|v| format!("{v:?}"))
                        .collect::<Vec<_>>()
                        .join(",");
                    out.extend_from_slice(line.as_bytes());
                    out.push(b'\n');
                }
            }
        }
        Ok(out)
    }
}

/// Appends the constant coordinate 1 to a raw point.
pub fn append_dimension(raw: &[f32]) -> Result<Vec<f32>> {
    if raw.is_empty() {
        return Err(Error::InvalidInput("point has no coordinates".into()));
    }
    if let Some(bad) = raw.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite coordinate {bad}")));
    }
    let mut out = Vec::with_capacity(raw.len() + 1);
    out.extend_from_slice(raw);
    out.push(1.0);
    Ok(out)
}

/// A hyperplane `{p : <q[..d-1], p> + q[d-1] = 0}` whose normal vector has
/// unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperplaneQuery {
    coeffs: Vec<f64>,
    norm: f64,
}

impl HyperplaneQuery {
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `||q||`, equal to `sqrt(1 + q_d^2)` after normalization.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    /// The constant term `q_d`.
    pub fn offset(&self) -> f64 {
        self.coeffs[self.coeffs.len() - 1]
    }

    /// 64-bit fingerprint of the coefficients.
    pub fn fingerprint(&self) -> u64 {
        fingerprint_queries(std::slice::from_ref(self))
    }
}

/// Normalization is skipped when the normal vector is already this close to
/// unit length, which makes [`normalize_query`] exactly idempotent.
const UNIT_NORM_SLACK: f64 = 1e-12;

/// Rescales `raw` so that its first `d - 1` coefficients have unit norm.
pub fn normalize_query(raw: &[f64]) -> Result<HyperplaneQuery> {
    if raw.len() < 2 {
        return Err(Error::InvalidInput(
            "a hyperplane query needs at least 2 coefficients".into(),
        ));
    }
    if let Some(bad) = raw.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite coefficient {bad}")));
    }
    let (normal, _) = raw.split_at(raw.len() - 1);
    let scale = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
    if scale == 0.0 {
        return Err(Error::DegenerateQuery);
    }
    let coeffs: Vec<f64> = if (scale - 1.0).abs() <= UNIT_NORM_SLACK {
        raw.to_vec()
    } else {
        raw.iter().map(|v| v / scale).collect()
    };
    let norm = coeffs.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(HyperplaneQuery { coeffs, norm })
}

/// Generates `count` hyperplanes that cut through the data cloud.
///
/// The normal is an isotropic Gaussian direction. The offset places the
/// hyperplane through a uniformly chosen data point, jittered by Gaussian
/// noise with standard deviation `0.05 * mean ||p||`.
pub fn generate_queries(data: &PointSet, count: usize, seed: u64) -> Result<Vec<HyperplaneQuery>> {
    if count == 0 {
        return Err(Error::InvalidInput("query count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw_dim = data.raw_dim();
    let noise_sd = 0.05 * data.mean_raw_norm();
    let mut queries = Vec::with_capacity(count);
    while queries.len() < count {
        let mut coeffs: Vec<f64> = (0..raw_dim).map(|_| rng.sample(StandardNormal)).collect();
        let len = coeffs.iter().map(|v| v * v).sum::<f64>().sqrt();
        if len == 0.0 {
            continue;
        }
        coeffs.iter_mut().for_each(|v| *v /= len);
        let anchor = data.raw_row(rng.random_range(0..data.len()));
        let through: f64 = coeffs
            .iter()
            .zip(anchor)
            .map(|(a, &b)| a * f64::from(b))
            .sum();
        let jitter: f64 = rng.sample::<f64, _>(StandardNormal) * noise_sd;
        coeffs.push(-through + jitter);
        queries.push(normalize_query(&coeffs)?);
    }
    Ok(queries)
}

/// `n` points with i.i.d. standard Gaussian coordinates in `raw_dim` dimensions.
pub fn gaussian_points(n: usize, raw_dim: usize, seed: u64) -> Result<PointSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f32> = (0..n * raw_dim)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect();
    PointSet::from_raw(&raw, raw_dim)
}

/// Reads a vector file and returns the dimension-appended, deduplicated set.
pub fn load_vectors(path: impl AsRef<Path>, format: VectorFormat) -> Result<PointSet> {
    let bytes = fs::read(path)?;
    parse_vectors(&bytes, format)
}

/// Parses an in-memory vector file.
pub fn parse_vectors(bytes: &[u8], format: VectorFormat) -> Result<PointSet> {
    let (raw, raw_dim) = match format {
        VectorFormat::Fvecs => parse_xvecs(bytes, "fvecs", 4, |b| {
            f32::from_le_bytes([b[0], b[1], b[2], b[3]])
        })?,
        VectorFormat::Bvecs => parse_xvecs(bytes, "bvecs", 1, |b| f32::from(b[0]))?,
        VectorFormat::RawF32 => parse_raw_f32(bytes)?,
        VectorFormat::Csv => parse_csv(bytes)?,
    };
    PointSet::from_raw(&raw, raw_dim)
}

fn parse_xvecs(
    bytes: &[u8],
    format: &'static str,
    width: usize,
    decode: impl Fn(&[u8]) -> f32,
) -> Result<(Vec<f32>, usize)> {
    if bytes.is_empty() {
        return Err(Error::Empty);
    }
    let mut out = Vec::new();
    let mut dim = None;
    let mut pos = 0;
    let mut record = 0usize;
    while pos < bytes.len() {
        let header = bytes.get(pos..pos + 4).ok_or_else(|| {
            Error::malformed(format, format!("truncated header in record {record}"))
        })?;
        let d = i32::from_le_bytes([header[0], header[1], header[2], header[3]]);
        if d <= 0 {
            return Err(Error::malformed(
                format,
                format!("record {record} has dimension {d}"),
            ));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::malformed(
                    format,
                    format!("record {record} has dimension {d}, expected {expected}"),
                ))
            }
            Some(_) => {}
        }
        pos += 4;
        let payload = bytes.get(pos..pos + d * width).ok_or_else(|| {
            Error::malformed(
                format,
                format!(
                    "record {record} declares {d} values but only {} bytes remain",
                    bytes.len() - pos
                ),
            )
        })?;
        out.extend(payload.chunks_exact(width).map(&decode));
        pos += d * width;
        record += 1;
    }
    Ok((out, dim.unwrap_or(0)))
}

fn parse_raw_f32(bytes: &[u8]) -> Result<(Vec<f32>, usize)> {
    if bytes.is_empty() {
        return Err(Error::Empty);
    }
    if bytes.len() < 8 {
        return Err(Error::malformed(
            "raw_f32",
            "file shorter than its 8-byte header",
        ));
    }
    let n = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    let d = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    if n == 0 {
        return Err(Error::Empty);
    }
    if d == 0 {
        return Err(Error::malformed("raw_f32", "raw dimension is zero"));
    }
    let expected = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(8))
        .ok_or_else(|| Error::malformed("raw_f32", "header size overflows"))?;
    if bytes.len() != expected {
        return Err(Error::malformed(
            "raw_f32",
            format!(
                "header declares {n}x{d} but payload is {} bytes",
                bytes.len() - 8
            ),
        ));
    }
    let values = bytes[8..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((values, d))
}

fn parse_csv(bytes: &[u8]) -> Result<(Vec<f32>, usize)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut out = Vec::new();
    let mut dim = None;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::malformed("csv", e.to_string()))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match dim {
            None => dim = Some(record.len()),
            Some(d) if d != record.len() => {
                return Err(Error::malformed(
                    "csv",
                    format!(
                        "line {} has {} fields, expected {d}",
                        line + 1,
                        record.len()
                    ),
                ))
            }
            Some(_) => {}
        }
        for field in record.iter() {
            let v: f32 = field.parse().map_err(|_| {
                Error::malformed("csv", format!("line {}: cannot parse '{field}'", line + 1))
            })?;
            out.push(v);
        }
    }
    match dim {
        Some(d) => Ok((out, d)),
        None => Err(Error::Empty),
    }
}

/// 64-bit FNV-1a hash of a byte string.
pub fn fingerprint(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a::new();
    h.write(bytes);
    h.finish()
}

/// Fingerprint over the coefficient bits of a query list.
pub fn fingerprint_queries(queries: &[HyperplaneQuery]) -> u64 {
    let mut h = Fnv1a::new();
    for q in queries {
        for c in q.coeffs() {
            h.write(&c.to_le_bytes());
        }
    }
    h.finish()
}

struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

fn row_hash(row: &[f32]) -> u64 {
    let mut h = Fnv1a::new();
    for v in row {
        h.write(&v.to_bits().to_le_bytes());
    }
    h.finish()
}

fn bitwise_eq(a: &[f32], b: &[f32]) -> bool {
    a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}
