//! Embedding access traces: synthetic generation across the hotness spectrum,
//! ingestion of external traces, and reuse characterization.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};

/// Bytes of one entry of the index array read by the kernel.
pub const INDEX_BYTES: u64 = 8;

// Independent RNG streams derived from one dataset seed.
const STREAM_PERMUTATION: u64 = 1;
const STREAM_TRACE: u64 = 2;
const STREAM_POOL: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingModelConfig {
    pub num_tables: u32,
    pub rows_per_table: u64,
    pub embedding_dim: u32,
    pub precision_bytes: u32,
    pub batch_size: u32,
    pub pooling_factor: u32,
}

impl Default for EmbeddingModelConfig {
    fn default() -> Self {
        EmbeddingModelConfig {
            num_tables: 250,
            rows_per_table: 500_000,
            embedding_dim: 128,
            precision_bytes: 4,
            batch_size: 2048,
            pooling_factor: 150,
        }
    }
}

impl EmbeddingModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_tables == 0
            || self.rows_per_table == 0
            || self.embedding_dim == 0
            || self.precision_bytes == 0
            || self.batch_size == 0
            || self.pooling_factor == 0
        {
            return Err(Error::Config(format!(
                "model fields must be strictly positive: {self:?}"
            )));
        }
        if self.rows_per_table > u32::MAX as u64 {
            return Err(Error::Config(format!(
                "rows_per_table {} exceeds the supported maximum {}",
                self.rows_per_table,
                u32::MAX
            )));
        }
        Ok(())
    }

    pub fn row_bytes(&self) -> u64 {
        self.embedding_dim as u64 * self.precision_bytes as u64
    }

    pub fn lookups_per_table(&self) -> u64 {
        self.batch_size as u64 * self.pooling_factor as u64
    }

    /// Bytes gathered from one table by one batch.
    pub fn bytes_per_table_pass(&self) -> u64 {
        self.lookups_per_table() * self.row_bytes()
    }

    /// Bytes gathered by the whole embedding stage.
    pub fn stage_bytes(&self) -> u64 {
        self.bytes_per_table_pass() * self.num_tables as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetKind {
    OneItem,
    /// Rank-frequency `rank^-exponent` over the hottest `support` rows
    /// (all rows when `support` is absent).
    Zipf {
        exponent: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        support: Option<u64>,
    },
    UniformRandom,
    ExternalTrace {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub kind: DatasetKind,
    pub access_pool_size: u64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, access_pool_size: u64, seed: u64) -> Self {
        DatasetSpec {
            kind,
            access_pool_size,
            seed,
        }
    }

    pub fn validate(&self, model: &EmbeddingModelConfig) -> Result<()> {
        if self.access_pool_size == 0 {
            return Err(invalid("access_pool_size must be positive"));
        }
        if let DatasetKind::Zipf { exponent, support } = &self.kind {
            if !exponent.is_finite() || *exponent < 0.0 {
                return Err(invalid(format!(
                    "zipf exponent must be >= 0, got {exponent}"
                )));
            }
            if let Some(k) = support {
                if *k == 0 || *k > model.rows_per_table {
                    return Err(invalid(format!(
                        "zipf support {k} outside [1, {}]",
                        model.rows_per_table
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Row indices of one table for one batch, `samples × pooling` long and
/// grouped by sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessTrace {
    pub table_id: u32,
    pub rows: u64,
    pub samples: u32,
    pub pooling: u32,
    pub indices: Vec<u32>,
}

impl AccessTrace {
    pub fn new(
        table_id: u32,
        rows: u64,
        samples: u32,
        pooling: u32,
        indices: Vec<u32>,
    ) -> Result<Self> {
        if indices.len() as u64 != samples as u64 * pooling as u64 {
            return Err(invalid(format!(
                "trace length {} != samples {samples} x pooling {pooling}",
                indices.len()
            )));
        }
        if let Some(pos) = indices.iter().position(|&i| i as u64 >= rows) {
            return Err(invalid(format!(
                "index {} at position {pos} out of range [0, {rows})",
                indices[pos]
            )));
        }
        Ok(AccessTrace {
            table_id,
            rows,
            samples,
            pooling,
            indices,
        })
    }

    pub fn sample(&self, s: u32) -> &[u32] {
        let p = self.pooling as usize;
        &self.indices[s as usize * p..(s as usize + 1) * p]
    }

    /// Stable content digest used to guard comparisons between reports.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.rows.to_le_bytes());
        h.update(self.samples.to_le_bytes());
        h.update(self.pooling.to_le_bytes());
        for &i in &self.indices {
            h.update(i.to_le_bytes());
        }
        h.finalize()[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(
            w,
            "rows={} samples={} pooling={}",
            self.rows, self.samples, self.pooling
        )?;
        for &i in &self.indices {
            writeln!(w, "{i}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ingest = |line: usize, msg: String| Error::Ingestion {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let file = File::open(path).map_err(|e| ingest(0, e.to_string()))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| ingest(1, "missing header".into()))?
            .map_err(|e| ingest(1, e.to_string()))?;
        let (mut rows, mut samples, mut pooling) = (None, None, None);
        for field in header.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| ingest(1, format!("malformed header field '{field}'")))?;
            let v: u64 = v
                .parse()
                .map_err(|_| ingest(1, format!("non-numeric header value '{field}'")))?;
            match k {
                "rows" => rows = Some(v),
                "samples" => samples = Some(v),
                "pooling" => pooling = Some(v),
                _ => return Err(ingest(1, format!("unknown header key '{k}'"))),
            }
        }
        let (rows, samples, pooling) = match (rows, samples, pooling) {
            (Some(r), Some(s), Some(p)) if r > 0 && s > 0 && p > 0 && r <= u32::MAX as u64 => {
                (r, s as u32, p as u32)
            }
            _ => {
                return Err(ingest(
                    1,
                    "header needs positive rows, samples, pooling".into(),
                ))
            }
        };
        let expected = samples as usize * pooling as usize;
        let mut indices = Vec::with_capacity(expected);
        for (n, line) in lines.enumerate() {
            let lineno = n + 2;
            let line = line.map_err(|e| ingest(lineno, e.to_string()))?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let v: u64 = t
                .parse()
                .map_err(|_| ingest(lineno, format!("not an index: '{t}'")))?;
            if v >= rows {
                return Err(ingest(
                    lineno,
                    format!("index {v} out of range [0, {rows})"),
                ));
            }
            indices.push(v as u32);
        }
        if indices.len() != expected {
            return Err(ingest(
                indices.len() + 1,
                format!("expected {expected} indices, found {}", indices.len()),
            ));
        }
        AccessTrace::new(0, rows, samples, pooling, indices)
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Inverse-CDF sampler over the configured distribution.
enum Sampler {
    Single(u32),
    Uniform(u32),
    Table { cdf: Vec<f64>, rows: Vec<u32> },
}

impl Sampler {
    fn new(kind: &DatasetKind, rows: u64, seed: u64) -> Self {
        let mut rng = rng_for(seed, STREAM_PERMUTATION);
        match kind {
            DatasetKind::OneItem => Sampler::Single(rng.gen_range(0..rows as u32)),
            DatasetKind::UniformRandom => Sampler::Uniform(rows as u32),
            DatasetKind::Zipf { exponent, support } => {
                let k = support.unwrap_or(rows).min(rows) as usize;
                // Partial Fisher-Yates: the first k slots become the rank -> row map.
                let mut perm: Vec<u32> = (0..rows as u32).collect();
                for i in 0..k {
                    let j = rng.gen_range(i..rows as usize);
                    perm.swap(i, j);
                }
                perm.truncate(k);
                let weights = zipf_weights(*exponent, k);
                let mut cdf = Vec::with_capacity(k);
                let mut acc = 0.0;
                for w in weights {
                    acc += w;
                    cdf.push(acc);
                }
                cdf[k - 1] = 1.0;
                Sampler::Table { cdf, rows: perm }
            }
            DatasetKind::ExternalTrace { .. } => {
                unreachable!("external traces are loaded, not sampled")
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> u32 {
        match self {
            Sampler::Single(r) => *r,
            Sampler::Uniform(n) => rng.gen_range(0..*n),
            Sampler::Table { cdf, rows } => {
                let u: f64 = rng.gen();
                let i = cdf.partition_point(|&c| c <= u).min(rows.len() - 1);
                rows[i]
            }
        }
    }
}

/// Normalized `rank^-s` probabilities for ranks `1..=k`.
fn zipf_weights(s: f64, k: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (1..=k).map(|r| (r as f64).powf(-s)).collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    w
}

fn sampled_trace(
    spec: &DatasetSpec,
    rows: u64,
    samples: u32,
    pooling: u32,
    stream: u64,
) -> Result<AccessTrace> {
    if let DatasetKind::ExternalTrace { path } = &spec.kind {
        let t = AccessTrace::load(path)?;
        if t.rows != rows {
            return Err(Error::Ingestion {
                path: path.clone(),
                line: 1,
                msg: format!("trace has {} rows, model expects {rows}", t.rows),
            });
        }
        return Ok(t);
    }
    let sampler = Sampler::new(&spec.kind, rows, spec.seed);
    let mut rng = rng_for(spec.seed, stream);
    let n = samples as usize * pooling as usize;
    let indices = (0..n).map(|_| sampler.draw(&mut rng)).collect();
    AccessTrace::new(0, rows, samples, pooling, indices)
}

/// Kernel input for one table: `batch_size × pooling_factor` indices.
pub fn gen_trace(spec: &DatasetSpec, model: &EmbeddingModelConfig) -> Result<AccessTrace> {
    model.validate()?;
    spec.validate(model)?;
    let t = sampled_trace(
        spec,
        model.rows_per_table,
        model.batch_size,
        model.pooling_factor,
        STREAM_TRACE,
    )?;
    if t.samples != model.batch_size || t.pooling != model.pooling_factor {
        return Err(Error::WorkloadMismatch(format!(
            "trace shape {}x{} does not match model {}x{}",
            t.samples, t.pooling, model.batch_size, model.pooling_factor
        )));
    }
    Ok(t)
}

/// Characterization pool of `access_pool_size` accesses drawn from the same
/// distribution as the kernel trace, shaped as `N × 1`.
pub fn gen_pool(spec: &DatasetSpec, model: &EmbeddingModelConfig) -> Result<AccessTrace> {
    model.validate()?;
    spec.validate(model)?;
    if let DatasetKind::ExternalTrace { .. } = spec.kind {
        return sampled_trace(spec, model.rows_per_table, 0, 0, 0);
    }
    let n = u32::try_from(spec.access_pool_size)
        .map_err(|_| invalid("access_pool_size exceeds u32 range"))?;
    sampled_trace(spec, model.rows_per_table, n, 1, STREAM_POOL)
}

fn distinct_rows(trace: &AccessTrace) -> u64 {
    let mut seen = vec![false; trace.rows as usize];
    let mut n = 0;
    for &i in &trace.indices {
        if !seen[i as usize] {
            seen[i as usize] = true;
            n += 1;
        }
    }
    n
}

pub fn unique_access_pct(trace: &AccessTrace) -> f64 {
    distinct_rows(trace) as f64 * 100.0 / trace.rows as f64
}

/// Per-table unique access %, averaged over tables.
pub fn mean_unique_access_pct(traces: &[AccessTrace]) -> f64 {
    if traces.is_empty() {
        return 0.0;
    }
    traces.iter().map(unique_access_pct).sum::<f64>() / traces.len() as f64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HotnessHistogram {
    pub counts: Vec<u32>,
    pub total_accesses: u64,
}

impl HotnessHistogram {
    pub fn from_trace(trace: &AccessTrace) -> Self {
        let mut counts = vec![0u32; trace.rows as usize];
        for &i in &trace.indices {
            counts[i as usize] += 1;
        }
        HotnessHistogram {
            counts,
            total_accesses: trace.indices.len() as u64,
        }
    }

    pub fn from_counts(counts: Vec<u32>) -> Self {
        let total_accesses = counts.iter().map(|&c| c as u64).sum();
        HotnessHistogram {
            counts,
            total_accesses,
        }
    }

    pub fn distinct(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Nonzero rows as `(row, count)`, most frequent first, ties by row id.
    pub fn ranked(&self) -> Vec<(u32, u32)> {
        let mut v: Vec<(u32, u32)> = self
            .counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(r, &c)| (r as u32, c))
            .collect();
        v.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["row_id", "count"])?;
        for (r, &c) in self.counts.iter().enumerate() {
            if c > 0 {
                out.write_record([r.to_string(), c.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

pub fn hot_indices(hist: &HotnessHistogram, k: usize) -> Vec<u32> {
    let mut ranked = hist.ranked();
    ranked.truncate(k);
    ranked.into_iter().map(|(r, _)| r).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub unique_fraction: f64,
    pub covered_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    pub points: Vec<CoveragePoint>,
}

impl CoverageCurve {
    /// Access share (percent) held by the top `unique_pct` percent of unique rows.
    pub fn covered_at(&self, unique_pct: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.unique_fraction >= unique_pct - 1e-9)
            .map(|p| p.covered_fraction)
    }
}

pub fn coverage_curve(trace: &AccessTrace, bucket_count: u32) -> Result<CoverageCurve> {
    if bucket_count == 0 {
        return Err(invalid("bucket_count must be positive"));
    }
    if trace.indices.is_empty() {
        return Err(invalid("coverage of an empty trace"));
    }
    Ok(coverage_from_histogram(
        &HotnessHistogram::from_trace(trace),
        bucket_count,
    ))
}

pub fn coverage_from_histogram(hist: &HotnessHistogram, bucket_count: u32) -> CoverageCurve {
    let ranked = hist.ranked();
    let u = ranked.len() as u64;
    let mut prefix = Vec::with_capacity(ranked.len() + 1);
    prefix.push(0u64);
    for (_, c) in &ranked {
        prefix.push(prefix.last().unwrap() + *c as u64);
    }
    let total = hist.total_accesses.max(1) as f64;
    let points = (1..=bucket_count as u64)
        .map(|k| {
            let take = (k * u).div_ceil(bucket_count as u64) as usize;
            CoveragePoint {
                unique_fraction: k as f64 * 100.0 / bucket_count as f64,
                covered_fraction: prefix[take] as f64 * 100.0 / total,
            }
        })
        .collect();
    CoverageCurve { points }
}

/// Expected unique access % for `n` draws from Zipf(`s`) over the top `k` of
/// `rows` rows: `sum_r 1 - (1 - p_r)^n`.
pub fn expected_unique_pct(s: f64, k: u64, rows: u64, n: u64) -> f64 {
    let w = zipf_weights(s, k as usize);
    let nf = n as f64;
    let eu: f64 = w.iter().map(|&p| -((nf * (-p).ln_1p()).exp_m1())).sum();
    eu * 100.0 / rows as f64
}

/// Expected access share (percent) of the top `frac` of expected unique rows.
pub fn expected_coverage_pct(s: f64, k: u64, rows: u64, n: u64, frac: f64) -> f64 {
    let eu = expected_unique_pct(s, k, rows, n) * rows as f64 / 100.0;
    let top = ((frac * eu).ceil() as usize).clamp(1, k as usize);
    zipf_weights(s, k as usize)[..top].iter().sum::<f64>() * 100.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZipfCalibration {
    Exponent(f64),
    /// Target equals a single row; use the one_item kind.
    SingleRow,
}

const MAX_EXPONENT: f64 = 8.0;

/// Exponent whose expected unique % over `n` draws from `rows` rows matches
/// the target.
pub fn calibrate_zipf(target_unique_pct: f64, rows: u64, n: u64) -> Result<ZipfCalibration> {
    if rows == 0 || n == 0 {
        return Err(invalid("rows and pool size must be positive"));
    }
    let single = 100.0 / rows as f64;
    let ceiling = 100.0 * rows.min(n) as f64 / rows as f64;
    if !(target_unique_pct > 0.0 && target_unique_pct <= ceiling) {
        return Err(Error::Calibration(format!(
            "target {target_unique_pct}% outside (0, {ceiling}]"
        )));
    }
    if (target_unique_pct - single).abs() <= single * 1e-6 {
        return Ok(ZipfCalibration::SingleRow);
    }
    if target_unique_pct < single {
        return Err(Error::Calibration(format!(
            "target {target_unique_pct}% is below one row ({single}%)"
        )));
    }
    let f = |s: f64| expected_unique_pct(s, rows, rows, n);
    let at_uniform = f(0.0);
    if target_unique_pct >= at_uniform {
        if target_unique_pct - at_uniform <= 1.0 {
            return Ok(ZipfCalibration::Exponent(0.0));
        }
        return Err(Error::Calibration(format!(
            "target {target_unique_pct}% exceeds the uniform limit {at_uniform:.3}%"
        )));
    }
    if f(MAX_EXPONENT) > target_unique_pct {
        return Err(Error::Calibration(format!(
            "target {target_unique_pct}% needs an exponent above {MAX_EXPONENT}"
        )));
    }
    let (mut lo, mut hi) = (0.0, MAX_EXPONENT);
    for _ in 0..48 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > target_unique_pct {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(ZipfCalibration::Exponent(0.5 * (lo + hi)))
}

/// Smallest support whose expected unique % reaches the target at exponent `s`.
fn support_for(s: f64, target_unique_pct: f64, rows: u64, n: u64) -> Option<u64> {
    let need = (target_unique_pct * rows as f64 / 100.0).ceil() as u64;
    let (mut lo, mut hi) = (need.max(1), rows);
    if expected_unique_pct(s, hi, rows, n) < target_unique_pct {
        return None;
    }
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if expected_unique_pct(s, mid, rows, n) >= target_unique_pct {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Some(lo)
}

/// Exponent and support matching both a unique % and the access share of the
/// top 10% of unique rows. Pure Zipf over all rows cannot hit both targets at
/// once, so the distribution is truncated to its hottest `support` rows.
pub fn calibrate_zipf_with_coverage(
    target_unique_pct: f64,
    target_coverage10_pct: f64,
    rows: u64,
    n: u64,
) -> Result<(f64, u64)> {
    let cov = |s: f64| {
        support_for(s, target_unique_pct, rows, n)
            .map(|k| (k, expected_coverage_pct(s, k, rows, n, 0.1)))
    };
    let (mut lo, mut hi) = (0.0, 2.0);
    let hi_cov = cov(hi).map(|c| c.1).unwrap_or(100.0);
    let lo_cov = cov(lo).map(|c| c.1).unwrap_or(0.0);
    if !(lo_cov <= target_coverage10_pct && target_coverage10_pct <= hi_cov) {
        return Err(Error::Calibration(format!(
            "coverage target {target_coverage10_pct}% outside reachable [{lo_cov:.1}, {hi_cov:.1}]"
        )));
    }
    for _ in 0..28 {
        let mid = 0.5 * (lo + hi);
        match cov(mid) {
            Some((_, c)) if c < target_coverage10_pct => lo = mid,
            _ => hi = mid,
        }
    }
    let s = 0.5 * (lo + hi);
    let k = support_for(s, target_unique_pct, rows, n)
        .ok_or_else(|| Error::Calibration("no support reaches the unique target".into()))?;
    Ok((s, k))
}

/// The five hotness presets spanning one row to uniform random.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hotness {
    OneItem,
    HighHot,
    MedHot,
    LowHot,
    Random,
}

impl Hotness {
    pub const ALL: [Hotness; 5] = [
        Hotness::OneItem,
        Hotness::HighHot,
        Hotness::MedHot,
        Hotness::LowHot,
        Hotness::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Hotness::OneItem => "one_item",
            Hotness::HighHot => "high_hot",
            Hotness::MedHot => "med_hot",
            Hotness::LowHot => "low_hot",
            Hotness::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Hotness::ALL
            .into_iter()
            .find(|h| h.name() == s || h.name().replace('_', "") == s)
            .ok_or_else(|| invalid(format!("unknown dataset '{s}'")))
    }

    pub fn target_unique_pct(self) -> f64 {
        match self {
            Hotness::OneItem => 0.0002,
            Hotness::HighHot => 4.05,
            Hotness::MedHot => 20.50,
            Hotness::LowHot => 46.21,
            Hotness::Random => 63.21,
        }
    }

    /// Access share of the top 10% of unique rows, where it is pinned down.
    pub fn target_coverage10_pct(self) -> Option<f64> {
        match self {
            Hotness::HighHot => Some(68.0),
            _ => None,
        }
    }

    /// Distribution for this preset with pool size `rows_per_table`, scaling
    /// the unique % target to the table.
    pub fn dataset_kind(self, model: &EmbeddingModelConfig) -> Result<DatasetKind> {
        let rows = model.rows_per_table;
        Ok(match self {
            Hotness::OneItem => DatasetKind::OneItem,
            Hotness::Random => DatasetKind::UniformRandom,
            _ => {
                let target = self.target_unique_pct();
                match self.target_coverage10_pct() {
                    Some(cov) => {
                        let (s, k) = calibrate_zipf_with_coverage(target, cov, rows, rows)?;
                        DatasetKind::Zipf {
                            exponent: s,
                            support: Some(k),
                        }
                    }
                    None => match calibrate_zipf(target, rows, rows)? {
                        ZipfCalibration::Exponent(s) => DatasetKind::Zipf {
                            exponent: s,
                            support: None,
                        },
                        ZipfCalibration::SingleRow => DatasetKind::OneItem,
                    },
                }
            }
        })
    }

    pub fn spec(self, model: &EmbeddingModelConfig, seed: u64) -> Result<DatasetSpec> {
        Ok(DatasetSpec::new(
            self.dataset_kind(model)?,
            model.rows_per_table,
            seed,
        ))
    }
}

/// Table counts per hotness, in the order high, med, low, random.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableMix {
    pub high: u32,
    pub med: u32,
    pub low: u32,
    pub random: u32,
}

impl TableMix {
    pub const MIX1: TableMix = TableMix {
        high: 100,
        med: 75,
        low: 50,
        random: 25,
    };
    pub const MIX2: TableMix = TableMix {
        high: 62,
        med: 63,
        low: 63,
        random: 62,
    };
    pub const MIX3: TableMix = TableMix {
        high: 25,
        med: 50,
        low: 75,
        random: 100,
    };

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mix1" => Ok(Self::MIX1),
            "mix2" => Ok(Self::MIX2),
            "mix3" => Ok(Self::MIX3),
            _ => Err(invalid(format!("unknown mix '{s}'"))),
        }
    }

    pub fn total(&self) -> u32 {
        self.high + self.med + self.low + self.random
    }

    fn groups(&self) -> [(Hotness, u32); 4] {
        [
            (Hotness::HighHot, self.high),
            (Hotness::MedHot, self.med),
            (Hotness::LowHot, self.low),
            (Hotness::Random, self.random),
        ]
    }
}

/// Per-table seed so that tables of the same hotness draw different traces.
pub fn table_seed(seed: u64, table_id: u32) -> u64 {
    let mut z = seed ^ (table_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn build_mix(
    mix: &TableMix,
    model: &EmbeddingModelConfig,
    seed: u64,
) -> Result<Vec<(u32, Hotness, DatasetSpec)>> {
    model.validate()?;
    if mix.total() != model.num_tables {
        return Err(invalid(format!(
            "mix counts sum to {}, model has {} tables",
            mix.total(),
            model.num_tables
        )));
    }
    let mut out = Vec::with_capacity(model.num_tables as usize);
    let mut table = 0u32;
    for (h, count) in mix.groups() {
        if count == 0 {
            continue;
        }
        let kind = h.dataset_kind(model)?;
        for _ in 0..count {
            out.push((
                table,
                h,
                DatasetSpec::new(kind.clone(), model.rows_per_table, table_seed(seed, table)),
            ));
            table += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(rows: u64) -> EmbeddingModelConfig {
        EmbeddingModelConfig {
            num_tables: 1,
            rows_per_table: rows,
            batch_size: 16,
            pooling_factor: 8,
            ..Default::default()
        }
    }

    #[test]
    fn default_model_volumes() {
        let m = EmbeddingModelConfig::default();
        assert_eq!(m.row_bytes(), 512);
        assert_eq!(m.bytes_per_table_pass(), 150 << 20);
        assert_eq!(m.stage_bytes(), 37_500u64 << 20);
    }

    #[test]
    fn unique_pct_hand_counts() {
        let t = AccessTrace::new(0, 4, 4, 1, vec![0, 0, 1, 2]).unwrap();
        assert_eq!(unique_access_pct(&t), 75.0);
        let t = AccessTrace::new(0, 500_000, 1, 3, vec![9, 9, 9]).unwrap();
        assert!((unique_access_pct(&t) - 0.0002).abs() < 1e-12);
        let t = AccessTrace::new(0, 3, 2, 2, vec![0, 1, 2, 2]).unwrap();
        assert_eq!(unique_access_pct(&t), 100.0);
    }

    #[test]
    fn trace_rejects_out_of_range() {
        assert!(AccessTrace::new(0, 4, 1, 2, vec![1, 4]).is_err());
        assert!(AccessTrace::new(0, 4, 1, 3, vec![1, 2]).is_err());
    }

    #[test]
    fn one_item_has_single_row() {
        let m = small_model(1000);
        let spec = DatasetSpec::new(DatasetKind::OneItem, 1000, 3);
        let t = gen_trace(&spec, &m).unwrap();
        assert_eq!(distinct_rows(&t), 1);
        assert_eq!(t.indices.len(), 128);
    }

    #[test]
    fn gen_trace_is_deterministic() {
        let m = small_model(5000);
        let spec = DatasetSpec::new(
            DatasetKind::Zipf {
                exponent: 1.1,
                support: None,
            },
            5000,
            42,
        );
        let a = gen_trace(&spec, &m).unwrap();
        let b = gen_trace(&spec, &m).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
        let other = DatasetSpec { seed: 43, ..spec };
        assert_ne!(gen_trace(&other, &m).unwrap().digest(), a.digest());
    }

    #[test]
    fn zipf_support_limits_rows() {
        let m = EmbeddingModelConfig {
            batch_size: 1000,
            ..small_model(10_000)
        };
        let spec = DatasetSpec::new(
            DatasetKind::Zipf {
                exponent: 0.5,
                support: Some(50),
            },
            10_000,
            1,
        );
        assert!(distinct_rows(&gen_trace(&spec, &m).unwrap()) <= 50);
    }

    #[test]
    fn uniform_matches_expectation() {
        // 1 - (1 - 1/R)^N with R = N
        let m = small_model(200_000);
        let spec = DatasetSpec::new(DatasetKind::UniformRandom, 200_000, 11);
        let u = unique_access_pct(&gen_pool(&spec, &m).unwrap());
        let expected = 100.0 * (1.0 - (1.0 - 1.0 / 200_000f64).powf(200_000.0));
        assert!((u - expected).abs() < 0.5, "{u} vs {expected}");
        assert!((expected_unique_pct(0.0, 200_000, 200_000, 200_000) - expected).abs() < 1e-6);
    }

    #[test]
    fn analytic_unique_matches_monte_carlo() {
        let rows = 100_000;
        let m = small_model(rows);
        for (s, support) in [(0.6, None), (1.0, None), (0.9, Some(5000))] {
            let spec = DatasetSpec::new(
                DatasetKind::Zipf {
                    exponent: s,
                    support,
                },
                rows,
                5,
            );
            let mc = unique_access_pct(&gen_pool(&spec, &m).unwrap());
            let an = expected_unique_pct(s, support.unwrap_or(rows), rows, rows);
            assert!((mc - an).abs() < 0.5, "s={s}: mc {mc} analytic {an}");
        }
    }

    #[test]
    fn calibration_edge_cases() {
        assert_eq!(
            calibrate_zipf(0.0002, 500_000, 500_000).unwrap(),
            ZipfCalibration::SingleRow
        );
        assert!(matches!(
            calibrate_zipf(0.0001, 500_000, 500_000),
            Err(Error::Calibration(_))
        ));
        assert!(calibrate_zipf(0.0, 500_000, 500_000).is_err());
        match calibrate_zipf(63.21, 500_000, 500_000).unwrap() {
            ZipfCalibration::Exponent(s) => assert!(s < 0.05, "{s}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn calibrated_exponent_reproduces_target() {
        let rows = 100_000;
        let m = small_model(rows);
        let ZipfCalibration::Exponent(s) = calibrate_zipf(20.5, rows, rows).unwrap() else {
            panic!()
        };
        let spec = DatasetSpec::new(
            DatasetKind::Zipf {
                exponent: s,
                support: None,
            },
            rows,
            9,
        );
        let u = unique_access_pct(&gen_pool(&spec, &m).unwrap());
        assert!((u - 20.5).abs() < 1.0, "{u}");
    }

    #[test]
    fn hot_indices_tie_break() {
        let h = HotnessHistogram::from_counts(vec![5, 5, 1]);
        assert_eq!(hot_indices(&h, 2), vec![0, 1]);
        assert_eq!(hot_indices(&h, 10), vec![0, 1, 2]);
        let h = HotnessHistogram::from_counts(vec![1, 3, 0, 3]);
        assert_eq!(hot_indices(&h, 3), vec![1, 3, 0]);
    }

    #[test]
    fn coverage_uniform_and_single() {
        let t = AccessTrace::new(0, 10, 10, 1, (0..10).collect()).unwrap();
        let c = coverage_curve(&t, 10).unwrap();
        for p in &c.points {
            assert!((p.covered_fraction - p.unique_fraction).abs() < 1e-9);
        }
        let t = AccessTrace::new(0, 10, 4, 1, vec![3; 4]).unwrap();
        let c = coverage_curve(&t, 10).unwrap();
        assert_eq!(c.points[0].covered_fraction, 100.0);
        assert!(coverage_curve(&t, 0).is_err());
    }

    #[test]
    fn histogram_csv() {
        let h = HotnessHistogram::from_counts(vec![0, 2, 0, 1]);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "row_id,count\n1,2\n3,1\n");
    }

    #[test]
    fn trace_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        let t = AccessTrace::new(0, 100, 2, 3, vec![1, 2, 3, 4, 5, 99]).unwrap();
        t.save(&path).unwrap();
        assert_eq!(AccessTrace::load(&path).unwrap(), t);

        std::fs::write(&path, "rows=10 samples=1 pooling=2\n3\n10\n").unwrap();
        match AccessTrace::load(&path) {
            Err(Error::Ingestion { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mix_order_and_counts() {
        let model = EmbeddingModelConfig {
            rows_per_table: 20_000,
            ..Default::default()
        };
        let tables = build_mix(&TableMix::MIX1, &model, 7).unwrap();
        assert_eq!(tables.len(), 250);
        let counts = |h| tables.iter().filter(|t| t.1 == h).count();
        assert_eq!(
            [
                counts(Hotness::HighHot),
                counts(Hotness::MedHot),
                counts(Hotness::LowHot),
                counts(Hotness::Random)
            ],
            [100, 75, 50, 25]
        );
        assert!(tables
            .windows(2)
            .all(|w| w[0].1 <= w[1].1 && w[0].0 + 1 == w[1].0));
        let bad = EmbeddingModelConfig {
            num_tables: 10,
            ..model
        };
        assert!(build_mix(&TableMix::MIX1, &bad, 7).is_err());
    }
}
