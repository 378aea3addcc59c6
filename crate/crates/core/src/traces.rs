//! Request traces: parsing, distribution statistics and the empirical inference prior.
//!
//! A trace is delimited text with one request per row. Only three columns matter (an
//! ordering key, prompt tokens, generated tokens) and their header names are
//! configurable through [`ColumnMap`].

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("trace has no column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("invalid batch mixture: {0}")]
    Mixture(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub timestamp: String,
    pub prompt: String,
    pub generated: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            timestamp: "TIMESTAMP".into(),
            prompt: "ContextTokens".into(),
            generated: "GeneratedTokens".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Opaque ordering key; numeric keys sort numerically, anything else lexically.
    pub timestamp: String,
    pub prompt_tokens: u64,
    pub generated_tokens: u64,
}

fn timestamp_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal),
        _ => a.cmp(b),
    }
}

pub fn parse_trace(path: &Path, map: &ColumnMap) -> Result<Vec<TraceRecord>, TraceError> {
    let file = std::fs::File::open(path).map_err(|e| TraceError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_reader(file, map)
}

/// Parses delimited text with a header row; rows are returned sorted by timestamp
/// (stable for equal keys).
pub fn parse_reader<R: Read>(reader: R, map: &ColumnMap) -> Result<Vec<TraceRecord>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| TraceError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TraceError::MissingColumn(name.to_string()))
    };
    let (ts, pr, gen) = (column(&map.timestamp)?, column(&map.prompt)?, column(&map.generated)?);
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| TraceError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let count = |idx: usize, name: &str| -> Result<u64, TraceError> {
            let raw = row.get(idx).unwrap_or("");
            raw.parse::<u64>().map_err(|_| TraceError::Parse {
                line,
                message: format!("column `{name}`: `{raw}` is not a token count"),
            })
        };
        records.push(TraceRecord {
            timestamp: row.get(ts).unwrap_or("").to_string(),
            prompt_tokens: count(pr, &map.prompt)?,
            generated_tokens: count(gen, &map.generated)?,
        });
    }
    records.sort_by(|a, b| timestamp_order(&a.timestamp, &b.timestamp));
    Ok(records)
}

/// Writes records with a header row in column-map order.
pub fn serialize_trace(records: &[TraceRecord], map: &ColumnMap) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record([&map.timestamp, &map.prompt, &map.generated])
        .expect("in-memory write");
    for r in records {
        wtr.write_record([
            r.timestamp.clone(),
            r.prompt_tokens.to_string(),
            r.generated_tokens.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
}

/// Nearest-rank percentile of sorted data: the value at rank `ceil(p/100 · n)`.
pub fn nearest_rank(sorted: &[u64], p: u64) -> u64 {
    let n = sorted.len() as u64;
    let rank = (p * n).div_ceil(100).max(1);
    sorted[(rank - 1) as usize]
}

fn percentiles(mut values: Vec<u64>) -> Percentiles {
    values.sort_unstable();
    Percentiles {
        p50: nearest_rank(&values, 50),
        p90: nearest_rank(&values, 90),
        p99: nearest_rank(&values, 99),
    }
}

pub const HISTOGRAM_BUCKETS: usize = 32;

/// Power-of-two buckets: bucket 0 holds zeros, bucket `i ≥ 1` holds `[2^(i-1), 2^i)`, and
/// the last bucket is open-ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: Vec<u64>,
}

impl Default for Histogram {
    fn default() -> Self {
        Self {
            counts: vec![0; HISTOGRAM_BUCKETS],
        }
    }
}

impl Histogram {
    pub fn bucket(value: u64) -> usize {
        let b = (64 - value.leading_zeros()) as usize;
        b.min(HISTOGRAM_BUCKETS - 1)
    }

    pub fn lower_bound(bucket: usize) -> u64 {
        if bucket == 0 {
            0
        } else {
            1 << (bucket - 1)
        }
    }

    pub fn add(&mut self, value: u64) {
        self.counts[Self::bucket(value)] += 1;
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStats {
    pub count: usize,
    pub prompt: Percentiles,
    pub generated: Percentiles,
    pub prompt_histogram: Histogram,
    pub generated_histogram: Histogram,
}

pub fn trace_stats(records: &[TraceRecord]) -> Result<TraceStats, TraceError> {
    if records.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    let mut ph = Histogram::default();
    let mut gh = Histogram::default();
    for r in records {
        ph.add(r.prompt_tokens);
        gh.add(r.generated_tokens);
    }
    Ok(TraceStats {
        count: records.len(),
        prompt: percentiles(records.iter().map(|r| r.prompt_tokens).collect()),
        generated: percentiles(records.iter().map(|r| r.generated_tokens).collect()),
        prompt_histogram: ph,
        generated_histogram: gh,
    })
}

impl TraceStats {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "requests: {}", self.count);
        let _ = writeln!(out, "{:<10} {:>10} {:>10} {:>10}", "", "p50", "p90", "p99");
        for (name, p) in [("prompt", self.prompt), ("generated", self.generated)] {
            let _ = writeln!(out, "{:<10} {:>10} {:>10} {:>10}", name, p.p50, p.p90, p.p99);
        }
        let _ = writeln!(out, "\n{:>12} {:>10} {:>10}", "bucket >=", "prompt", "generated");
        for b in 0..HISTOGRAM_BUCKETS {
            let (p, g) = (self.prompt_histogram.counts[b], self.generated_histogram.counts[b]);
            if p + g > 0 {
                let _ = writeln!(out, "{:>12} {:>10} {:>10}", Histogram::lower_bound(b), p, g);
            }
        }
        out
    }
}

/// Distribution of batch sizes, independent of the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMixture {
    pub weights: Vec<(u64, f64)>,
}

impl Default for BatchMixture {
    fn default() -> Self {
        Self {
            weights: vec![(1, 0.6), (2, 0.3), (4, 0.1)],
        }
    }
}

impl BatchMixture {
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.weights.is_empty() {
            return Err(TraceError::Mixture("no entries".into()));
        }
        if self.weights.iter().any(|&(b, w)| b == 0 || !(w >= 0.0) || !w.is_finite()) {
            return Err(TraceError::Mixture("batch sizes must be ≥ 1 and weights ≥ 0".into()));
        }
        if self.weights.iter().map(|w| w.1).sum::<f64>() <= 0.0 {
            return Err(TraceError::Mixture("weights sum to zero".into()));
        }
        Ok(())
    }
}

/// Parses `1:0.6,2:0.3,4:0.1`.
impl FromStr for BatchMixture {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let weights = s
            .split(',')
            .map(|part| {
                let (b, w) = part
                    .split_once(':')
                    .ok_or_else(|| TraceError::Mixture(format!("`{part}` is not batch:weight")))?;
                let b = b.trim().parse().map_err(|_| TraceError::Mixture(format!("bad batch `{b}`")))?;
                let w = w.trim().parse().map_err(|_| TraceError::Mixture(format!("bad weight `{w}`")))?;
                Ok((b, w))
            })
            .collect::<Result<Vec<_>, TraceError>>()?;
        let m = Self { weights };
        m.validate()?;
        Ok(m)
    }
}

/// Joint (prompt, generated) draws from trace rows plus an independent batch size.
#[derive(Debug, Clone)]
pub struct EmpiricalPrior {
    pairs: Vec<(u64, u64)>,
    mixture: BatchMixture,
    batch_index: WeightedIndex<f64>,
}

impl PartialEq for EmpiricalPrior {
    fn eq(&self, other: &Self) -> bool {
        self.pairs == other.pairs && self.mixture == other.mixture
    }
}

pub fn empirical_prior(records: &[TraceRecord], mixture: BatchMixture) -> Result<EmpiricalPrior, TraceError> {
    if records.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    mixture.validate()?;
    let batch_index = WeightedIndex::new(mixture.weights.iter().map(|w| w.1))
        .map_err(|e| TraceError::Mixture(e.to_string()))?;
    Ok(EmpiricalPrior {
        // zero-token rows still produce one prompt token and one output token
        pairs: records
            .iter()
            .map(|r| (r.prompt_tokens.max(1), r.generated_tokens.max(1)))
            .collect(),
        mixture,
        batch_index,
    })
}

impl EmpiricalPrior {
    /// `(batch_size, prompt_length, generated_tokens)`, each ≥ 1.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (u64, u64, u64) {
        let (p, g) = self.pairs[rng.gen_range(0..self.pairs.len())];
        let batch = self.mixture.weights[self.batch_index.sample(rng)].0;
        (batch, p, g)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Workload shape for [`synthetic_trace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    /// Long prompts, medium answers.
    Conversation,
    /// Long prompts, very short answers.
    Coding,
}

impl TraceKind {
    /// Median prompt and generated lengths.
    pub fn medians(self) -> (f64, f64) {
        match self {
            TraceKind::Conversation => (1020.0, 129.0),
            TraceKind::Coding => (1500.0, 13.0),
        }
    }
}

impl FromStr for TraceKind {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conversation" | "chat" => Ok(TraceKind::Conversation),
            "coding" | "code" => Ok(TraceKind::Coding),
            _ => Err(TraceError::Mixture(format!("unknown trace kind `{s}`"))),
        }
    }
}

/// Log-normal request lengths around the kind's medians, capped at `max_tokens`.
pub fn synthetic_trace(kind: TraceKind, rows: usize, max_tokens: u64, seed: u64) -> Vec<TraceRecord> {
    let (mp, mg) = kind.medians();
    let prompt = LogNormal::new(mp.ln(), 0.9).expect("valid lognormal");
    let gen = LogNormal::new(mg.ln(), 0.8).expect("valid lognormal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows)
        .map(|i| TraceRecord {
            timestamp: i.to_string(),
            prompt_tokens: (prompt.sample(&mut rng).round() as u64).clamp(1, max_tokens),
            generated_tokens: (gen.sample(&mut rng).round() as u64).clamp(1, max_tokens),
        })
        .collect()
}
