//! Workload traces and request streams.
//!
//! Traces carry token counts only. A conversation turn reuses the whole prior
//! history as cached tokens; a document question reuses the document.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED_PROFILES: &str = include_str!("../data/profiles.json");

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot summarize an empty record set")]
    Empty,
    #[error("invalid distribution: {0}")]
    Distribution(String),
    #[error("invalid stream parameters: {0}")]
    Stream(String),
    #[error("unknown profile `{0}` (sharegpt|narrativeqa|finqa)")]
    UnknownProfile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub query_tokens: u64,
    pub response_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationTrace {
    pub conversation_id: String,
    pub turns: Vec<Turn>,
}

impl ConversationTrace {
    pub fn validate(&self) -> Result<(), String> {
        if self.turns.is_empty() {
            return Err(format!(
                "conversation `{}` has no turns",
                self.conversation_id
            ));
        }
        if let Some(i) = self.turns.iter().position(|t| t.query_tokens == 0) {
            return Err(format!(
                "conversation `{}` turn {} has an empty query",
                self.conversation_id,
                i + 1
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentTrace {
    pub doc_id: String,
    pub doc_tokens: u64,
    pub question_tokens: Vec<u64>,
}

impl DocumentTrace {
    pub fn validate(&self) -> Result<(), String> {
        if self.doc_tokens == 0 {
            return Err(format!("document `{}` is empty", self.doc_id));
        }
        if self.question_tokens.contains(&0) {
            return Err(format!("document `{}` has an empty question", self.doc_id));
        }
        Ok(())
    }
}

/// One prefill request: `K` cached tokens, `T` new tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub source_id: String,
    pub cached_tokens: u64,
    pub prefill_tokens: u64,
    #[serde(default)]
    pub kappa_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrival_time: Option<f64>,
}

impl RequestRecord {
    pub fn new(source_id: impl Into<String>, cached_tokens: u64, prefill_tokens: u64) -> Self {
        Self {
            source_id: source_id.into(),
            cached_tokens,
            prefill_tokens,
            kappa_ratio: cached_tokens as f64 / prefill_tokens as f64,
            arrival_time: None,
        }
    }

    pub fn at(mut self, arrival_time: f64) -> Self {
        self.arrival_time = Some(arrival_time);
        self
    }
}

/// One record per turn; turn `i` caches every query and response before it.
pub fn expand_conversation(trace: &ConversationTrace) -> Vec<RequestRecord> {
    let mut history = 0u64;
    trace
        .turns
        .iter()
        .enumerate()
        .map(|(i, turn)| {
            let rec = RequestRecord::new(
                format!("{}#{}", trace.conversation_id, i + 1),
                history,
                turn.query_tokens,
            );
            history += turn.query_tokens + turn.response_tokens;
            rec
        })
        .collect()
}

/// One record per question, each caching the full document.
pub fn expand_document(trace: &DocumentTrace) -> Vec<RequestRecord> {
    trace
        .question_tokens
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            RequestRecord::new(format!("{}#{}", trace.doc_id, i + 1), trace.doc_tokens, q)
        })
        .collect()
}

/// Order statistics of one quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
}

/// Nearest-rank percentile of sorted data: the value at 1-based rank `⌈p/100·n⌉`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl Stats {
    pub fn from_values(mut values: Vec<f64>) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Some(Self {
            min: values[0],
            max: values[values.len() - 1],
            mean,
            p10: nearest_rank(&values, 10.0),
            p50: nearest_rank(&values, 50.0),
            p90: nearest_rank(&values, 90.0),
            p95: nearest_rank(&values, 95.0),
            p99: nearest_rank(&values, 99.0),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub count: usize,
    pub prefill_tokens: Stats,
    pub cached_tokens: Stats,
    pub kappa_ratio: Stats,
}

pub fn summarize(records: &[RequestRecord]) -> Result<DistributionSummary, WorkloadError> {
    let stats = |f: fn(&RequestRecord) -> f64| {
        Stats::from_values(records.iter().map(f).collect()).ok_or(WorkloadError::Empty)
    };
    Ok(DistributionSummary {
        count: records.len(),
        prefill_tokens: stats(|r| r.prefill_tokens as f64)?,
        cached_tokens: stats(|r| r.cached_tokens as f64)?,
        kappa_ratio: stats(|r| r.kappa_ratio)?,
    })
}

/// Token-count distribution of a synthetic profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokenDistribution {
    /// Log-normal pinned by its median and mean: `μ = ln median`, `σ² = 2 ln(mean/median)`.
    LogNormal { median: f64, mean: f64 },
    /// Piecewise log-linear inverse CDF through `(quantile, value)` knots
    /// spanning quantile 0 to 1.
    Empirical { knots: Vec<(f64, f64)> },
}

enum Sampler {
    LogNormal(LogNormal<f64>),
    Empirical(Vec<(f64, f64)>),
}

impl Sampler {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::LogNormal(d) => d.sample(rng),
            Sampler::Empirical(knots) => {
                let u: f64 = rng.random();
                let i = knots
                    .partition_point(|&(q, _)| q <= u)
                    .clamp(1, knots.len() - 1);
                let (q0, v0) = knots[i - 1];
                let (q1, v1) = knots[i];
                let w = ((u - q0) / (q1 - q0)).clamp(0.0, 1.0);
                (v0.ln() + w * (v1.ln() - v0.ln())).exp()
            }
        }
    }
}

impl TokenDistribution {
    fn sampler(&self) -> Result<Sampler, WorkloadError> {
        let bad = |m: String| WorkloadError::Distribution(m);
        match self {
            &TokenDistribution::LogNormal { median, mean } => {
                if !(median.is_finite() && mean.is_finite()) || median <= 0.0 {
                    return Err(bad(format!("log-normal median must be > 0, got {median}")));
                }
                if mean < median {
                    return Err(bad(format!(
                        "log-normal mean ({mean}) cannot be below its median ({median})"
                    )));
                }
                let sigma = (2.0 * (mean / median).ln()).sqrt();
                LogNormal::new(median.ln(), sigma)
                    .map(Sampler::LogNormal)
                    .map_err(|e| bad(e.to_string()))
            }
            TokenDistribution::Empirical { knots } => {
                if knots.len() < 2 {
                    return Err(bad("empirical distribution needs at least two knots".into()));
                }
                if knots[0].0 != 0.0 || knots[knots.len() - 1].0 != 1.0 {
                    return Err(bad("empirical knots must span quantiles 0 to 1".into()));
                }
                if knots.iter().any(|&(_, v)| !(v.is_finite() && v > 0.0)) {
                    return Err(bad("empirical values must be finite and > 0".into()));
                }
                if knots
                    .windows(2)
                    .any(|w| w[1].0 <= w[0].0 || w[1].1 < w[0].1)
                {
                    return Err(bad(
                        "empirical quantiles must increase strictly and values must not decrease"
                            .into(),
                    ));
                }
                Ok(Sampler::Empirical(knots.clone()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub cached: TokenDistribution,
    pub prefill: TokenDistribution,
}

impl WorkloadProfile {
    /// Built-in profiles: `sharegpt`, `narrativeqa`, `finqa`.
    pub fn preset(name: &str) -> Result<Self, WorkloadError> {
        Self::presets()
            .into_iter()
            .find(|p| p.name == name)
            .ok_or_else(|| WorkloadError::UnknownProfile(name.to_string()))
    }

    pub fn presets() -> Vec<Self> {
        serde_json::from_str(BUNDLED_PROFILES).expect("bundled profiles parse")
    }
}

fn to_tokens(x: f64) -> u64 {
    x.round().max(1.0) as u64
}

/// Poisson arrivals at `rps` over `[0, duration]`, with `K` and `T` drawn
/// independently from the profile. Identical inputs give identical output.
pub fn synthesize_stream(
    profile: &WorkloadProfile,
    rps: f64,
    duration: f64,
    seed: u64,
) -> Result<Vec<RequestRecord>, WorkloadError> {
    if !(rps.is_finite() && rps > 0.0) {
        return Err(WorkloadError::Stream(format!("rps must be > 0, got {rps}")));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(WorkloadError::Stream(format!(
            "duration must be > 0, got {duration}"
        )));
    }
    let cached = profile.cached.sampler()?;
    let prefill = profile.prefill.sampler()?;
    let gaps = Exp::new(rps).map_err(|e| WorkloadError::Stream(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity((rps * duration * 1.1) as usize + 16);
    let mut t = 0.0;
    loop {
        t += gaps.sample(&mut rng);
        if t > duration {
            break;
        }
        let k = to_tokens(cached.sample(&mut rng));
        let q = to_tokens(prefill.sample(&mut rng));
        out.push(RequestRecord::new(format!("{}-{}", profile.name, out.len()), k, q).at(t));
    }
    Ok(out)
}

fn parse_lines<T, F>(reader: impl BufRead, mut handle: F) -> Result<Vec<T>, WorkloadError>
where
    F: FnMut(usize, &str) -> Result<Option<T>, String>,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match handle(i + 1, &line) {
            Ok(Some(v)) => out.push(v),
            Ok(None) => {}
            Err(message) => {
                return Err(WorkloadError::Parse {
                    line: i + 1,
                    message,
                })
            }
        }
    }
    Ok(out)
}

pub fn read_conversations(reader: impl BufRead) -> Result<Vec<ConversationTrace>, WorkloadError> {
    parse_lines(reader, |_, line| {
        let t: ConversationTrace = serde_json::from_str(line).map_err(|e| e.to_string())?;
        t.validate()?;
        Ok(Some(t))
    })
}

pub fn read_documents(reader: impl BufRead) -> Result<Vec<DocumentTrace>, WorkloadError> {
    parse_lines(reader, |_, line| {
        let t: DocumentTrace = serde_json::from_str(line).map_err(|e| e.to_string())?;
        t.validate()?;
        Ok(Some(t))
    })
}

/// Reads a JSON Lines stream. Lines holding a `manifest` object are skipped;
/// `kappa_ratio` is recomputed from the token counts.
pub fn read_stream(reader: impl BufRead) -> Result<Vec<RequestRecord>, WorkloadError> {
    let mut last_arrival = f64::NEG_INFINITY;
    parse_lines(reader, |_, line| {
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if value.get("manifest").is_some() {
            return Ok(None);
        }
        let mut rec: RequestRecord = serde_json::from_value(value).map_err(|e| e.to_string())?;
        if rec.prefill_tokens == 0 {
            return Err(format!("request `{}` has no prefill tokens", rec.source_id));
        }
        rec.kappa_ratio = rec.cached_tokens as f64 / rec.prefill_tokens as f64;
        if let Some(t) = rec.arrival_time {
            if !t.is_finite() || t < last_arrival {
                return Err(format!(
                    "arrival time {t} of `{}` goes backwards",
                    rec.source_id
                ));
            }
            last_arrival = t;
        }
        Ok(Some(rec))
    })
}

pub fn write_stream(records: &[RequestRecord], mut out: impl Write) -> Result<(), WorkloadError> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Records as CSV: `source_id,cached_tokens,prefill_tokens,kappa_ratio,arrival_time`.
pub fn write_records_csv(records: &[RequestRecord], out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "source_id",
        "cached_tokens",
        "prefill_tokens",
        "kappa_ratio",
        "arrival_time",
    ])?;
    for r in records {
        w.write_record([
            r.source_id.clone(),
            r.cached_tokens.to_string(),
            r.prefill_tokens.to_string(),
            r.kappa_ratio.to_string(),
            r.arrival_time.map(|t| t.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
