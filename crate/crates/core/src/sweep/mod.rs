//! Oracle dataset construction: every `(prompt, scale)` pair is sampled
//! `N_g` times, scored per metric and averaged.
//!
//! Pairs run in parallel up to a configured width; a single writer appends
//! finished pairs to an on-disk spool and journal so an interrupted sweep
//! resumes where it stopped. Output is always in `(prompt_id, scale)` order.

mod dataset;
mod http;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{oriented_mean, read_dataset, write_dataset, Dataset, DATASET_SCHEMA};
pub use http::{HttpProvider, ScoredSample, DEFAULT_TIMEOUT};
pub use synthetic::{synthetic_generate_score, ComplexityMap, SyntheticOracleParams};

use crate::hashing::stable_hash;
use crate::predictor::{MetricSchema, PredictorError, QualityVector};
use crate::prompts::PromptRecord;
use crate::selector::ScaleGrid;

pub const DEFAULT_SYNTHETIC_SAMPLES: usize = 16;
pub const DEFAULT_EXTERNAL_SAMPLES: usize = 4;
pub const DEFAULT_MAX_RETRIES: usize = 2;

const SPOOL_SCHEMA: &str = "sweep.spool.v1";

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("scorer returned metrics {found:?}, expected {expected:?}")]
    ScoreSchemaMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP status {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid sweep plan: {0}")]
    InvalidPlan(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("duplicate pair ({id}, {scale})")]
    DuplicatePair { id: String, scale: f64 },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("orientation conflict: {0}")]
    OrientationConflict(String),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SweepError {
    /// Whether a failed pair is worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            SweepError::Timeout(_) | SweepError::Transport(_) => true,
            SweepError::HttpStatus { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }

    /// Errors that abort the whole sweep instead of failing one pair.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            SweepError::ProviderUnreachable(_) | SweepError::ScoreSchemaMismatch { .. } | SweepError::Io(_)
        )
    }
}

/// Seed of sample `j` of `(prompt_id, scale)`.
pub fn sample_seed(seed_base: u64, prompt_id: &str, scale: f64, sample_index: usize) -> u64 {
    stable_hash(
        seed_base,
        &[
            prompt_id.as_bytes(),
            &scale.to_bits().to_le_bytes(),
            &(sample_index as u64).to_le_bytes(),
        ],
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub prompt_id: String,
    pub scale: f64,
    /// `N_g × d_q` raw scores.
    pub per_sample: Vec<Vec<f64>>,
    /// Oriented column mean of `per_sample`.
    pub aggregate: QualityVector,
    pub provider_meta: serde_json::Value,
}

impl SweepRecord {
    pub fn new(
        prompt_id: impl Into<String>,
        scale: f64,
        per_sample: Vec<Vec<f64>>,
        schema: &MetricSchema,
        provider_meta: serde_json::Value,
    ) -> Self {
        let aggregate = QualityVector(oriented_mean(&per_sample, schema));
        Self {
            prompt_id: prompt_id.into(),
            scale,
            per_sample,
            aggregate,
            provider_meta,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Provider {
    Synthetic(SyntheticOracleParams),
    External(HttpProvider),
}

#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub prompts: Vec<PromptRecord>,
    pub grid: ScaleGrid,
    pub samples_per_pair: usize,
    pub seed_base: u64,
    pub metric_schema: MetricSchema,
    pub provider: Provider,
}

impl SweepPlan {
    /// `|P| · |S| · N_g` samples.
    pub fn total_work(&self) -> usize {
        self.prompts.len() * self.grid.len() * self.samples_per_pair
    }

    pub fn pair_count(&self) -> usize {
        self.prompts.len() * self.grid.len()
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        self.metric_schema.validate()?;
        if self.samples_per_pair == 0 {
            return Err(SweepError::InvalidPlan("samples_per_pair must be at least 1".into()));
        }
        let mut ids = BTreeSet::new();
        for p in &self.prompts {
            if p.id.is_empty() || p.id.contains(['\t', '\n', '\r']) {
                return Err(SweepError::InvalidPlan(format!("prompt id {:?} is empty or has control characters", p.id)));
            }
            if !ids.insert(p.id.as_str()) {
                return Err(SweepError::InvalidPlan(format!("duplicate prompt id {:?}", p.id)));
            }
        }
        if let Provider::Synthetic(params) = &self.provider {
            params.validate(&self.metric_schema)?;
        }
        Ok(())
    }

    fn run_pair(&self, prompt: &PromptRecord, scale: f64) -> Result<SweepRecord, SweepError> {
        let seeds: Vec<u64> = (0..self.samples_per_pair)
            .map(|j| sample_seed(self.seed_base, &prompt.id, scale, j))
            .collect();
        match &self.provider {
            Provider::Synthetic(params) => {
                let samples = synthetic::synthetic_pair(params, &self.metric_schema, prompt, scale, &seeds);
                Ok(SweepRecord::new(&prompt.id, scale, samples, &self.metric_schema, serde_json::Value::Null))
            }
            Provider::External(client) => {
                let mut samples = Vec::with_capacity(seeds.len());
                let mut artifacts = Vec::with_capacity(seeds.len());
                for &seed in &seeds {
                    let s = client.sample(prompt, scale, seed, &self.metric_schema)?;
                    artifacts.push(s.artifact);
                    samples.push(s.scores);
                }
                let meta = serde_json::json!({ "seeds": seeds, "artifacts": artifacts });
                Ok(SweepRecord::new(&prompt.id, scale, samples, &self.metric_schema, meta))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Pairs processed concurrently.
    pub workers: usize,
    /// Extra attempts for a pair after a retryable failure.
    pub max_retries: usize,
    pub retry_backoff: Duration,
    /// Journal path; the record spool lives next to it with a `.records`
    /// suffix. `None` keeps everything in memory.
    pub journal: Option<PathBuf>,
    /// Stop after this many pairs have been attempted in this invocation.
    pub max_pairs: Option<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            max_retries: DEFAULT_MAX_RETRIES,
            retry_backoff: Duration::from_millis(200),
            journal: None,
            max_pairs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFailure {
    pub id: String,
    pub scale: f64,
    pub attempts: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub total_work: usize,
    pub pairs_planned: usize,
    pub pairs_completed: usize,
    pub pairs_resumed: usize,
    pub failures: Vec<PairFailure>,
    /// True when `max_pairs` stopped the run before every pair was attempted.
    pub interrupted: bool,
    pub elapsed_secs: f64,
    pub mean_pair_secs: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub records: Vec<SweepRecord>,
    pub report: SweepReport,
}

fn spool_path(journal: &Path) -> PathBuf {
    let mut s = OsString::from(journal.as_os_str());
    s.push(".records");
    PathBuf::from(s)
}

#[derive(Serialize, Deserialize, PartialEq)]
struct SpoolHeader {
    schema: String,
    metric_schema: MetricSchema,
    n_g: usize,
    seed_base: u64,
}

type PairKey = (String, u64);

fn key(id: &str, scale: f64) -> PairKey {
    (id.to_string(), scale.to_bits())
}

/// Reads back pairs that are both journaled and spooled.
fn load_progress(journal: &Path, header: &SpoolHeader) -> Result<BTreeMap<PairKey, SweepRecord>, SweepError> {
    let spool = spool_path(journal);
    if !journal.exists() || !spool.exists() {
        return Ok(BTreeMap::new());
    }
    let mut done = BTreeSet::new();
    for line in BufReader::new(File::open(journal)?).lines() {
        let line = line?;
        let mut parts = line.split('\t');
        if let (Some(id), Some(scale), Some("done")) = (parts.next(), parts.next(), parts.next()) {
            if let Ok(scale) = scale.parse::<f64>() {
                done.insert(key(id, scale));
            }
        }
    }
    let mut lines = BufReader::new(File::open(&spool)?).lines();
    let Some(first) = lines.next().transpose()? else {
        return Ok(BTreeMap::new());
    };
    let found: SpoolHeader = serde_json::from_str(&first).map_err(|e| SweepError::Format {
        line: 1,
        message: format!("{}: {e}", spool.display()),
    })?;
    if found != *header {
        return Err(SweepError::InvalidPlan(format!(
            "{} was written by a sweep with a different schema, sample count or seed",
            spool.display()
        )));
    }
    let mut records = BTreeMap::new();
    for line in lines {
        // a torn final line is simply not resumed
        if let Ok(r) = dataset::parse_row(&line?) {
            let k = key(&r.prompt_id, r.scale);
            if done.contains(&k) {
                records.insert(k, r);
            }
        }
    }
    Ok(records)
}

struct Progress {
    spool: BufWriter<File>,
    journal: BufWriter<File>,
}

impl Progress {
    fn open(journal: &Path, header: &SpoolHeader, fresh: bool) -> Result<Self, SweepError> {
        let spool = spool_path(journal);
        if fresh {
            let mut w = BufWriter::new(File::create(&spool)?);
            serde_json::to_writer(&mut w, header).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
            w.flush()?;
            File::create(journal)?;
        }
        let append = |p: &Path| OpenOptions::new().append(true).open(p);
        Ok(Self {
            spool: BufWriter::new(append(&spool)?),
            journal: BufWriter::new(append(journal)?),
        })
    }

    fn commit(&mut self, r: &SweepRecord) -> Result<(), SweepError> {
        dataset::write_row(&mut self.spool, r)?;
        self.spool.flush()?;
        writeln!(self.journal, "{}\t{}\tdone", r.prompt_id, r.scale)?;
        self.journal.flush()?;
        Ok(())
    }
}

fn attempt_pair(plan: &SweepPlan, options: &SweepOptions, prompt: &PromptRecord, scale: f64) -> (Result<SweepRecord, SweepError>, usize) {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match plan.run_pair(prompt, scale) {
            Err(e) if e.is_retryable() && attempts <= options.max_retries => {
                std::thread::sleep(options.retry_backoff * attempts as u32);
            }
            result => return (result, attempts),
        }
    }
}

/// Runs every pending pair of `plan`.
///
/// Fatal errors (unreachable provider, a scorer answering with the wrong
/// metrics, I/O failures of the journal) abort the sweep; any other failure
/// of a pair is retried up to `max_retries` times, then reported and the
/// pair left out.
pub fn run_sweep(plan: &SweepPlan, options: &SweepOptions) -> Result<SweepOutcome, SweepError> {
    plan.validate()?;
    if options.workers == 0 {
        return Err(SweepError::InvalidPlan("workers must be at least 1".into()));
    }
    if let Provider::External(client) = &plan.provider {
        client.probe()?;
    }
    let start = Instant::now();
    let header = SpoolHeader {
        schema: SPOOL_SCHEMA.into(),
        metric_schema: plan.metric_schema.clone(),
        n_g: plan.samples_per_pair,
        seed_base: plan.seed_base,
    };

    let planned: BTreeSet<PairKey> = plan
        .prompts
        .iter()
        .flat_map(|p| plan.grid.scales().iter().map(|&s| key(&p.id, s)))
        .collect();
    let mut done = match &options.journal {
        Some(j) => load_progress(j, &header)?,
        None => BTreeMap::new(),
    };
    done.retain(|k, _| planned.contains(k));
    let pairs_resumed = done.len();
    let mut progress = match &options.journal {
        Some(j) => Some(Progress::open(j, &header, pairs_resumed == 0)?),
        None => None,
    };

    let pending: Vec<(&PromptRecord, f64)> = plan
        .prompts
        .iter()
        .flat_map(|p| plan.grid.scales().iter().map(move |&s| (p, s)))
        .filter(|(p, s)| !done.contains_key(&key(&p.id, *s)))
        .collect();
    let budget = options.max_pairs.unwrap_or(usize::MAX).min(pending.len());
    let interrupted = budget < pending.len();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| SweepError::InvalidPlan(e.to_string()))?;
    let mut failures = Vec::new();
    let mut pairs_completed = 0;
    for chunk in pending[..budget].chunks(options.workers * 8) {
        let results: Vec<_> = pool.install(|| {
            chunk
                .par_iter()
                .map(|(p, s)| attempt_pair(plan, options, p, *s))
                .collect()
        });
        for ((prompt, scale), (result, attempts)) in chunk.iter().zip(results) {
            match result {
                Ok(record) => {
                    if let Some(progress) = progress.as_mut() {
                        progress.commit(&record)?;
                    }
                    done.insert(key(&prompt.id, *scale), record);
                    pairs_completed += 1;
                }
                Err(e) if e.is_fatal() => return Err(e),
                Err(e) => failures.push(PairFailure {
                    id: prompt.id.clone(),
                    scale: *scale,
                    attempts,
                    error: e.to_string(),
                }),
            }
        }
    }

    let mut records: Vec<SweepRecord> = done.into_values().collect();
    records.sort_by(|a, b| a.prompt_id.cmp(&b.prompt_id).then(a.scale.total_cmp(&b.scale)));
    failures.sort_by(|a, b| a.id.cmp(&b.id).then(a.scale.total_cmp(&b.scale)));
    let elapsed = start.elapsed().as_secs_f64();
    let attempted = pairs_completed + failures.len();
    Ok(SweepOutcome {
        records,
        report: SweepReport {
            total_work: plan.total_work(),
            pairs_planned: plan.pair_count(),
            pairs_completed,
            pairs_resumed,
            failures,
            interrupted,
            elapsed_secs: elapsed,
            mean_pair_secs: if attempted == 0 { 0.0 } else { elapsed / attempted as f64 },
        },
    })
}
