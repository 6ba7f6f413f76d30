//! Run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use gsadvisor_core::embedding::{load_embeddings, DEFAULT_HASHED_DIM};
use gsadvisor_core::predictor::{Direction, MetricSchema};
use gsadvisor_core::selector::{DEFAULT_ALPHA, IMAGE_DEFAULT_ANCHOR};
use gsadvisor_core::sweep::{
    HttpProvider, Provider, SyntheticOracleParams, DEFAULT_EXTERNAL_SAMPLES, DEFAULT_MAX_RETRIES,
    DEFAULT_SYNTHETIC_SAMPLES,
};
use gsadvisor_core::{EmbeddingProvider, ScaleGrid, TrainConfig, UtilityConfig};
use serde::{Deserialize, Serialize};

pub const SYNTHETIC: &str = "synthetic";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub sweep: SweepSection,
    pub provider: ProviderSection,
    /// Metric names and directions; the synthetic oracle's four metrics
    /// when absent.
    pub metrics: Option<Vec<MetricSpec>>,
    pub embedding: EmbeddingSection,
    pub train: TrainSection,
    pub utility: UtilitySection,
    pub evaluate: EvaluateSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Prompts swept and trained on.
    pub prompts: Option<PathBuf>,
    /// Prompts to select scales for; `prompts` when absent.
    pub select_prompts: Option<PathBuf>,
    /// Held-out prompts for evaluation; `select_prompts` when absent.
    pub eval_prompts: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub selection: PathBuf,
    pub evaluation: PathBuf,
    pub report: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            prompts: None,
            select_prompts: None,
            eval_prompts: None,
            embeddings: None,
            dataset: "dataset.jsonl".into(),
            model: "model.json".into(),
            selection: "selection.jsonl".into(),
            evaluation: "evaluation.json".into(),
            report: "report.txt".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub grid: Vec<f64>,
    /// Generations per pair; 16 for the synthetic oracle and 4 for an
    /// external provider when absent.
    pub samples_per_pair: Option<usize>,
    /// Concurrent pairs; all available cores when 0.
    pub workers: usize,
    pub max_retries: usize,
    pub retry_backoff_ms: u64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            grid: ScaleGrid::image_default().scales().to_vec(),
            samples_per_pair: None,
            workers: 0,
            max_retries: DEFAULT_MAX_RETRIES,
            retry_backoff_ms: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    /// `synthetic` or an `http://` endpoint.
    pub endpoint: String,
    pub timeout_secs: f64,
    pub noise_std: f64,
    pub peak_offsets: Option<Vec<f64>>,
}

impl Default for ProviderSection {
    fn default() -> Self {
        Self {
            endpoint: SYNTHETIC.into(),
            timeout_secs: 60.0,
            noise_std: 0.1,
            peak_offsets: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    pub name: String,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    /// Hashed embedding width when no embedding file is configured.
    pub dim: usize,
    /// Hash prompts missing from the embedding file instead of failing.
    pub fallback: bool,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            dim: DEFAULT_HASHED_DIM,
            fallback: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden_sizes: Vec<usize>,
    pub complexity_dim: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            hidden_sizes: d.hidden_sizes,
            complexity_dim: d.complexity_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UtilitySection {
    /// Uniform over the metrics when absent.
    pub weights: Option<Vec<f64>>,
    pub alpha: f64,
    /// Required unless the grid is the default image grid.
    pub anchor: Option<f64>,
}

impl Default for UtilitySection {
    fn default() -> Self {
        Self {
            weights: None,
            alpha: DEFAULT_ALPHA,
            anchor: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Labelled sweep over the evaluation prompts. The synthetic oracle's
    /// noise-free curves are used when absent.
    pub truth_dataset: Option<PathBuf>,
    /// Metric subsets whose restricted utility is compared with the full one.
    pub ablation: Vec<Vec<String>>,
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub grid: Option<String>,
    pub alpha: Option<f64>,
    pub anchor: Option<f64>,
    pub provider: Option<String>,
}

impl RunConfig {
    /// Loads `path`, resolves relative paths against its directory and
    /// applies `overrides`.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.apply(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        for path in [&mut p.prompts, &mut p.select_prompts, &mut p.eval_prompts, &mut p.embeddings]
            .into_iter()
            .flatten()
        {
            fix(path);
        }
        for path in [&mut p.dataset, &mut p.model, &mut p.selection, &mut p.evaluation, &mut p.report] {
            fix(path);
        }
        if let Some(path) = &mut self.evaluate.truth_dataset {
            fix(path);
        }
    }

    fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(grid) = &o.grid {
            self.sweep.grid = ScaleGrid::parse(grid)?.scales().to_vec();
        }
        if let Some(alpha) = o.alpha {
            self.utility.alpha = alpha;
        }
        if let Some(anchor) = o.anchor {
            self.utility.anchor = Some(anchor);
        }
        if let Some(provider) = &o.provider {
            self.provider.endpoint = provider.clone();
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        self.grid()?;
        self.anchor()?;
        let schema = self.metric_schema()?;
        if let Some(w) = &self.utility.weights {
            if w.len() != schema.len() {
                bail!("utility.weights has {} entries, metrics have {}", w.len(), schema.len());
            }
        }
        if !self.is_synthetic() && !self.provider.endpoint.starts_with("http://") {
            bail!("provider must be `synthetic` or an http:// endpoint, got {:?}", self.provider.endpoint);
        }
        if !(self.provider.timeout_secs > 0.0 && self.provider.timeout_secs.is_finite()) {
            bail!("provider.timeout_secs must be positive");
        }
        for subset in &self.evaluate.ablation {
            for name in subset {
                if schema.index_of(name).is_none() {
                    bail!("ablation metric {name:?} is not one of {:?}", schema.names);
                }
            }
        }
        Ok(())
    }

    pub fn is_synthetic(&self) -> bool {
        self.provider.endpoint == SYNTHETIC
    }

    pub fn grid(&self) -> Result<ScaleGrid> {
        Ok(ScaleGrid::new(self.sweep.grid.clone())?)
    }

    pub fn anchor(&self) -> Result<f64> {
        match self.utility.anchor {
            Some(a) => Ok(a),
            None if self.grid()? == ScaleGrid::image_default() => Ok(IMAGE_DEFAULT_ANCHOR),
            None => bail!("utility.anchor must be set when the scale grid is not the default image grid"),
        }
    }

    pub fn metric_schema(&self) -> Result<MetricSchema> {
        match &self.metrics {
            Some(specs) => Ok(MetricSchema::new(specs.iter().map(|m| (m.name.clone(), m.direction)))?),
            None => Ok(SyntheticOracleParams::image_schema()),
        }
    }

    pub fn synthetic_params(&self) -> Result<SyntheticOracleParams> {
        let mut params = SyntheticOracleParams::image_default(self.provider.noise_std);
        if let Some(offsets) = &self.provider.peak_offsets {
            params.peak_offsets = offsets.clone();
        }
        params.validate(&self.metric_schema()?)?;
        Ok(params)
    }

    pub fn provider(&self) -> Result<Provider> {
        if self.is_synthetic() {
            Ok(Provider::Synthetic(self.synthetic_params()?))
        } else {
            Ok(Provider::External(HttpProvider::new(
                self.provider.endpoint.clone(),
                Duration::from_secs_f64(self.provider.timeout_secs),
            )))
        }
    }

    pub fn samples_per_pair(&self) -> usize {
        self.sweep.samples_per_pair.unwrap_or(if self.is_synthetic() {
            DEFAULT_SYNTHETIC_SAMPLES
        } else {
            DEFAULT_EXTERNAL_SAMPLES
        })
    }

    pub fn workers(&self) -> usize {
        if self.sweep.workers > 0 {
            self.sweep.workers
        } else {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        }
    }

    pub fn embedding_provider(&self) -> Result<EmbeddingProvider> {
        match &self.paths.embeddings {
            Some(path) => {
                let store = load_embeddings(path).with_context(|| format!("loading embeddings {}", path.display()))?;
                Ok(EmbeddingProvider::from_store(store, self.embedding.fallback)?)
            }
            None => Ok(EmbeddingProvider::hashed(self.embedding.dim)?),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            seed: self.seed,
            hidden_sizes: self.train.hidden_sizes.clone(),
            complexity_dim: self.train.complexity_dim,
        }
    }

    pub fn utility_config(&self, d_q: usize) -> Result<UtilityConfig> {
        let weights = self.utility.weights.clone().unwrap_or_else(|| vec![1.0 / d_q as f64; d_q]);
        Ok(UtilityConfig::new(weights, self.utility.alpha, self.anchor()?)?)
    }

    pub fn prompts_path(&self) -> Result<&Path> {
        self.paths.prompts.as_deref().context("paths.prompts is not set")
    }

    pub fn select_prompts_path(&self) -> Result<&Path> {
        match &self.paths.select_prompts {
            Some(p) => Ok(p),
            None => self.prompts_path(),
        }
    }

    pub fn eval_prompts_path(&self) -> Result<&Path> {
        match &self.paths.eval_prompts {
            Some(p) => Ok(p),
            None => self.select_prompts_path(),
        }
    }
}
