//! The lightweight quality predictor.
//!
//! A prompt is represented as `h = [e; c; ω]`: the unit-norm semantic
//! embedding, the projected complexity vector `c = W_c z(r) + b_c`, and the raw
//! candidate scale. An MLP maps `h` to one oriented score per metric. `W_c`
//! and `b_c` are part of the trained parameters and receive gradients through
//! the first layer.

mod io;
mod network;
mod train;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::SemanticEmbedding;
use crate::text_features::{
    CharNgramModel, ComplexityFeatures, ComplexityProjection, FeatureError, FeatureNormalization,
    FEATURE_DIM,
};

pub use io::{load_model, save_model, MODEL_SCHEMA};
pub use network::Activation;
pub use train::{gradient_check, loss_and_gradient, train, train_with_progress, TrainConfig, TrainingReport};

use network::Layout;

/// Upper bound on the number of trainable parameters.
pub const MAX_PARAMS: usize = 4_000_000;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("{what}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("non-finite target for prompt {0:?}")]
    NonFiniteTarget(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("model has {count} parameters, limit is {limit}")]
    BudgetExceeded { count: usize, limit: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error("model schema {found:?} is not supported (expected {expected:?})")]
    VersionMismatch { found: String, expected: String },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

impl Direction {
    /// Multiplier that turns a raw value into an oriented one.
    pub fn sign(self) -> f64 {
        match self {
            Direction::HigherBetter => 1.0,
            Direction::LowerBetter => -1.0,
        }
    }
}

/// Ordered metric names with their optimisation direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSchema {
    pub names: Vec<String>,
    pub directions: Vec<Direction>,
}

impl MetricSchema {
    pub fn new(metrics: impl IntoIterator<Item = (impl Into<String>, Direction)>) -> Result<Self, PredictorError> {
        let (names, directions): (Vec<String>, Vec<Direction>) =
            metrics.into_iter().map(|(n, d)| (n.into(), d)).unzip();
        let schema = Self { names, directions };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), PredictorError> {
        if self.names.is_empty() {
            return Err(PredictorError::SchemaMismatch("metric schema is empty".into()));
        }
        if self.names.len() != self.directions.len() {
            return Err(PredictorError::SchemaMismatch(format!(
                "{} names but {} directions",
                self.names.len(),
                self.directions.len()
            )));
        }
        let mut sorted: Vec<&String> = self.names.iter().collect();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(PredictorError::SchemaMismatch(format!("duplicate metric {:?}", w[0])));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Negates lower-is-better metrics. Applying it twice restores raw values.
    pub fn orient(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.directions)
            .map(|(v, d)| d.sign() * v)
            .collect()
    }
}

/// Oriented per-metric scores; higher is better for every component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QualityVector(pub Vec<f64>);

impl QualityVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `[e; c; ω]`, the predictor input.
#[derive(Debug, Clone, PartialEq)]
pub struct JointRepresentation {
    pub vector: Vec<f64>,
}

impl JointRepresentation {
    pub fn scale(&self) -> f64 {
        *self.vector.last().expect("joint representation is never empty")
    }
}

#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub prompt_id: String,
    pub embedding: Arc<SemanticEmbedding>,
    pub complexity: ComplexityFeatures,
    pub scale: f64,
    pub target: QualityVector,
}

/// The trained predictor: architecture, parameters and everything needed to
/// featurize new prompts consistently with training.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub(crate) layout: Layout,
    pub(crate) activation: Activation,
    pub(crate) feature_norm: FeatureNormalization,
    pub(crate) metric_schema: MetricSchema,
    pub(crate) params: Vec<f64>,
    pub(crate) char_lm: Option<CharNgramModel>,
}

impl PredictorModel {
    /// A freshly initialised model.
    ///
    /// Weights are drawn He-normal from a generator seeded with `seed`; biases
    /// start at zero.
    pub fn initialize(
        d_e: usize,
        d_c: usize,
        hidden_sizes: &[usize],
        metric_schema: MetricSchema,
        feature_norm: FeatureNormalization,
        seed: u64,
    ) -> Result<Self, PredictorError> {
        metric_schema.validate()?;
        if d_e == 0 || d_c == 0 || hidden_sizes.contains(&0) {
            return Err(PredictorError::InvalidConfig(
                "embedding, complexity and hidden widths must be positive".into(),
            ));
        }
        if feature_norm.dim() != FEATURE_DIM {
            return Err(PredictorError::DimensionMismatch {
                what: "feature normalization",
                expected: FEATURE_DIM,
                found: feature_norm.dim(),
            });
        }
        let layout = Layout::new(d_e, d_c, FEATURE_DIM, hidden_sizes, metric_schema.len());
        check_budget(layout.total)?;
        let params = layout.init_params(seed);
        Ok(Self {
            layout,
            activation: Activation::Silu,
            feature_norm,
            metric_schema,
            params,
            char_lm: None,
        })
    }

    pub fn d_e(&self) -> usize {
        self.layout.d_e
    }

    pub fn d_c(&self) -> usize {
        self.layout.d_c
    }

    pub fn d_q(&self) -> usize {
        self.metric_schema.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layout.layer_sizes[0]
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layout.layer_sizes
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn metric_schema(&self) -> &MetricSchema {
        &self.metric_schema
    }

    pub fn feature_norm(&self) -> &FeatureNormalization {
        &self.feature_norm
    }

    pub fn char_lm(&self) -> Option<&CharNgramModel> {
        self.char_lm.as_ref()
    }

    /// Attaches the character LM used to featurize prompts at selection time.
    pub fn set_char_lm(&mut self, lm: CharNgramModel) {
        self.char_lm = Some(lm);
    }

    /// The current `W_c`, `b_c` pair.
    pub fn projection(&self) -> ComplexityProjection {
        let l = &self.layout;
        let weight = ndarray::Array2::from_shape_fn((l.d_c, l.d_r), |(j, i)| {
            self.params[l.wc + i * l.d_c + j]
        });
        let bias = self.params[l.bc..l.bc + l.d_c].to_vec();
        ComplexityProjection::new(weight, bias).expect("layout is consistent")
    }
}

pub(crate) fn check_budget(count: usize) -> Result<(), PredictorError> {
    if count > MAX_PARAMS {
        Err(PredictorError::BudgetExceeded {
            count,
            limit: MAX_PARAMS,
        })
    } else {
        Ok(())
    }
}

/// Concatenates `[e; W_c z(r) + b_c; ω]`.
pub fn build_joint(
    embedding: &SemanticEmbedding,
    feats: &ComplexityFeatures,
    scale: f64,
    model: &PredictorModel,
) -> Result<JointRepresentation, PredictorError> {
    if embedding.dim() != model.d_e() {
        return Err(PredictorError::DimensionMismatch {
            what: "embedding",
            expected: model.d_e(),
            found: embedding.dim(),
        });
    }
    let c = crate::text_features::project_complexity(feats, &model.projection(), &model.feature_norm)?;
    let mut vector = Vec::with_capacity(model.input_dim());
    vector.extend_from_slice(&embedding.vector);
    vector.extend_from_slice(&c);
    vector.push(scale);
    Ok(JointRepresentation { vector })
}

/// Runs the MLP on a prebuilt joint representation.
pub fn predict(model: &PredictorModel, h: &JointRepresentation) -> Result<QualityVector, PredictorError> {
    if h.vector.len() != model.input_dim() {
        return Err(PredictorError::DimensionMismatch {
            what: "joint representation",
            expected: model.input_dim(),
            found: h.vector.len(),
        });
    }
    let nonzeros: Vec<(usize, f64)> = h
        .vector
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(k, v)| (k, *v))
        .collect();
    let out = network::forward_rows(model, &[nonzeros]);
    Ok(QualityVector(out.row(0).to_vec()))
}

/// Predicts quality at each scale for one prompt, sharing the embedding and
/// complexity work across scales.
pub fn predict_curve(
    model: &PredictorModel,
    embedding: &SemanticEmbedding,
    feats: &ComplexityFeatures,
    scales: &[f64],
) -> Result<Vec<QualityVector>, PredictorError> {
    let base = build_joint(embedding, feats, 0.0, model)?;
    let last = model.input_dim() - 1;
    let prefix: Vec<(usize, f64)> = base.vector[..last]
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(k, v)| (k, *v))
        .collect();
    let rows: Vec<Vec<(usize, f64)>> = scales
        .iter()
        .map(|&s| {
            let mut row = prefix.clone();
            if s != 0.0 {
                row.push((last, s));
            }
            row
        })
        .collect();
    let out = network::forward_rows(model, &rows);
    Ok(out.outer_iter().map(|r| QualityVector(r.to_vec())).collect())
}
