use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{backward, batch_loss, forward_batch, reference_loss, Prepared};
use super::{MetricSchema, PredictorError, PredictorModel, TrainingExample};
use crate::text_features::FeatureNormalization;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const SHUFFLE_STREAM: u64 = 0x5851_f42d_4c95_7f2d;
const EVAL_CHUNK: usize = 512;

/// Denominator floor for relative gradient errors; components where both the
/// analytic and numeric gradients are below it are compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hidden_sizes: Vec<usize>,
    /// Width `d_c` of the projected complexity vector.
    pub complexity_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            hidden_sizes: vec![512, 256],
            complexity_dim: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Full training-set loss before the first update.
    pub initial_loss: f64,
    /// Full training-set loss after the last update.
    pub final_loss: f64,
    /// Running mean of the mini-batch losses, one entry per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub param_count: usize,
}

fn prepare(
    examples: &[TrainingExample],
    norm: &FeatureNormalization,
) -> Result<Vec<Prepared>, PredictorError> {
    examples
        .iter()
        .map(|ex| {
            Ok(Prepared {
                emb_nz: ex
                    .embedding
                    .vector
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(k, v)| (k, *v))
                    .collect(),
                z: norm.apply(&ex.complexity)?,
                scale: ex.scale,
                target: ex.target.0.clone(),
            })
        })
        .collect()
}

fn validate(
    examples: &[TrainingExample],
    schema: &MetricSchema,
    d_e: usize,
) -> Result<(), PredictorError> {
    schema.validate()?;
    for ex in examples {
        if ex.target.len() != schema.len() {
            return Err(PredictorError::SchemaMismatch(format!(
                "prompt {:?} has {} targets, schema has {} metrics",
                ex.prompt_id,
                ex.target.len(),
                schema.len()
            )));
        }
        if !ex.target.0.iter().all(|v| v.is_finite()) || !ex.scale.is_finite() {
            return Err(PredictorError::NonFiniteTarget(ex.prompt_id.clone()));
        }
        if ex.embedding.dim() != d_e {
            return Err(PredictorError::DimensionMismatch {
                what: "embedding",
                expected: d_e,
                found: ex.embedding.dim(),
            });
        }
    }
    Ok(())
}

fn dataset_loss(model: &PredictorModel, data: &[Prepared]) -> f64 {
    let mut total = 0.0;
    for chunk in data.chunks(EVAL_CHUNK) {
        let batch: Vec<&Prepared> = chunk.iter().collect();
        let cache = forward_batch(&model.layout, model.activation, &model.params, &batch);
        total += batch_loss(&cache, &batch) * batch.len() as f64;
    }
    total / data.len() as f64
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 / (1.0 - BETA1.powi(self.t));
        let c2 = 1.0 / (1.0 - BETA2.powi(self.t));
        let lr = self.lr;
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m * c1) / ((*v * c2).sqrt() + ADAM_EPS);
        }
    }
}

/// Fits a fresh model by mini-batch Adam on the summed squared error.
///
/// Feature normalization statistics are fitted on `examples` and frozen into
/// the model. Identical inputs and seed give bit-identical parameters.
pub fn train(
    examples: &[TrainingExample],
    schema: &MetricSchema,
    config: &TrainConfig,
) -> Result<(PredictorModel, TrainingReport), PredictorError> {
    train_with_progress(examples, schema, config, |_, _| {})
}

/// [`train`] with a callback receiving `(epoch, mean epoch loss)`.
pub fn train_with_progress(
    examples: &[TrainingExample],
    schema: &MetricSchema,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(PredictorModel, TrainingReport), PredictorError> {
    let first = examples.first().ok_or(PredictorError::EmptyDataset)?;
    if config.batch_size == 0 || !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(PredictorError::InvalidConfig(
            "batch_size and learning_rate must be positive".into(),
        ));
    }
    let d_e = first.embedding.dim();
    validate(examples, schema, d_e)?;

    let norm = FeatureNormalization::fit(examples.iter().map(|e| &e.complexity));
    let mut model = PredictorModel::initialize(
        d_e,
        config.complexity_dim,
        &config.hidden_sizes,
        schema.clone(),
        norm,
        config.seed,
    )?;
    let data = prepare(examples, &model.feature_norm)?;
    let initial_loss = dataset_loss(&model, &data);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; model.params.len()];
    let mut adam = Adam::new(model.params.len(), config.learning_rate);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut steps = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Prepared> = idx.iter().map(|&i| &data[i]).collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let cache = forward_batch(&model.layout, model.activation, &model.params, &batch);
            let loss = batch_loss(&cache, &batch);
            if !loss.is_finite() {
                return Err(PredictorError::NonFiniteLoss { epoch, step });
            }
            backward(&model.layout, model.activation, &model.params, &cache, &batch, &mut grad);
            adam.step(&mut model.params, &grad);
            sum += loss * batch.len() as f64;
            steps += 1;
        }
        let mean = sum / data.len() as f64;
        epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }

    let final_loss = dataset_loss(&model, &data);
    if !final_loss.is_finite() {
        return Err(PredictorError::NonFiniteLoss {
            epoch: config.epochs,
            step: 0,
        });
    }
    let report = TrainingReport {
        initial_loss,
        final_loss,
        epoch_losses,
        steps,
        param_count: model.param_count(),
    };
    Ok((model, report))
}

/// Mean loss over `examples` and its gradient with respect to every
/// parameter, in the flat parameter order.
pub fn loss_and_gradient(
    model: &PredictorModel,
    examples: &[TrainingExample],
) -> Result<(f64, Vec<f64>), PredictorError> {
    if examples.is_empty() {
        return Err(PredictorError::EmptyDataset);
    }
    validate(examples, &model.metric_schema, model.d_e())?;
    let data = prepare(examples, &model.feature_norm)?;
    let batch: Vec<&Prepared> = data.iter().collect();
    let cache = forward_batch(&model.layout, model.activation, &model.params, &batch);
    let loss = batch_loss(&cache, &batch);
    let mut grad = vec![0.0; model.params.len()];
    backward(&model.layout, model.activation, &model.params, &cache, &batch, &mut grad);
    Ok((loss, grad))
}

/// Largest relative disagreement between the backpropagated gradient and a
/// central finite difference with step `epsilon`, over all parameters.
pub fn gradient_check(
    model: &PredictorModel,
    example: &TrainingExample,
    epsilon: f64,
) -> Result<f64, PredictorError> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(PredictorError::InvalidConfig(format!(
            "epsilon must lie in [1e-7, 1e-3], got {epsilon}"
        )));
    }
    let examples = std::slice::from_ref(example);
    let (_, analytic) = loss_and_gradient(model, examples)?;
    let data = prepare(examples, &model.feature_norm)?;
    let batch: Vec<&Prepared> = data.iter().collect();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let plus = reference_loss(&model.layout, model.activation, &model.params, (i, epsilon), &batch);
        let minus = reference_loss(&model.layout, model.activation, &model.params, (i, -epsilon), &batch);
        let numeric = f64::from((plus - minus) / (2.0 * epsilon));
        let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
