//! Glue between the stages: prompts and sweep records in, training examples
//! and selections out.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::embedding::{EmbeddingError, EmbeddingProvider, SemanticEmbedding};
use crate::predictor::{MetricSchema, PredictorError, PredictorModel, TrainConfig, TrainingExample, TrainingReport};
use crate::prompts::PromptRecord;
use crate::selector::{select_scale, ScaleGrid, SelectError, SelectionReportLine, UtilityConfig};
use crate::sweep::{Dataset, SweepRecord};
use crate::text_features::{ComplexityFeatures, FeatureError, Featurizer, ModifierLexicon};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no prompt with id {0:?}")]
    MissingPrompt(String),
    #[error("model file carries no character language model")]
    MissingLanguageModel,
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Select(#[from] SelectError),
}

/// Embedding and complexity features of one prompt.
#[derive(Debug, Clone)]
pub struct PromptInputs {
    pub embedding: Arc<SemanticEmbedding>,
    pub features: ComplexityFeatures,
}

pub fn prompt_inputs(
    prompts: &[PromptRecord],
    featurizer: &Featurizer,
    provider: &EmbeddingProvider,
) -> Result<BTreeMap<String, PromptInputs>, PipelineError> {
    prompts
        .par_iter()
        .map(|p| {
            let inputs = PromptInputs {
                embedding: Arc::new(provider.get(p)?),
                features: featurizer.features(&p.text),
            };
            Ok((p.id.clone(), inputs))
        })
        .collect()
}

pub fn training_examples(
    records: &[SweepRecord],
    inputs: &BTreeMap<String, PromptInputs>,
) -> Result<Vec<TrainingExample>, PipelineError> {
    records
        .iter()
        .map(|r| {
            let inp = inputs
                .get(&r.prompt_id)
                .ok_or_else(|| PipelineError::MissingPrompt(r.prompt_id.clone()))?;
            Ok(TrainingExample {
                prompt_id: r.prompt_id.clone(),
                embedding: Arc::clone(&inp.embedding),
                complexity: inp.features,
                scale: r.scale,
                target: r.aggregate.clone(),
            })
        })
        .collect()
}

/// Fits the character LM on the prompts present in `dataset`, trains the
/// predictor and stores the LM in the model so selection featurizes prompts
/// the same way.
pub fn fit_predictor(
    dataset: &Dataset,
    prompts: &[PromptRecord],
    provider: &EmbeddingProvider,
    config: &TrainConfig,
    expected_schema: Option<&MetricSchema>,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(PredictorModel, TrainingReport), PipelineError> {
    if let Some(expected) = expected_schema {
        if expected != &dataset.metric_schema {
            return Err(PredictorError::SchemaMismatch(format!(
                "dataset metrics {:?} differ from configured metrics {:?}",
                dataset.metric_schema.names, expected.names
            ))
            .into());
        }
    }
    let used: BTreeSet<&str> = dataset.records.iter().map(|r| r.prompt_id.as_str()).collect();
    let train_prompts: Vec<PromptRecord> = prompts.iter().filter(|p| used.contains(p.id.as_str())).cloned().collect();
    if let Some(missing) = used.iter().find(|id| !train_prompts.iter().any(|p| p.id == **id)) {
        return Err(PipelineError::MissingPrompt(missing.to_string()));
    }
    let corpus: Vec<&str> = train_prompts.iter().map(|p| p.text.as_str()).collect();
    let featurizer = Featurizer::fit(&corpus)?;
    let inputs = prompt_inputs(&train_prompts, &featurizer, provider)?;
    let examples = training_examples(&dataset.records, &inputs)?;
    let (mut model, report) = crate::predictor::train_with_progress(&examples, &dataset.metric_schema, config, on_epoch)?;
    model.set_char_lm(featurizer.lm);
    Ok((model, report))
}

/// [`fit_predictor`] without progress reporting.
pub fn fit(
    dataset: &Dataset,
    prompts: &[PromptRecord],
    provider: &EmbeddingProvider,
    config: &TrainConfig,
) -> Result<(PredictorModel, TrainingReport), PipelineError> {
    fit_predictor(dataset, prompts, provider, config, None, |_, _| {})
}

/// Featurizer matching the one used when `model` was trained.
pub fn model_featurizer(model: &PredictorModel, lexicon: ModifierLexicon) -> Result<Featurizer, PipelineError> {
    let lm = model.char_lm().ok_or(PipelineError::MissingLanguageModel)?.clone();
    Ok(Featurizer { lm, lexicon })
}

/// Runs the selector for every prompt, in input order.
pub fn select_prompts(
    model: &PredictorModel,
    prompts: &[PromptRecord],
    provider: &EmbeddingProvider,
    lexicon: ModifierLexicon,
    grid: &ScaleGrid,
    cfg: &UtilityConfig,
) -> Result<Vec<SelectionReportLine>, PipelineError> {
    let featurizer = model_featurizer(model, lexicon)?;
    prompts
        .par_iter()
        .map(|p| {
            let embedding = provider.get(p)?;
            let features = featurizer.features(&p.text);
            let result = select_scale(model, &embedding, &features, grid, cfg)?;
            Ok(SelectionReportLine::new(&p.id, result))
        })
        .collect()
}
