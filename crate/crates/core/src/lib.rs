//! Prompt-aware guidance scale selection.
//!
//! The crate is organised around the three stages of the pipeline:
//!
//! 1. [`sweep`] builds an oracle dataset by scoring generations of every
//!    `(prompt, scale)` pair, either through an external HTTP provider or the
//!    built-in synthetic oracle.
//! 2. [`predictor`] trains a small MLP that maps a prompt representation and a
//!    candidate scale to a vector of oriented quality scores.
//! 3. [`selector`] evaluates the predictor over a scale grid and picks the
//!    scale maximising a regularised utility.
//!
//! [`text_features`] and [`embedding`] produce the prompt representation,
//! [`pipeline`] glues the stages together and [`evaluate`] compares the
//! adaptive policy against fixed-scale baselines.

pub mod embedding;
pub mod evaluate;
pub mod pipeline;
pub mod predictor;
pub mod prompts;
pub mod selector;
pub mod sweep;
pub mod text_features;

mod hashing;

pub use embedding::{EmbeddingProvider, EmbeddingStore, SemanticEmbedding};
pub use predictor::{MetricSchema, PredictorModel, QualityVector, TrainConfig, TrainingExample};
pub use prompts::PromptRecord;
pub use selector::{ScaleGrid, SelectionResult, UtilityConfig};
