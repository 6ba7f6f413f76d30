//! Lexical complexity statistics of a prompt and their learned projection.
//!
//! A prompt is tokenized into lowercase word tokens; [`complexity_features`]
//! summarises the sequence into a fixed seven-dimensional vector covering
//! length, diversity and predictability. The vector is z-scored with
//! statistics frozen at training time and projected by a learned affine map
//! ([`project_complexity`]).

mod char_lm;
mod projection;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use char_lm::{train_char_lm, CharNgramModel, DEFAULT_LM_ORDER, DEFAULT_LM_SMOOTHING};
pub use projection::{project_complexity, ComplexityProjection, FeatureNormalization};

/// Names of the complexity features, in vector order. Part of the model file.
pub const FEATURE_NAMES: [&str; 7] = [
    "token_count",
    "char_count",
    "token_entropy",
    "char_ngram_perplexity",
    "modifier_diversity",
    "type_token_ratio",
    "mean_token_length",
];

/// Number of complexity features.
pub const FEATURE_DIM: usize = FEATURE_NAMES.len();

const BUNDLED_LEXICON: &str = include_str!("../../data/modifiers.txt");

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("corpus contains no characters")]
    EmptyCorpus,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("lexicon is empty")]
    EmptyLexicon,
    #[error("failed to read lexicon: {0}")]
    Io(#[from] std::io::Error),
}

/// Lowercased word tokens of a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    /// Non-whitespace characters of the raw text, punctuation included.
    pub char_count: usize,
}

impl TokenSequence {
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens joined by single spaces; the text seen by the character LM.
    pub fn normalized_text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Splits `raw` into maximal runs of alphanumeric characters, lowercased.
///
/// Whitespace and punctuation both act as boundaries and are dropped.
pub fn tokenize(raw: &str) -> TokenSequence {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut char_count = 0;
    for ch in raw.chars() {
        if !ch.is_whitespace() {
            char_count += 1;
        }
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    TokenSequence { tokens, char_count }
}

/// Set of adjectives and adverbs counted by the modifier-diversity feature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModifierLexicon {
    words: BTreeSet<String>,
}

impl ModifierLexicon {
    /// Parses the lexicon format: one word per line, `#` lines are comments.
    pub fn parse(text: &str) -> Result<Self, FeatureError> {
        let words: BTreeSet<String> = text
            .lines()
            .map(str::trim)
            .filter(|line| !line.is_empty() && !line.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        if words.is_empty() {
            return Err(FeatureError::EmptyLexicon);
        }
        Ok(Self { words })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The lexicon shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_LEXICON).expect("bundled lexicon is non-empty")
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// The complexity vector of one prompt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityFeatures {
    pub token_count: usize,
    pub char_count: usize,
    /// Shannon entropy of the token unigram distribution, in bits.
    pub token_entropy: f64,
    pub char_ngram_perplexity: f64,
    /// Distinct lexicon tokens over token count.
    pub modifier_diversity: f64,
    pub type_token_ratio: f64,
    pub mean_token_length: f64,
}

impl ComplexityFeatures {
    /// Feature values in [`FEATURE_NAMES`] order.
    pub fn to_array(&self) -> [f64; FEATURE_DIM] {
        [
            self.token_count as f64,
            self.char_count as f64,
            self.token_entropy,
            self.char_ngram_perplexity,
            self.modifier_diversity,
            self.type_token_ratio,
            self.mean_token_length,
        ]
    }
}

fn token_histogram(seq: &TokenSequence) -> BTreeMap<&str, usize> {
    let mut counts = BTreeMap::new();
    for token in &seq.tokens {
        *counts.entry(token.as_str()).or_insert(0) += 1;
    }
    counts
}

/// Number of distinct tokens of `seq` present in the lexicon.
pub fn distinct_modifiers(seq: &TokenSequence, lexicon: &ModifierLexicon) -> usize {
    token_histogram(seq)
        .keys()
        .filter(|token| lexicon.contains(token))
        .count()
}

/// Modifier diversity without the rest of the feature vector.
pub fn modifier_diversity(seq: &TokenSequence, lexicon: &ModifierLexicon) -> f64 {
    if seq.is_empty() {
        0.0
    } else {
        distinct_modifiers(seq, lexicon) as f64 / seq.tokens.len() as f64
    }
}

pub fn complexity_features(
    seq: &TokenSequence,
    lm: &CharNgramModel,
    lexicon: &ModifierLexicon,
) -> ComplexityFeatures {
    let token_count = seq.tokens.len();
    let histogram = token_histogram(seq);

    let token_entropy = if token_count <= 1 {
        0.0
    } else {
        let n = token_count as f64;
        let h: f64 = histogram
            .values()
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.log2()
            })
            .sum();
        // a single repeated token gives exactly zero, never -0.0
        if histogram.len() == 1 {
            0.0
        } else {
            h
        }
    };

    let (type_token_ratio, mean_token_length) = if token_count == 0 {
        (0.0, 0.0)
    } else {
        let chars: usize = seq.tokens.iter().map(|t| t.chars().count()).sum();
        (
            histogram.len() as f64 / token_count as f64,
            chars as f64 / token_count as f64,
        )
    };

    ComplexityFeatures {
        token_count,
        char_count: seq.char_count,
        token_entropy,
        char_ngram_perplexity: lm.perplexity(&seq.normalized_text()),
        modifier_diversity: modifier_diversity(seq, lexicon),
        type_token_ratio,
        mean_token_length,
    }
}

/// Character LM plus lexicon: everything needed to featurize a raw prompt.
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub lm: CharNgramModel,
    pub lexicon: ModifierLexicon,
}

impl Featurizer {
    /// Trains the default character LM on `corpus` and pairs it with the
    /// bundled lexicon.
    pub fn fit<S: AsRef<str>>(corpus: &[S]) -> Result<Self, FeatureError> {
        let docs: Vec<String> = corpus
            .iter()
            .map(|text| tokenize(text.as_ref()).normalized_text())
            .collect();
        let lm = train_char_lm(&docs, DEFAULT_LM_ORDER, DEFAULT_LM_SMOOTHING)?;
        Ok(Self {
            lm,
            lexicon: ModifierLexicon::bundled(),
        })
    }

    pub fn features(&self, raw: &str) -> ComplexityFeatures {
        complexity_features(&tokenize(raw), &self.lm, &self.lexicon)
    }
}
