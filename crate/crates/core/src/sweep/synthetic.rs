//! In-process stand-in for a generator plus scorers.
//!
//! Every metric follows a concave quadratic in the guidance scale whose peak
//! sits at a prompt-dependent optimum `ω*(p)`, so the best scale of any
//! prompt is known in closed form.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{sample_seed, SweepError};
use crate::predictor::{MetricSchema, QualityVector};
use crate::prompts::PromptRecord;
use crate::text_features::{modifier_diversity, tokenize, ModifierLexicon};

fn lexicon() -> &'static ModifierLexicon {
    static LEXICON: OnceLock<ModifierLexicon> = OnceLock::new();
    LEXICON.get_or_init(ModifierLexicon::bundled)
}

/// Maps a prompt to `κ(p) ∈ [0, 1]`:
///
/// `κ = clamp(length_weight · min((n − 1) / (length_saturation − 1), 1)
///            + modifier_weight · modifier_diversity, 0, 1)`
///
/// where `n` is the token count. Non-decreasing in both the token count and
/// the modifier diversity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityMap {
    pub length_weight: f64,
    pub modifier_weight: f64,
    pub length_saturation: usize,
}

impl Default for ComplexityMap {
    fn default() -> Self {
        Self {
            length_weight: 0.8,
            modifier_weight: 0.2,
            length_saturation: 25,
        }
    }
}

impl ComplexityMap {
    pub fn kappa(&self, text: &str) -> f64 {
        let seq = tokenize(text);
        let n = seq.tokens.len();
        let length = if n == 0 {
            0.0
        } else {
            ((n - 1) as f64 / (self.length_saturation - 1) as f64).min(1.0)
        };
        let diversity = modifier_diversity(&seq, lexicon());
        (self.length_weight * length + self.modifier_weight * diversity).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOracleParams {
    pub omega_min: f64,
    pub omega_max: f64,
    /// `A_m`, oriented value at the peak.
    pub peak_heights: Vec<f64>,
    /// `B_m > 0`
    pub curvatures: Vec<f64>,
    /// Shift of each metric's peak away from `ω*(p)`. All zero by default.
    #[serde(default)]
    pub peak_offsets: Vec<f64>,
    pub noise_std: f64,
    #[serde(default)]
    pub complexity_map: ComplexityMap,
}

impl SyntheticOracleParams {
    /// Four metrics (`kid`, `clip`, `image_reward`, `precision`), optima
    /// spread over `[2, 10]`.
    pub fn image_default(noise_std: f64) -> Self {
        Self {
            omega_min: 2.0,
            omega_max: 10.0,
            peak_heights: vec![0.0, 1.0, 0.5, 0.8],
            curvatures: vec![0.5, 0.4, 0.6, 0.5],
            peak_offsets: vec![0.0; 4],
            noise_std,
            complexity_map: ComplexityMap::default(),
        }
    }

    /// Metric schema matching [`SyntheticOracleParams::image_default`].
    pub fn image_schema() -> MetricSchema {
        use crate::predictor::Direction::*;
        MetricSchema::new([
            ("kid", LowerBetter),
            ("clip", HigherBetter),
            ("image_reward", HigherBetter),
            ("precision", HigherBetter),
        ])
        .expect("static schema")
    }

    pub fn d_q(&self) -> usize {
        self.peak_heights.len()
    }

    fn offset(&self, m: usize) -> f64 {
        self.peak_offsets.get(m).copied().unwrap_or(0.0)
    }

    pub fn validate(&self, schema: &MetricSchema) -> Result<(), SweepError> {
        let invalid = |msg: String| Err(SweepError::InvalidPlan(msg));
        if !(self.omega_min.is_finite() && self.omega_max.is_finite() && self.omega_min <= self.omega_max) {
            return invalid(format!("optimum range [{}, {}] is invalid", self.omega_min, self.omega_max));
        }
        let d_q = self.d_q();
        if d_q != schema.len() || self.curvatures.len() != d_q {
            return invalid(format!(
                "oracle has {} peak heights and {} curvatures for {} metrics",
                d_q,
                self.curvatures.len(),
                schema.len()
            ));
        }
        if !self.peak_offsets.is_empty() && self.peak_offsets.len() != d_q {
            return invalid(format!("{} peak offsets for {d_q} metrics", self.peak_offsets.len()));
        }
        if !self.peak_heights.iter().chain(&self.peak_offsets).all(|v| v.is_finite())
            || !self.curvatures.iter().all(|b| b.is_finite() && *b > 0.0)
        {
            return invalid("curve constants must be finite with positive curvature".into());
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return invalid(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        let cm = &self.complexity_map;
        if cm.length_saturation < 2 || !(cm.length_weight >= 0.0 && cm.modifier_weight >= 0.0) {
            return invalid("complexity map needs length_saturation >= 2 and non-negative weights".into());
        }
        Ok(())
    }

    /// `ω*(p) = omega_min + κ(p)·(omega_max − omega_min)`
    pub fn optimum(&self, text: &str) -> f64 {
        self.omega_min + self.complexity_map.kappa(text) * (self.omega_max - self.omega_min)
    }

    /// Noise-free oriented quality `A_m − B_m(ω − ω*(p) − o_m)²`.
    pub fn true_quality(&self, text: &str, scale: f64) -> QualityVector {
        self.curve_at(self.optimum(text), scale)
    }

    fn curve_at(&self, optimum: f64, scale: f64) -> QualityVector {
        QualityVector(
            (0..self.d_q())
                .map(|m| {
                    let d = scale - optimum - self.offset(m);
                    self.peak_heights[m] - self.curvatures[m] * d * d
                })
                .collect(),
        )
    }
}

/// Raw scores of sample `j` of `(prompt, scale)`: the oriented curve plus
/// seeded Gaussian noise, flipped back to each metric's native direction.
pub fn synthetic_generate_score(
    params: &SyntheticOracleParams,
    schema: &MetricSchema,
    prompt: &PromptRecord,
    scale: f64,
    sample_index: usize,
    seed_base: u64,
) -> Vec<f64> {
    let seed = sample_seed(seed_base, &prompt.id, scale, sample_index);
    sample_from_curve(params, schema, &params.true_quality(&prompt.text, scale), seed)
}

fn sample_from_curve(params: &SyntheticOracleParams, schema: &MetricSchema, curve: &QualityVector, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.noise_std).expect("validated noise_std");
    let oriented: Vec<f64> = curve
        .0
        .iter()
        .map(|v| if params.noise_std > 0.0 { v + noise.sample(&mut rng) } else { *v })
        .collect();
    schema.orient(&oriented)
}

/// Scores all `seeds.len()` samples of one pair; the curve is evaluated once.
pub(crate) fn synthetic_pair(
    params: &SyntheticOracleParams,
    schema: &MetricSchema,
    prompt: &PromptRecord,
    scale: f64,
    seeds: &[u64],
) -> Vec<Vec<f64>> {
    let curve = params.true_quality(&prompt.text, scale);
    seeds.iter().map(|&s| sample_from_curve(params, schema, &curve, s)).collect()
}
