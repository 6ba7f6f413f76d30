//! Utility-maximising guidance scale selection, plus the guidance arithmetic
//! it is built around.
//!
//! For every scale `ω` of a grid the predictor's quality vector is scored as
//! `wᵀq̂(ω) − α(ω − μ)²` and the best scale wins; ties go to the smallest
//! scale.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::SemanticEmbedding;
use crate::predictor::{predict_curve, PredictorError, PredictorModel, QualityVector};
use crate::text_features::ComplexityFeatures;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const IMAGE_DEFAULT_ANCHOR: f64 = 5.0;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid scale grid: {0}")]
    InvalidGrid(String),
    #[error("invalid utility configuration: {0}")]
    InvalidConfig(String),
    #[error("distributions have different supports ({0} vs {1} outcomes)")]
    SupportMismatch(usize, usize),
    #[error("marginal probability is zero at outcome {0} where the conditional is positive")]
    DivisionByZero(usize),
    #[error("not a probability vector: {0}")]
    InvalidDistribution(String),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

/// Candidate guidance scales, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScaleGrid {
    scales: Vec<f64>,
}

impl TryFrom<Vec<f64>> for ScaleGrid {
    type Error = SelectError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ScaleGrid> for Vec<f64> {
    fn from(g: ScaleGrid) -> Self {
        g.scales
    }
}

impl ScaleGrid {
    /// Sorts `scales` and validates them: non-empty, finite, positive,
    /// without duplicates.
    pub fn new(mut scales: Vec<f64>) -> Result<Self, SelectError> {
        if scales.is_empty() {
            return Err(SelectError::InvalidGrid("grid is empty".into()));
        }
        if let Some(bad) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(SelectError::InvalidGrid(format!("scale {bad} is not a positive finite number")));
        }
        scales.sort_by(f64::total_cmp);
        if let Some(w) = scales.windows(2).find(|w| w[0] == w[1]) {
            return Err(SelectError::InvalidGrid(format!("duplicate scale {}", w[0])));
        }
        Ok(Self { scales })
    }

    /// `{1, 2, …, 12}`
    pub fn image_default() -> Self {
        Self::new((1..=12).map(f64::from).collect()).unwrap()
    }

    /// `{1.0, 1.5, …, 6.0}`
    pub fn audio_default() -> Self {
        Self::new((2..=12).map(|i| i as f64 * 0.5).collect()).unwrap()
    }

    /// Parses a comma-separated list such as `1,2.5,4`.
    pub fn parse(list: &str) -> Result<Self, SelectError> {
        let scales = list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| SelectError::InvalidGrid(format!("{s:?}: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(scales)
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    /// Grid point closest to `x`; the smaller point wins an exact tie.
    pub fn nearest(&self, x: f64) -> f64 {
        let mut best = self.scales[0];
        for &s in &self.scales[1..] {
            if (s - x).abs() < (best - x).abs() {
                best = s;
            }
        }
        best
    }

    pub fn position(&self, scale: f64) -> Option<usize> {
        self.scales.iter().position(|&s| s == scale)
    }
}

/// Weights, penalty strength and anchor of the selection utility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityConfig {
    pub weights: Vec<f64>,
    pub alpha: f64,
    pub anchor: f64,
}

impl UtilityConfig {
    pub fn new(weights: Vec<f64>, alpha: f64, anchor: f64) -> Result<Self, SelectError> {
        let cfg = Self { weights, alpha, anchor };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Equal weight `1/d_q` on every metric.
    pub fn uniform(d_q: usize, alpha: f64, anchor: f64) -> Result<Self, SelectError> {
        if d_q == 0 {
            return Err(SelectError::InvalidConfig("no metrics".into()));
        }
        Self::new(vec![1.0 / d_q as f64; d_q], alpha, anchor)
    }

    pub fn validate(&self) -> Result<(), SelectError> {
        if self.weights.is_empty() || self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(SelectError::InvalidConfig("weights must be finite and non-negative".into()));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(SelectError::InvalidConfig(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.anchor.is_finite() && self.anchor > 0.0) {
            return Err(SelectError::InvalidConfig(format!("anchor must be > 0, got {}", self.anchor)));
        }
        Ok(())
    }

    /// Same weights and anchor with a different penalty strength.
    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self { alpha, ..self.clone() }
    }
}

/// `wᵀq̂ − α(ω − μ)²`
pub fn utility(q_hat: &QualityVector, scale: f64, cfg: &UtilityConfig) -> Result<f64, SelectError> {
    if q_hat.len() != cfg.weights.len() {
        return Err(SelectError::DimensionMismatch {
            expected: cfg.weights.len(),
            found: q_hat.len(),
        });
    }
    let gain: f64 = cfg.weights.iter().zip(q_hat.as_slice()).map(|(w, q)| w * q).sum();
    let offset = scale - cfg.anchor;
    Ok(gain - cfg.alpha * offset * offset)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleUtility {
    pub scale: f64,
    pub utility: f64,
    pub q_hat: QualityVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub chosen_scale: f64,
    /// One entry per grid point, in grid order.
    pub utilities: Vec<ScaleUtility>,
    /// Whether another grid point reached exactly the same utility.
    pub tie_broken: bool,
}

/// Picks the argmax of the utility over an already evaluated quality curve,
/// `curve[i]` belonging to `grid.scales()[i]`.
pub fn select_from_curve(
    grid: &ScaleGrid,
    cfg: &UtilityConfig,
    curve: Vec<QualityVector>,
) -> Result<SelectionResult, SelectError> {
    if curve.len() != grid.len() {
        return Err(SelectError::DimensionMismatch {
            expected: grid.len(),
            found: curve.len(),
        });
    }
    let utilities = grid
        .scales()
        .iter()
        .zip(curve)
        .map(|(&scale, q_hat)| {
            Ok(ScaleUtility {
                scale,
                utility: utility(&q_hat, scale, cfg)?,
                q_hat,
            })
        })
        .collect::<Result<Vec<_>, SelectError>>()?;

    let mut best = 0;
    for (i, u) in utilities.iter().enumerate().skip(1) {
        if u.utility > utilities[best].utility {
            best = i;
        }
    }
    let best_u = utilities[best].utility;
    let tie_broken = utilities.iter().filter(|u| u.utility == best_u).count() > 1;
    Ok(SelectionResult {
        chosen_scale: utilities[best].scale,
        utilities,
        tie_broken,
    })
}

/// Evaluates the predictor at every grid scale and returns the utility argmax.
pub fn select_scale(
    model: &PredictorModel,
    embedding: &SemanticEmbedding,
    feats: &ComplexityFeatures,
    grid: &ScaleGrid,
    cfg: &UtilityConfig,
) -> Result<SelectionResult, SelectError> {
    if cfg.weights.len() != model.d_q() {
        return Err(SelectError::DimensionMismatch {
            expected: model.d_q(),
            found: cfg.weights.len(),
        });
    }
    let curve = predict_curve(model, embedding, feats, grid.scales())?;
    select_from_curve(grid, cfg, curve)
}

/// One line of the selection report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReportLine {
    pub id: String,
    pub chosen_scale: f64,
    pub utilities: Vec<ScaleUtility>,
    pub tie_broken: bool,
}

impl SelectionReportLine {
    pub fn new(id: impl Into<String>, result: SelectionResult) -> Self {
        Self {
            id: id.into(),
            chosen_scale: result.chosen_scale,
            utilities: result.utilities,
            tie_broken: result.tie_broken,
        }
    }
}

pub fn write_selection_report(lines: &[SelectionReportLine], mut w: impl Write) -> std::io::Result<()> {
    for line in lines {
        serde_json::to_writer(&mut w, line)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Conditional and unconditional noise estimates of one denoising step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePrediction {
    cond: Vec<f64>,
    uncond: Vec<f64>,
}

impl NoisePrediction {
    pub fn new(cond: Vec<f64>, uncond: Vec<f64>) -> Result<Self, SelectError> {
        if cond.len() != uncond.len() {
            return Err(SelectError::DimensionMismatch {
                expected: cond.len(),
                found: uncond.len(),
            });
        }
        if !cond.iter().chain(&uncond).all(|v| v.is_finite()) {
            return Err(SelectError::InvalidConfig("noise predictions must be finite".into()));
        }
        Ok(Self { cond, uncond })
    }

    pub fn cond(&self) -> &[f64] {
        &self.cond
    }

    pub fn uncond(&self) -> &[f64] {
        &self.uncond
    }
}

/// Classifier-free guidance: `(1 − ω)·uncond + ω·cond`, elementwise.
pub fn cfg_combine(np: &NoisePrediction, scale: f64) -> Vec<f64> {
    np.uncond
        .iter()
        .zip(&np.cond)
        .map(|(u, c)| (1.0 - scale) * u + scale * c)
        .collect()
}

fn check_distribution(p: &[f64], name: &str) -> Result<(), SelectError> {
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(SelectError::InvalidDistribution(format!("{name} has a negative or non-finite entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(SelectError::InvalidDistribution(format!("{name} sums to {sum}")));
    }
    Ok(())
}

/// Reweights a discrete conditional distribution by `(p_cond / p_marg)^s`
/// and renormalizes.
///
/// Computed in log space so large `s` does not overflow. `s = 0` returns
/// `p_cond` unchanged.
pub fn tilt_distribution(p_cond: &[f64], p_marg: &[f64], s: f64) -> Result<Vec<f64>, SelectError> {
    if p_cond.len() != p_marg.len() {
        return Err(SelectError::SupportMismatch(p_cond.len(), p_marg.len()));
    }
    if !(s.is_finite() && s >= 0.0) {
        return Err(SelectError::InvalidConfig(format!("tilt exponent must be >= 0, got {s}")));
    }
    check_distribution(p_cond, "p_cond")?;
    check_distribution(p_marg, "p_marg")?;
    if let Some(i) = p_cond.iter().zip(p_marg).position(|(c, m)| *c > 0.0 && *m == 0.0) {
        return Err(SelectError::DivisionByZero(i));
    }
    if s == 0.0 {
        return Ok(p_cond.to_vec());
    }
    let logw: Vec<f64> = p_cond
        .iter()
        .zip(p_marg)
        .map(|(&c, &m)| {
            if c > 0.0 {
                (1.0 + s) * c.ln() - s * m.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}
