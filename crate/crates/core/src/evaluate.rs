//! Comparison of the adaptive selector against fixed-scale policies on
//! ground-truth quality curves.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::PromptInputs;
use crate::predictor::{predict_curve, PredictorError, PredictorModel, QualityVector};
use crate::prompts::PromptRecord;
use crate::selector::ScaleGrid;
use crate::sweep::{Dataset, SyntheticOracleParams};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("weights have {found} entries, metrics have {expected}")]
    WeightLength { expected: usize, found: usize },
    #[error("no prompt has ground truth at every grid scale")]
    NoEvaluablePrompts,
    #[error("no adaptive choice for prompt {0:?}")]
    MissingChoice(String),
    #[error("scale {scale} chosen for prompt {id:?} is not on the grid")]
    OffGrid { id: String, scale: f64 },
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("metric subset {0:?} carries no weight")]
    EmptySubset(Vec<String>),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

/// Oriented quality of generating `prompt` at `scale`, if known.
pub trait GroundTruth: Sync {
    fn quality(&self, prompt: &PromptRecord, scale: f64) -> Option<QualityVector>;
    fn metric_names(&self) -> Vec<String>;
    fn label(&self) -> &str;
}

/// Noise-free curves of the synthetic oracle.
#[derive(Debug, Clone)]
pub struct SyntheticTruth {
    pub params: SyntheticOracleParams,
    pub names: Vec<String>,
}

impl SyntheticTruth {
    pub fn new(params: SyntheticOracleParams, names: Vec<String>) -> Self {
        Self { params, names }
    }
}

impl GroundTruth for SyntheticTruth {
    fn quality(&self, prompt: &PromptRecord, scale: f64) -> Option<QualityVector> {
        Some(self.params.true_quality(&prompt.text, scale))
    }

    fn metric_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn label(&self) -> &str {
        "synthetic oracle"
    }
}

/// Aggregates of a held-out labelled sweep.
#[derive(Debug, Clone)]
pub struct LabeledTruth {
    names: Vec<String>,
    table: HashMap<(String, u64), QualityVector>,
}

impl LabeledTruth {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let table = dataset
            .records
            .iter()
            .map(|r| ((r.prompt_id.clone(), r.scale.to_bits()), r.aggregate.clone()))
            .collect();
        Self {
            names: dataset.metric_schema.names.clone(),
            table,
        }
    }
}

impl GroundTruth for LabeledTruth {
    fn quality(&self, prompt: &PromptRecord, scale: f64) -> Option<QualityVector> {
        self.table.get(&(prompt.id.clone(), scale.to_bits())).cloned()
    }

    fn metric_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn label(&self) -> &str {
        "labelled sweep"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub policy: String,
    /// The scale used for every prompt, for fixed policies.
    pub scale: Option<f64>,
    pub mean_quality: Vec<f64>,
    pub mean_utility: f64,
    pub mean_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRow {
    pub id: String,
    pub oracle_scale: f64,
    pub adaptive_scale: f64,
    pub oracle_utility: f64,
    pub adaptive_utility: f64,
    pub fixed_anchor_utility: f64,
    pub best_fixed_utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub truth: String,
    pub metric_names: Vec<String>,
    pub weights: Vec<f64>,
    pub grid: ScaleGrid,
    pub fixed_anchor_scale: f64,
    pub best_fixed_scale: f64,
    pub policies: Vec<PolicyRow>,
    pub prompts: Vec<PromptRow>,
    /// Fraction of prompts where the adaptive policy has strictly higher
    /// true utility than the fixed-anchor policy.
    pub win_rate_vs_fixed_anchor: f64,
    pub tie_rate_vs_fixed_anchor: f64,
    /// Fraction of prompts whose adaptive scale is at most one grid step
    /// from the oracle scale.
    pub within_one_step: f64,
    /// Prompts without ground truth at every grid scale.
    pub skipped: Vec<String>,
}

impl EvaluationSummary {
    pub fn policy(&self, name: &str) -> Option<&PolicyRow> {
        self.policies.iter().find(|p| p.policy == name)
    }
}

pub const NO_GUIDANCE: &str = "no_guidance";
pub const FIXED_ANCHOR: &str = "fixed_anchor";
pub const BEST_FIXED: &str = "best_fixed";
pub const ADAPTIVE: &str = "adaptive";
pub const ORACLE: &str = "oracle";

fn weighted(w: &[f64], q: &QualityVector) -> f64 {
    w.iter().zip(q.as_slice()).map(|(w, q)| w * q).sum()
}

/// Grid index maximising `values`, earliest on ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

struct Curves {
    prompt: PromptRecord,
    quality: Vec<QualityVector>,
    utility: Vec<f64>,
}

fn true_curves(
    prompts: &[PromptRecord],
    truth: &dyn GroundTruth,
    grid: &ScaleGrid,
    weights: &[f64],
) -> (Vec<Curves>, Vec<String>) {
    let mut curves = Vec::new();
    let mut skipped = Vec::new();
    for p in prompts {
        let quality: Option<Vec<QualityVector>> = grid.scales().iter().map(|&s| truth.quality(p, s)).collect();
        match quality {
            Some(quality) => {
                let utility = quality.iter().map(|q| weighted(weights, q)).collect();
                curves.push(Curves {
                    prompt: p.clone(),
                    quality,
                    utility,
                });
            }
            None => skipped.push(p.id.clone()),
        }
    }
    (curves, skipped)
}

fn grid_index(grid: &ScaleGrid, id: &str, scale: f64) -> Result<usize, EvalError> {
    grid.position(scale).ok_or_else(|| EvalError::OffGrid { id: id.to_string(), scale })
}

fn check_weights(truth: &dyn GroundTruth, weights: &[f64]) -> Result<(), EvalError> {
    let expected = truth.metric_names().len();
    if weights.len() != expected {
        return Err(EvalError::WeightLength {
            expected,
            found: weights.len(),
        });
    }
    Ok(())
}

/// Scores every policy on the true curves with unregularised utility
/// `wᵀq`. Fixed scales off the grid are snapped to the nearest grid point.
pub fn evaluate(
    prompts: &[PromptRecord],
    adaptive: &BTreeMap<String, f64>,
    truth: &dyn GroundTruth,
    grid: &ScaleGrid,
    weights: &[f64],
    anchor: f64,
) -> Result<EvaluationSummary, EvalError> {
    check_weights(truth, weights)?;
    let (curves, skipped) = true_curves(prompts, truth, grid, weights);
    if curves.is_empty() {
        return Err(EvalError::NoEvaluablePrompts);
    }
    let n = curves.len() as f64;
    let k = grid.len();

    let mut adaptive_idx = Vec::with_capacity(curves.len());
    for c in &curves {
        let s = *adaptive
            .get(&c.prompt.id)
            .ok_or_else(|| EvalError::MissingChoice(c.prompt.id.clone()))?;
        adaptive_idx.push(grid_index(grid, &c.prompt.id, s)?);
    }
    let oracle_idx: Vec<usize> = curves.iter().map(|c| argmax(&c.utility)).collect();
    let mean_at: Vec<f64> = (0..k).map(|i| curves.iter().map(|c| c.utility[i]).sum::<f64>() / n).collect();
    let best_fixed = argmax(&mean_at);
    let anchor_idx = grid_index(grid, "", grid.nearest(anchor)).expect("nearest is on the grid");
    let no_guidance_idx = grid_index(grid, "", grid.nearest(1.0)).expect("nearest is on the grid");

    let row = |name: &str, scale: Option<f64>, pick: &dyn Fn(usize) -> usize| {
        let d = weights.len();
        let mut quality = vec![0.0; d];
        let mut utility = 0.0;
        let mut regret = 0.0;
        for (ci, c) in curves.iter().enumerate() {
            let i = pick(ci);
            for (m, q) in c.quality[i].as_slice().iter().enumerate() {
                quality[m] += q / n;
            }
            utility += c.utility[i] / n;
            regret += (c.utility[oracle_idx[ci]] - c.utility[i]) / n;
        }
        PolicyRow {
            policy: name.to_string(),
            scale,
            mean_quality: quality,
            mean_utility: utility,
            mean_regret: regret,
        }
    };
    let scale_of = |i: usize| grid.scales()[i];
    let policies = vec![
        row(NO_GUIDANCE, Some(scale_of(no_guidance_idx)), &|_| no_guidance_idx),
        row(FIXED_ANCHOR, Some(scale_of(anchor_idx)), &|_| anchor_idx),
        row(BEST_FIXED, Some(scale_of(best_fixed)), &|_| best_fixed),
        row(ADAPTIVE, None, &|ci| adaptive_idx[ci]),
        row(ORACLE, None, &|ci| oracle_idx[ci]),
    ];

    let mut wins = 0usize;
    let mut ties = 0usize;
    let mut near = 0usize;
    let rows: Vec<PromptRow> = curves
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let a = c.utility[adaptive_idx[ci]];
            let f = c.utility[anchor_idx];
            if a > f {
                wins += 1;
            } else if a == f {
                ties += 1;
            }
            if adaptive_idx[ci].abs_diff(oracle_idx[ci]) <= 1 {
                near += 1;
            }
            PromptRow {
                id: c.prompt.id.clone(),
                oracle_scale: scale_of(oracle_idx[ci]),
                adaptive_scale: scale_of(adaptive_idx[ci]),
                oracle_utility: c.utility[oracle_idx[ci]],
                adaptive_utility: a,
                fixed_anchor_utility: f,
                best_fixed_utility: c.utility[best_fixed],
            }
        })
        .collect();

    Ok(EvaluationSummary {
        truth: truth.label().to_string(),
        metric_names: truth.metric_names(),
        weights: weights.to_vec(),
        grid: grid.clone(),
        fixed_anchor_scale: scale_of(anchor_idx),
        best_fixed_scale: scale_of(best_fixed),
        policies,
        prompts: rows,
        win_rate_vs_fixed_anchor: wins as f64 / n,
        tie_rate_vs_fixed_anchor: ties as f64 / n,
        within_one_step: near as f64 / n,
        skipped,
    })
}

/// Mean unregularised regret of `choices` under `weights`, over the prompts
/// that have full ground truth.
pub fn mean_regret(
    prompts: &[PromptRecord],
    choices: &BTreeMap<String, f64>,
    truth: &dyn GroundTruth,
    grid: &ScaleGrid,
    weights: &[f64],
) -> Result<f64, EvalError> {
    check_weights(truth, weights)?;
    let (curves, _) = true_curves(prompts, truth, grid, weights);
    if curves.is_empty() {
        return Err(EvalError::NoEvaluablePrompts);
    }
    let mut total = 0.0;
    for c in &curves {
        let s = *choices
            .get(&c.prompt.id)
            .ok_or_else(|| EvalError::MissingChoice(c.prompt.id.clone()))?;
        let i = grid_index(grid, &c.prompt.id, s)?;
        total += c.utility[argmax(&c.utility)] - c.utility[i];
    }
    Ok(total / curves.len() as f64)
}

/// Coefficient of determination of the predicted curves against the true
/// curves, per metric, pooled over prompts and grid scales.
pub fn curve_r2(
    model: &PredictorModel,
    prompts: &[PromptRecord],
    inputs: &BTreeMap<String, PromptInputs>,
    truth: &dyn GroundTruth,
    grid: &ScaleGrid,
) -> Result<Vec<f64>, EvalError> {
    let d = model.d_q();
    let mut pairs: Vec<Vec<(f64, f64)>> = vec![Vec::new(); d];
    for p in prompts {
        let Some(inp) = inputs.get(&p.id) else { continue };
        let predicted = predict_curve(model, &inp.embedding, &inp.features, grid.scales())?;
        for (s, pred) in grid.scales().iter().zip(&predicted) {
            let Some(actual) = truth.quality(p, *s) else { continue };
            for (m, pair) in pairs.iter_mut().enumerate() {
                pair.push((pred.as_slice()[m], actual.as_slice()[m]));
            }
        }
    }
    Ok(pairs
        .iter()
        .map(|v| {
            let mean = v.iter().map(|(_, y)| y).sum::<f64>() / v.len() as f64;
            let ss_tot: f64 = v.iter().map(|(_, y)| (y - mean).powi(2)).sum();
            let ss_res: f64 = v.iter().map(|(f, y)| (y - f).powi(2)).sum();
            if ss_tot > 0.0 {
                1.0 - ss_res / ss_tot
            } else {
                f64::NAN
            }
        })
        .collect())
}

/// Plain-text table: one row per policy, one column per metric plus mean
/// utility and regret.
pub fn render_table(summary: &EvaluationSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Policy comparison on {} prompts ({}; utility uses weights {:?}, no regularisation)",
        summary.prompts.len(),
        summary.truth,
        summary.weights
    );
    let mut header = format!("{:<14} {:>6}", "policy", "scale");
    for name in &summary.metric_names {
        let _ = write!(header, " {:>13}", truncate(name, 13));
    }
    let _ = write!(header, " {:>10} {:>10}", "utility", "regret");
    let _ = writeln!(out, "{header}");
    let _ = writeln!(out, "{}", "-".repeat(header.len()));
    for row in &summary.policies {
        let scale = row.scale.map_or_else(|| "-".to_string(), |s| format!("{s}"));
        let _ = write!(out, "{:<14} {:>6}", row.policy, scale);
        for q in &row.mean_quality {
            let _ = write!(out, " {:>13.4}", q);
        }
        let _ = writeln!(out, " {:>10.4} {:>10.4}", row.mean_utility, row.mean_regret);
    }
    let _ = writeln!(
        out,
        "adaptive vs fixed anchor: {:.1}% wins, {:.1}% ties; within one grid step of oracle: {:.1}%",
        100.0 * summary.win_rate_vs_fixed_anchor,
        100.0 * summary.tie_rate_vs_fixed_anchor,
        100.0 * summary.within_one_step
    );
    if !summary.skipped.is_empty() {
        let _ = writeln!(out, "skipped {} prompts without full ground truth", summary.skipped.len());
    }
    out
}

/// Weights restricted to `subset`, rescaled to keep the total weight of
/// `weights`.
pub fn subset_weights(weights: &[f64], names: &[String], subset: &[String]) -> Result<Vec<f64>, EvalError> {
    if weights.len() != names.len() {
        return Err(EvalError::WeightLength {
            expected: names.len(),
            found: weights.len(),
        });
    }
    for m in subset {
        if !names.contains(m) {
            return Err(EvalError::UnknownMetric(m.clone()));
        }
    }
    let masked: Vec<f64> = names
        .iter()
        .zip(weights)
        .map(|(n, w)| if subset.contains(n) { *w } else { 0.0 })
        .collect();
    let kept: f64 = masked.iter().sum();
    if kept <= 0.0 {
        return Err(EvalError::EmptySubset(subset.to_vec()));
    }
    let total: f64 = weights.iter().sum();
    Ok(masked.iter().map(|w| w * total / kept).collect())
}

/// Regret, under the full utility, of selecting with a utility restricted
/// to a metric subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub metrics: Vec<String>,
    pub weights: Vec<f64>,
    pub mean_regret: f64,
    pub full_mean_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricFit {
    pub metric: String,
    /// `None` when the true values are constant.
    pub r2: Option<f64>,
}

pub const EVALUATION_SCHEMA: &str = "evaluation.v1";

/// Everything the evaluate command produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema: String,
    pub summary: EvaluationSummary,
    pub curve_fit: Vec<MetricFit>,
    pub ablations: Vec<AblationRow>,
}

impl EvaluationReport {
    pub fn new(summary: EvaluationSummary, r2: &[f64], ablations: Vec<AblationRow>) -> Self {
        let curve_fit = summary
            .metric_names
            .iter()
            .zip(r2)
            .map(|(m, r)| MetricFit {
                metric: m.clone(),
                r2: r.is_finite().then_some(*r),
            })
            .collect();
        Self {
            schema: EVALUATION_SCHEMA.into(),
            summary,
            curve_fit,
            ablations,
        }
    }

    pub fn render(&self) -> String {
        let mut out = render_table(&self.summary);
        if !self.curve_fit.is_empty() {
            let fits: Vec<String> = self
                .curve_fit
                .iter()
                .map(|f| match f.r2 {
                    Some(r) => format!("{} {:.4}", f.metric, r),
                    None => format!("{} n/a", f.metric),
                })
                .collect();
            let _ = writeln!(out, "predicted vs true curves, R^2: {}", fits.join(", "));
        }
        for a in &self.ablations {
            let _ = writeln!(
                out,
                "ablation [{}]: mean regret {:.4} vs {:.4} with every metric",
                a.metrics.join(", "),
                a.mean_regret,
                a.full_mean_regret
            );
        }
        out
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::synthetic_pool;
    use crate::sweep::SweepRecord;

    fn names() -> Vec<String> {
        SyntheticOracleParams::image_schema().names
    }

    fn truth() -> SyntheticTruth {
        SyntheticTruth::new(SyntheticOracleParams::image_default(0.0), names())
    }

    fn oracle_choices(prompts: &[PromptRecord], t: &SyntheticTruth, grid: &ScaleGrid) -> BTreeMap<String, f64> {
        prompts.iter().map(|p| (p.id.clone(), grid.nearest(t.params.optimum(&p.text)))).collect()
    }

    #[test]
    fn oracle_choices_have_zero_regret() {
        let prompts = synthetic_pool(50, 1, "p");
        let t = truth();
        let grid = ScaleGrid::image_default();
        let choices = oracle_choices(&prompts, &t, &grid);
        let s = evaluate(&prompts, &choices, &t, &grid, &[0.25; 4], 5.0).unwrap();
        let adaptive = s.policy(ADAPTIVE).unwrap();
        assert!(adaptive.mean_regret.abs() < 1e-12);
        assert_eq!(s.policy(ORACLE).unwrap().mean_regret, 0.0);
        assert_eq!(s.within_one_step, 1.0);
        for row in &s.prompts {
            assert_eq!(row.oracle_scale, row.adaptive_scale);
        }
        let best = s.policy(BEST_FIXED).unwrap();
        for r in &s.policies {
            assert!(r.mean_regret >= -1e-12);
            if r.scale.is_some() {
                assert!(best.mean_regret <= r.mean_regret + 1e-12);
            }
        }
    }

    #[test]
    fn fixed_choices_reproduce_fixed_rows() {
        let prompts = synthetic_pool(30, 2, "p");
        let t = truth();
        let grid = ScaleGrid::image_default();
        let choices: BTreeMap<_, _> = prompts.iter().map(|p| (p.id.clone(), 5.0)).collect();
        let s = evaluate(&prompts, &choices, &t, &grid, &[0.25; 4], 5.0).unwrap();
        assert_eq!(s.policy(ADAPTIVE).unwrap().mean_utility, s.policy(FIXED_ANCHOR).unwrap().mean_utility);
        assert_eq!(s.win_rate_vs_fixed_anchor, 0.0);
        assert_eq!(s.tie_rate_vs_fixed_anchor, 1.0);
    }

    #[test]
    fn regret_matches_hand_computation() {
        let grid = ScaleGrid::new(vec![1.0, 2.0, 3.0]).unwrap();
        let p = PromptRecord::new("a", "x");
        let schema = SyntheticOracleParams::image_schema();
        let dataset = Dataset {
            metric_schema: schema.clone(),
            n_g: 1,
            records: [(1.0, [0.0, 1.0, 0.0, 0.0]), (2.0, [0.0, 3.0, 0.0, 0.0]), (3.0, [0.0, 2.0, 0.0, 0.0])]
                .iter()
                .map(|(s, q)| SweepRecord::new("a", *s, vec![schema.orient(q)], &schema, serde_json::Value::Null))
                .collect(),
        };
        let t = LabeledTruth::from_dataset(&dataset);
        let choices = BTreeMap::from([("a".to_string(), 3.0)]);
        let w = [0.0, 1.0, 0.0, 0.0];
        let r = mean_regret(std::slice::from_ref(&p), &choices, &t, &grid, &w).unwrap();
        assert_eq!(r, 1.0);
        let s = evaluate(&[p], &choices, &t, &grid, &w, 1.0).unwrap();
        assert_eq!(s.policy(NO_GUIDANCE).unwrap().mean_regret, 2.0);
        assert_eq!(s.policy(BEST_FIXED).unwrap().scale, Some(2.0));
        assert_eq!(s.win_rate_vs_fixed_anchor, 1.0);
        assert_eq!(s.within_one_step, 1.0);
    }

    #[test]
    fn prompts_without_full_truth_are_skipped() {
        let grid = ScaleGrid::new(vec![1.0, 2.0]).unwrap();
        let schema = SyntheticOracleParams::image_schema();
        let dataset = Dataset {
            metric_schema: schema.clone(),
            n_g: 1,
            records: vec![
                SweepRecord::new("a", 1.0, vec![vec![0.0; 4]], &schema, serde_json::Value::Null),
                SweepRecord::new("a", 2.0, vec![vec![0.0; 4]], &schema, serde_json::Value::Null),
                SweepRecord::new("b", 1.0, vec![vec![0.0; 4]], &schema, serde_json::Value::Null),
            ],
        };
        let t = LabeledTruth::from_dataset(&dataset);
        let prompts = [PromptRecord::new("a", "x"), PromptRecord::new("b", "y")];
        let choices = BTreeMap::from([("a".to_string(), 1.0)]);
        let s = evaluate(&prompts, &choices, &t, &grid, &[0.25; 4], 1.0).unwrap();
        assert_eq!(s.skipped, vec!["b".to_string()]);
        assert_eq!(s.prompts.len(), 1);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let prompts = synthetic_pool(3, 3, "p");
        let t = truth();
        let grid = ScaleGrid::image_default();
        let mut choices = oracle_choices(&prompts, &t, &grid);
        assert!(matches!(
            evaluate(&prompts, &choices, &t, &grid, &[1.0], 5.0),
            Err(EvalError::WeightLength { .. })
        ));
        choices.insert(prompts[0].id.clone(), 5.25);
        assert!(matches!(
            evaluate(&prompts, &choices, &t, &grid, &[0.25; 4], 5.0),
            Err(EvalError::OffGrid { .. })
        ));
        choices.remove(&prompts[0].id);
        assert!(matches!(
            evaluate(&prompts, &choices, &t, &grid, &[0.25; 4], 5.0),
            Err(EvalError::MissingChoice(_))
        ));
        assert!(matches!(
            evaluate(&[], &choices, &t, &grid, &[0.25; 4], 5.0),
            Err(EvalError::NoEvaluablePrompts)
        ));
    }

    #[test]
    fn subset_weights_keep_total_weight() {
        let n = names();
        let w = subset_weights(&[0.25; 4], &n, &n[..2]).unwrap();
        assert_eq!(w, vec![0.5, 0.5, 0.0, 0.0]);
        assert!(matches!(
            subset_weights(&[0.25; 4], &n, &["fid".to_string()]),
            Err(EvalError::UnknownMetric(_))
        ));
        assert!(matches!(
            subset_weights(&[0.0, 0.0, 0.5, 0.5], &n, &n[..2]),
            Err(EvalError::EmptySubset(_))
        ));
    }

    #[test]
    fn report_round_trips_and_renders() {
        let prompts = synthetic_pool(5, 4, "p");
        let t = truth();
        let grid = ScaleGrid::image_default();
        let s = evaluate(&prompts, &oracle_choices(&prompts, &t, &grid), &t, &grid, &[0.25; 4], 5.0).unwrap();
        let ablation = AblationRow {
            metrics: names()[..2].to_vec(),
            weights: vec![0.5, 0.5, 0.0, 0.0],
            mean_regret: 0.2,
            full_mean_regret: 0.1,
        };
        let report = EvaluationReport::new(s, &[0.99, f64::NAN, 0.5, 0.7], vec![ablation]);
        assert_eq!(report.curve_fit[1].r2, None);
        let json = serde_json::to_string(&report).unwrap();
        assert_eq!(serde_json::from_str::<EvaluationReport>(&json).unwrap(), report);
        let text = report.render();
        assert!(text.contains("R^2"));
        assert!(text.contains("ablation [kid, clip]"));
    }

    #[test]
    fn table_lists_every_policy() {
        let prompts = synthetic_pool(10, 4, "p");
        let t = truth();
        let grid = ScaleGrid::image_default();
        let s = evaluate(&prompts, &oracle_choices(&prompts, &t, &grid), &t, &grid, &[0.25; 4], 5.0).unwrap();
        let table = render_table(&s);
        for name in [NO_GUIDANCE, FIXED_ANCHOR, BEST_FIXED, ADAPTIVE, ORACLE] {
            assert!(table.contains(name));
        }
        for m in names() {
            assert!(table.contains(&m));
        }
    }
}
