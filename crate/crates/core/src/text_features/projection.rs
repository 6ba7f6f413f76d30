use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ComplexityFeatures, FeatureError, FEATURE_DIM, FEATURE_NAMES};

/// Floor applied to per-feature standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Frozen z-score statistics for the complexity features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalization {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl FeatureNormalization {
    pub fn identity() -> Self {
        Self {
            names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            means: vec![0.0; FEATURE_DIM],
            stds: vec![1.0; FEATURE_DIM],
        }
    }

    /// Population mean and standard deviation over `pool`.
    pub fn fit<'a>(pool: impl IntoIterator<Item = &'a ComplexityFeatures>) -> Self {
        let rows: Vec<[f64; FEATURE_DIM]> = pool.into_iter().map(|f| f.to_array()).collect();
        let mut norm = Self::identity();
        if rows.is_empty() {
            return norm;
        }
        let n = rows.len() as f64;
        for d in 0..FEATURE_DIM {
            // shifted by the first row so a constant column gets its exact value as mean
            let shift = rows[0][d];
            let mean = shift + rows.iter().map(|r| r[d] - shift).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n;
            norm.means[d] = mean;
            norm.stds[d] = var.sqrt().max(STD_FLOOR);
        }
        norm
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn apply(&self, feats: &ComplexityFeatures) -> Result<Vec<f64>, FeatureError> {
        if self.means.len() != FEATURE_DIM || self.stds.len() != FEATURE_DIM {
            return Err(FeatureError::DimensionMismatch {
                expected: FEATURE_DIM,
                found: self.means.len().min(self.stds.len()),
            });
        }
        Ok(feats
            .to_array()
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| (x - m) / s.max(STD_FLOOR))
            .collect())
    }
}

/// Affine map `W_c z + b_c` from normalized features to a `d_c` vector.
///
/// `weight` has shape `(d_c, d_r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityProjection {
    pub weight: Array2<f64>,
    pub bias: Vec<f64>,
}

impl ComplexityProjection {
    pub fn new(weight: Array2<f64>, bias: Vec<f64>) -> Result<Self, FeatureError> {
        if weight.nrows() != bias.len() {
            return Err(FeatureError::DimensionMismatch {
                expected: weight.nrows(),
                found: bias.len(),
            });
        }
        Ok(Self { weight, bias })
    }

    pub fn output_dim(&self) -> usize {
        self.bias.len()
    }

    /// Applies the map to an already normalized feature vector.
    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>, FeatureError> {
        if self.weight.ncols() != z.len() {
            return Err(FeatureError::DimensionMismatch {
                expected: self.weight.ncols(),
                found: z.len(),
            });
        }
        Ok(self
            .weight
            .outer_iter()
            .zip(&self.bias)
            .map(|(row, &b)| {
                let mut acc = b;
                for (w, x) in row.iter().zip(z) {
                    acc += w * x;
                }
                acc
            })
            .collect())
    }
}

/// `W_c · z(r) + b_c` for one prompt.
pub fn project_complexity(
    feats: &ComplexityFeatures,
    proj: &ComplexityProjection,
    norm: &FeatureNormalization,
) -> Result<Vec<f64>, FeatureError> {
    proj.apply(&norm.apply(feats)?)
}
