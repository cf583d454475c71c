use serde::{Deserialize, Serialize};

use super::{CohortError, Result};

/// Affine standardization `z = (x - mean) / sd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub mean: f64,
    pub sd: f64,
}

impl ZScore {
    pub const IDENTITY: ZScore = ZScore { mean: 0.0, sd: 1.0 };

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.sd
    }

    #[inline]
    pub fn invert(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

/// Sample mean and (n - 1) standard deviation.
pub fn zscore_fit(values: &[f64]) -> Result<ZScore> {
    if values.len() < 2 {
        return Err(CohortError::TooFewValues { needed: 2, got: values.len() });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (n - 1.0)).sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(CohortError::ConstantFeature(String::new()));
    }
    Ok(ZScore { mean, sd })
}

/// Normalization fitted on a set of training rows: retained feature columns
/// with their z-scores, and the target z-score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreParams {
    /// Indices of the retained raw feature columns.
    pub columns: Vec<usize>,
    /// Names of the retained columns.
    pub names: Vec<String>,
    pub features: Vec<ZScore>,
    pub target: ZScore,
}

impl ZScoreParams {
    /// Fits per-column parameters; constant columns are dropped with a
    /// warning. A constant target keeps its mean with unit scale.
    pub fn fit(rows: &[Vec<f64>], targets: &[f64], names: &[String]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(CohortError::TooFewValues { needed: 2, got: rows.len() });
        }
        let width = names.len();
        let mut columns = Vec::new();
        let mut kept = Vec::new();
        let mut features = Vec::new();
        let mut col = Vec::with_capacity(rows.len());
        for c in 0..width {
            col.clear();
            col.extend(rows.iter().map(|r| r[c]));
            match zscore_fit(&col) {
                Ok(z) => {
                    columns.push(c);
                    kept.push(names[c].clone());
                    features.push(z);
                }
                Err(CohortError::ConstantFeature(_)) => {
                    log::warn!("dropping constant feature column {}", names[c]);
                }
                Err(e) => return Err(e),
            }
        }
        let target = match zscore_fit(targets) {
            Ok(z) => z,
            Err(CohortError::ConstantFeature(_)) => {
                log::warn!("constant target; normalizing with unit scale");
                ZScore { mean: targets[0], sd: 1.0 }
            }
            Err(e) => return Err(e),
        };
        Ok(ZScoreParams { columns, names: kept, features, target })
    }

    /// Selects and standardizes the retained columns of a raw row.
    pub fn transform_row(&self, raw: &[f64]) -> Vec<f64> {
        self.columns.iter().zip(&self.features).map(|(&c, z)| z.apply(raw[c])).collect()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }
}
