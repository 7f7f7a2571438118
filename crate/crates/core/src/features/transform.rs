use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Elementwise `ln(1 + x)`; volumes can be zero so plain `ln` is unusable.
pub fn log_transform(column: &[f64]) -> Result<Vec<f64>> {
    column
        .iter()
        .map(|&x| {
            if x < 0.0 || x.is_nan() {
                Err(Error::InvalidInput(format!("log transform needs non-negative input, got {x}")))
            } else {
                Ok(x.ln_1p())
            }
        })
        .collect()
}

/// Clip-then-scale map fitted on training values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("cannot fit a normalizer on an empty window".into()));
        }
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if !(min.is_finite() && max.is_finite()) {
            return Err(Error::Numerical("non-finite value in normalizer window".into()));
        }
        Ok(Self { min, max })
    }

    pub fn is_constant(&self) -> bool {
        self.max <= self.min
    }

    /// Clip to `[min, max]`, then map to `[0, 1]`; a constant column maps to 0.5.
    pub fn apply(&self, x: f64) -> f64 {
        if self.is_constant() {
            return 0.5;
        }
        (x.clamp(self.min, self.max) - self.min) / (self.max - self.min)
    }

    /// Inverse of the scaling step (no clipping, so extrapolation is allowed).
    pub fn invert(&self, z: f64) -> f64 {
        if self.is_constant() {
            return self.min;
        }
        self.min + z * (self.max - self.min)
    }
}

/// Per-column scaling plus target clip bounds, fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerState {
    pub columns: Vec<MinMax>,
    /// Range of the target over the trailing clip window of the training data.
    pub target: MinMax,
}

impl NormalizerState {
    pub fn apply_row(&self, row: &[f64], out: &mut [f64]) {
        for ((o, x), m) in out.iter_mut().zip(row).zip(&self.columns) {
            *o = m.apply(*x);
        }
    }

    pub fn apply_columns(&self, columns: &[Vec<f64>]) -> Vec<Vec<f64>> {
        columns
            .iter()
            .zip(&self.columns)
            .map(|(col, m)| col.iter().map(|&x| m.apply(x)).collect())
            .collect()
    }
}

/// `columns` are the training predictor columns; `target_window` holds the target
/// values of the trailing clip window (the last D training days).
pub fn fit_normalizer(columns: &[Vec<f64>], target_window: &[f64]) -> Result<NormalizerState> {
    let columns = columns.iter().map(|c| MinMax::fit(c)).collect::<Result<Vec<_>>>()?;
    Ok(NormalizerState {
        columns,
        target: MinMax::fit(target_window)?,
    })
}

pub fn normalize_by_outstanding(volume: f64, outstanding_shares: f64) -> Result<f64> {
    if !(outstanding_shares > 0.0) {
        return Err(Error::InvalidInput(format!(
            "outstanding shares must be positive, got {outstanding_shares}"
        )));
    }
    Ok(volume / outstanding_shares)
}

pub fn denormalize_by_outstanding(turnover: f64, outstanding_shares: f64) -> f64 {
    turnover * outstanding_shares
}
