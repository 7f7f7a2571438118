//! Training schemes (per-stock, per-cluster, pooled), rolling out-of-sample
//! evaluation and feature importance.

mod design;
mod evaluate;
mod fit;
mod importance;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calendar::ForecastMode;
use crate::error::{Error, Result};
use crate::models::gbt::GbtParams;
use crate::models::seqnet::SeqNetConfig;

pub use design::{assemble_design, cluster_series, feature_columns, Design};
pub use evaluate::{
    day_r2, rolling_evaluate, write_comparison_csv, Evaluation, EvaluationReport, Prediction,
};
pub use fit::{fit_group, GroupModel, TargetTransform};
pub use importance::{feature_importance, FeatureImportance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "SAM")]
    Sam,
    #[serde(rename = "CAM")]
    Cam,
    #[serde(rename = "UAM")]
    Uam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cmem,
    Ols,
    Lasso,
    Ridge,
    Gbt,
    Seqnet,
}

impl ModelKind {
    pub fn is_linear(self) -> bool {
        matches!(self, ModelKind::Ols | ModelKind::Lasso | ModelKind::Ridge)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    CmemComponents,
    Auxiliary,
    Both,
}

macro_rules! name_impls {
    ($t:ty, $($v:path => $s:literal),+ $(,)?) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($v => $s),+ })
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    _ => Err(Error::Config(format!("unknown {} `{s}`", stringify!($t)))),
                }
            }
        }
    };
}

name_impls!(Scheme, Scheme::Sam => "SAM", Scheme::Cam => "CAM", Scheme::Uam => "UAM");
name_impls!(
    ModelKind,
    ModelKind::Cmem => "cmem",
    ModelKind::Ols => "ols",
    ModelKind::Lasso => "lasso",
    ModelKind::Ridge => "ridge",
    ModelKind::Gbt => "gbt",
    ModelKind::Seqnet => "seqnet",
);
name_impls!(
    Recipe,
    Recipe::CmemComponents => "cmem_components",
    Recipe::Auxiliary => "auxiliary",
    Recipe::Both => "both",
);

/// Day counts for one evaluation. Test days follow the validation days, which follow
/// the training days, counted from the panel's first day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_days: usize,
    pub validation_days: usize,
    pub test_days: usize,
    /// Refit on a window rolled forward every this many test days; `None` fits once.
    pub refit_every: Option<usize>,
}

impl Default for Split {
    fn default() -> Self {
        Self {
            train_days: 20,
            validation_days: 5,
            test_days: 10,
            refit_every: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    /// LASSO grid as fractions of the largest useful lambda.
    pub lasso_grid: Vec<f64>,
    pub ridge_grid: Vec<f64>,
    pub gbt: GbtParams,
    pub seqnet: SeqNetConfig,
    /// Add one-hot stock dummies to pooled designs.
    pub stock_dummies: bool,
    /// Append the OFI column family to the recipe.
    pub with_ofi: bool,
    /// Days at the end of the fitting window whose target range bounds clipping.
    pub clip_window_days: usize,
    /// Shuffles per feature for permutation importance.
    pub permutation_rounds: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            lasso_grid: vec![0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 5e-3, 2e-3, 1e-3],
            ridge_grid: vec![1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0],
            gbt: GbtParams::default(),
            seqnet: SeqNetConfig::default(),
            stock_dummies: false,
            with_ofi: false,
            clip_window_days: 10,
            permutation_rounds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub scheme: Scheme,
    pub model: ModelKind,
    pub recipe: Recipe,
    pub mode: ForecastMode,
    pub split: Split,
    #[serde(default)]
    pub params: ModelParams,
    #[serde(default)]
    pub seed: u64,
}

impl SchemeSpec {
    /// Run name; the component model ignores scheme and recipe, so they are left out.
    pub fn label(&self) -> String {
        if self.model == ModelKind::Cmem {
            return format!("cmem_{}", self.mode.as_str());
        }
        format!("{}_{}_{}_{}", self.scheme, self.model, self.recipe, self.mode.as_str())
    }
}

#[cfg(test)]
mod tests;
