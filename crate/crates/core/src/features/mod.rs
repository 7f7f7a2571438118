//! Predictor construction: basic bin statistics, compound window sums,
//! transforms and autocorrelation diagnostics.

mod acf;
mod compound;
mod panel;
mod transform;

pub use acf::acf;
pub use compound::{compound, BasicPredictor, CompoundOp};
pub use panel::{
    build_panel, read_panel, write_panel, Column, FeatureConfig, FeaturePanel, Manifest, ManifestColumn,
    Provenance, RowKey,
};
pub use transform::{
    denormalize_by_outstanding, fit_normalizer, log_transform, normalize_by_outstanding, MinMax,
    NormalizerState,
};
