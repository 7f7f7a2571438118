use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calendar::{ForecastMode, IntervalConfig};
use crate::clustering::ClusterConfig;
use crate::cmem::ComponentConfig;
use crate::error::{Error, Result};
use crate::matching::SessionConfig;
use crate::schemes::{ModelKind, ModelParams, Recipe, Scheme, Split};
use crate::synth::SynthConfig;

/// Where market data comes from. Without `messages_dir` the pipeline uses the
/// synthetic dataset written by `synth` under the output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory of `<TICKER>_<YYYY-MM-DD>_..._message_....csv` files.
    pub messages_dir: Option<PathBuf>,
    /// CSV with columns `stock,outstanding_shares`; required with `messages_dir`.
    pub shares_file: Option<PathBuf>,
    /// Generator settings; its seed is replaced by the run seed.
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSettings {
    pub past_windows: Vec<usize>,
    pub intervals: IntervalConfig,
    /// Add the seven component-model columns (needed for the `cmem` baseline).
    pub components: bool,
    pub component: ComponentConfig,
    /// Add order flow imbalance columns (replays every message file).
    pub ofi: bool,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        Self {
            past_windows: vec![2, 8],
            intervals: IntervalConfig::default(),
            components: true,
            component: ComponentConfig::default(),
            ofi: false,
        }
    }
}

/// Every scheme x model x recipe x mode combination is evaluated. The component
/// model ignores scheme and recipe and runs once per mode when `include_cmem` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentMatrix {
    pub schemes: Vec<Scheme>,
    pub models: Vec<ModelKind>,
    pub recipes: Vec<Recipe>,
    pub modes: Vec<ForecastMode>,
    pub include_cmem: bool,
    pub split: Split,
    pub params: ModelParams,
}

impl Default for ExperimentMatrix {
    fn default() -> Self {
        Self {
            schemes: vec![Scheme::Sam, Scheme::Uam],
            models: vec![ModelKind::Ridge, ModelKind::Gbt],
            recipes: vec![Recipe::Auxiliary],
            modes: vec![ForecastMode::Dynamic],
            include_cmem: true,
            split: Split::default(),
            params: ModelParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds every random draw in the run; there is no default.
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    /// Tickers to keep; `None` keeps all.
    #[serde(default)]
    pub universe: Option<Vec<String>>,
    #[serde(default)]
    pub start_date: Option<NaiveDate>,
    #[serde(default)]
    pub end_date: Option<NaiveDate>,
    #[serde(default = "default_bin_minutes")]
    pub bin_minutes: u32,
    #[serde(default)]
    pub features: FeatureSettings,
    #[serde(default)]
    pub experiments: ExperimentMatrix,
    #[serde(default)]
    pub clustering: ClusterConfig,
    #[serde(default)]
    pub session: SessionConfig,
    /// Output directory; not part of the config hash.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_bin_minutes() -> u32 {
    15
}

impl RunConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            data: DataConfig::default(),
            universe: None,
            start_date: None,
            end_date: None,
            bin_minutes: default_bin_minutes(),
            features: FeatureSettings::default(),
            experiments: ExperimentMatrix::default(),
            clustering: ClusterConfig::default(),
            session: SessionConfig::default(),
            out_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "pass an existing config file".into(),
            });
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bin_minutes != 15 {
            return Err(Error::Config(format!(
                "only 15-minute bins are supported, got {}",
                self.bin_minutes
            )));
        }
        if let (Some(a), Some(b)) = (self.start_date, self.end_date) {
            if a > b {
                return Err(Error::Config(format!("start_date {a} is after end_date {b}")));
            }
        }
        if self.data.messages_dir.is_some() && self.data.shares_file.is_none() {
            return Err(Error::Config("data.shares_file is required with data.messages_dir".into()));
        }
        let m = &self.experiments;
        if m.modes.is_empty() {
            return Err(Error::Config("experiments.modes is empty".into()));
        }
        if m.include_cmem && !self.features.components {
            return Err(Error::Config("include_cmem needs features.components".into()));
        }
        if m.recipes.iter().any(|r| *r != Recipe::Auxiliary) && !self.features.components {
            return Err(Error::Config("component recipes need features.components".into()));
        }
        if m.params.with_ofi && !self.features.ofi {
            return Err(Error::Config("params.with_ofi needs features.ofi".into()));
        }
        self.data.synth.validate()?;
        self.session.validate()
    }

    /// The synthetic generator settings with the run seed applied.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.data.synth.clone()
        }
    }

    /// Canonical JSON of everything that affects results.
    pub fn echo(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        serde_json::to_string_pretty(&c).expect("config serializes")
    }

    /// Hex SHA-256 of [`RunConfig::echo`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.echo().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory() {
        assert!(matches!(RunConfig::from_json("{}"), Err(Error::Config(_))));
        let c = RunConfig::from_json(r#"{"seed": 3}"#).unwrap();
        assert_eq!(c, RunConfig::new(3));
    }

    #[test]
    fn echo_round_trips_and_hash_ignores_output_dir() {
        let mut c = RunConfig::new(5);
        c.experiments.models = vec![ModelKind::Ols];
        let back = RunConfig::from_json(&c.echo()).unwrap();
        assert_eq!(back, c);
        let h = c.hash();
        assert_eq!(h.len(), 64);
        c.out_dir = Some("elsewhere".into());
        assert_eq!(c.hash(), h);
        c.seed = 6;
        assert_ne!(c.hash(), h);
    }

    #[test]
    fn rejects_inconsistent_settings() {
        assert!(RunConfig::from_json(r#"{"seed": 1, "bin_minutes": 5}"#).is_err());
        assert!(RunConfig::from_json(r#"{"seed": 1, "typo": 5}"#).is_err());
        let mut c = RunConfig::new(1);
        c.features.components = false;
        assert!(c.validate().is_err());
        c.experiments.include_cmem = false;
        c.validate().unwrap();
    }
}
