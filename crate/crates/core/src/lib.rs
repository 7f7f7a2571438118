//! Intraday volume forecasting toolkit: LOB ingestion, a component
//! multiplicative error benchmark, pooled/clustered ML models and execution
//! backtests (VWAP tracking error, passive fill ratios).

pub mod calendar;
pub mod clustering;
pub mod cmem;
pub mod error;
pub mod features;
pub mod lob;
pub mod matching;
pub mod models;
pub mod ofi;
pub mod optim;
pub mod pipeline;
pub mod schemes;
pub mod stats;
pub mod synth;
pub mod vwap;

pub use error::{Error, Result};
