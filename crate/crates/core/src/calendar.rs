//! Session layout: 26 fifteen-minute bins between 09:30 and 16:00 exchange time.

use serde::{Deserialize, Serialize};

pub const BINS_PER_DAY: usize = 26;
pub const SESSION_OPEN_SECS: f64 = 9.5 * 3600.0;
pub const SESSION_CLOSE_SECS: f64 = 16.0 * 3600.0;
pub const BIN_SECS: f64 = 900.0;
/// Closing-auction prints stamped up to five minutes after the close.
pub const AUCTION_GRACE_SECS: f64 = 300.0;

/// Intraday interval of a bin (the `intrIn` predictor).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntradayInterval {
    Open,
    Midday,
    Close,
}

impl IntradayInterval {
    pub fn code(self) -> u8 {
        match self {
            IntradayInterval::Open => 0,
            IntradayInterval::Midday => 1,
            IntradayInterval::Close => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IntradayInterval::Open => "open",
            IntradayInterval::Midday => "midday",
            IntradayInterval::Close => "close",
        }
    }
}

impl std::str::FromStr for IntradayInterval {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "open" => Ok(IntradayInterval::Open),
            "midday" => Ok(IntradayInterval::Midday),
            "close" => Ok(IntradayInterval::Close),
            other => Err(format!("unknown intraday interval `{other}`")),
        }
    }
}

/// How many leading / trailing bins form the open and close intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalConfig {
    pub open_bins: usize,
    pub close_bins: usize,
}

impl Default for IntervalConfig {
    fn default() -> Self {
        Self {
            open_bins: 2,
            close_bins: 2,
        }
    }
}

pub fn assign_interval(bin_index: usize, config: &IntervalConfig) -> IntradayInterval {
    debug_assert!(bin_index < BINS_PER_DAY);
    if bin_index < config.open_bins {
        IntradayInterval::Open
    } else if bin_index + config.close_bins >= BINS_PER_DAY {
        IntradayInterval::Close
    } else {
        IntradayInterval::Midday
    }
}

/// Regular trading session and its bin grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradingCalendar {
    pub open_secs: f64,
    pub bin_secs: f64,
    pub n_bins: usize,
    pub auction_grace_secs: f64,
    pub intervals: IntervalConfig,
}

impl Default for TradingCalendar {
    fn default() -> Self {
        Self {
            open_secs: SESSION_OPEN_SECS,
            bin_secs: BIN_SECS,
            n_bins: BINS_PER_DAY,
            auction_grace_secs: AUCTION_GRACE_SECS,
            intervals: IntervalConfig::default(),
        }
    }
}

impl TradingCalendar {
    pub fn close_secs(&self) -> f64 {
        self.open_secs + self.bin_secs * self.n_bins as f64
    }

    /// Bin of an event time, folding closing-auction prints into the last bin.
    /// `None` for pre-open and late prints.
    pub fn bin_of(&self, time: f64) -> Option<usize> {
        if time < self.open_secs {
            return None;
        }
        let close = self.close_secs();
        if time >= close {
            return (time <= close + self.auction_grace_secs).then_some(self.n_bins - 1);
        }
        let idx = ((time - self.open_secs) / self.bin_secs).floor() as usize;
        Some(idx.min(self.n_bins - 1))
    }

    pub fn bin_start(&self, bin: usize) -> f64 {
        self.open_secs + self.bin_secs * bin as f64
    }

    /// Bin start as an HHMM integer, e.g. 930, 945, 1000.
    pub fn time_hms(&self, bin: usize) -> u32 {
        let secs = self.bin_start(bin).round() as u32;
        (secs / 3600) * 100 + (secs % 3600) / 60
    }
}

/// Static: day-ahead forecast of all bins. Dynamic: one-bin-ahead using realized bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForecastMode {
    Static,
    Dynamic,
}

impl ForecastMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ForecastMode::Static => "static",
            ForecastMode::Dynamic => "dynamic",
        }
    }
}

impl std::str::FromStr for ForecastMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(ForecastMode::Static),
            "dynamic" => Ok(ForecastMode::Dynamic),
            other => Err(format!("unknown forecast mode `{other}`")),
        }
    }
}
