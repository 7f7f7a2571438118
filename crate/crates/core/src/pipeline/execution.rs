//! In-memory VWAP backtests and fill simulations over evaluated forecasts.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::{ForecastMode, TradingCalendar, BINS_PER_DAY};
use crate::error::{Error, Result};
use crate::lob::{BinRecord, LobEvent};
use crate::matching::{fill_advantage, run_session, FillReport, SessionConfig};
use crate::schemes::Prediction;
use crate::stats;
use crate::vwap::{
    bin_prices, dynamic_weights, evaluate_day, oracle_weights, static_weights, SliceSchedule, VwapDay, VwapReport,
};

/// Bin records keyed by stock and day, each day ordered by bin.
#[derive(Debug, Clone, Default)]
pub struct BinIndex {
    days: BTreeMap<(String, NaiveDate), Vec<BinRecord>>,
}

impl BinIndex {
    pub fn new(records: &[BinRecord]) -> Result<Self> {
        let mut days: BTreeMap<(String, NaiveDate), Vec<BinRecord>> = BTreeMap::new();
        for r in records {
            days.entry((r.stock.clone(), r.day)).or_default().push(r.clone());
        }
        for ((s, d), v) in &mut days {
            v.sort_by_key(|r| r.bin_index);
            if v.len() != BINS_PER_DAY || v.iter().enumerate().any(|(i, r)| r.bin_index != i) {
                return Err(Error::InvalidInput(format!("{s} {d}: expected bins 0..{BINS_PER_DAY}")));
            }
        }
        Ok(Self { days })
    }

    pub fn day(&self, stock: &str, day: NaiveDate) -> Option<&[BinRecord]> {
        self.days.get(&(stock.to_string(), day)).map(Vec::as_slice)
    }

    pub fn volumes(&self, stock: &str, day: NaiveDate) -> Option<Vec<f64>> {
        self.day(stock, day).map(|d| d.iter().map(|r| r.volume as f64).collect())
    }

    fn previous_day(&self, stock: &str, day: NaiveDate) -> Option<&[BinRecord]> {
        self.days
            .range((stock.to_string(), NaiveDate::MIN)..(stock.to_string(), day))
            .next_back()
            .map(|(_, v)| v.as_slice())
    }

    /// Bin prices for the day with carry-forward from the previous day's close.
    pub fn prices(&self, stock: &str, day: NaiveDate) -> Result<Vec<f64>> {
        let bins = self
            .day(stock, day)
            .ok_or_else(|| Error::InvalidInput(format!("no bins for {stock} {day}")))?;
        let prev_close = self
            .previous_day(stock, day)
            .and_then(|p| p.iter().rev().find_map(|r| r.last_price));
        bin_prices(&bins.iter().map(|r| r.last_price).collect::<Vec<_>>(), prev_close)
    }

    /// Mean volume per bin over the `n_days` days of `stock` before `before`.
    pub fn bin_profile(&self, stock: &str, before: NaiveDate, n_days: usize) -> Result<Vec<f64>> {
        let days: Vec<&Vec<BinRecord>> = self
            .days
            .range((stock.to_string(), NaiveDate::MIN)..(stock.to_string(), before))
            .rev()
            .take(n_days)
            .map(|(_, v)| v)
            .collect();
        if days.is_empty() {
            return Err(Error::InvalidInput(format!("no history for {stock} before {before}")));
        }
        let mut profile = vec![0.0; BINS_PER_DAY];
        for d in &days {
            for (p, r) in profile.iter_mut().zip(d.iter()) {
                *p += r.volume as f64 / days.len() as f64;
            }
        }
        Ok(profile)
    }
}

/// Weights for one day. Static forecasts are normalized directly. Dynamic forecasts
/// are one bin ahead: the path made at bin `i` holds the bin-`i` forecast and fills
/// later bins with `profile`, rescaled by realized over profile volume up to bin `i`
/// (1 at the open). `realized` is only read before bin `i`.
pub fn day_schedule(mode: ForecastMode, forecasts: &[f64], profile: &[f64], realized: &[f64]) -> Result<(Vec<f64>, bool)> {
    match mode {
        ForecastMode::Static => Ok((static_weights(forecasts)?, false)),
        ForecastMode::Dynamic => {
            let n = forecasts.len();
            if profile.len() != n || realized.len() != n {
                return Err(Error::InvalidInput("profile, realized and forecasts differ in length".into()));
            }
            let (mut seen, mut expected) = (0.0, 0.0);
            let mut paths = Vec::with_capacity(n);
            for i in 0..n {
                let level = if expected > 0.0 { seen / expected } else { 1.0 };
                paths.push(
                    (0..n)
                        .map(|j| match j.cmp(&i) {
                            std::cmp::Ordering::Less => 0.0,
                            std::cmp::Ordering::Equal => forecasts[i],
                            std::cmp::Ordering::Greater => level * profile[j],
                        })
                        .collect::<Vec<f64>>(),
                );
                seen += realized[i];
                expected += profile[i];
            }
            dynamic_weights(&paths)
        }
    }
}

/// Forecasts grouped by stock and day, each a full day of bins.
pub fn forecast_days(predictions: &[Prediction]) -> Result<BTreeMap<(String, NaiveDate), Vec<f64>>> {
    let mut out: BTreeMap<(String, NaiveDate), Vec<f64>> = BTreeMap::new();
    for p in predictions {
        let v = out
            .entry((p.stock.clone(), p.day))
            .or_insert_with(|| vec![f64::NAN; BINS_PER_DAY]);
        if p.bin >= BINS_PER_DAY {
            return Err(Error::InvalidInput(format!("bin {} out of range", p.bin)));
        }
        v[p.bin] = p.predicted;
    }
    for ((s, d), v) in &out {
        if v.iter().any(|x| x.is_nan()) {
            return Err(Error::InvalidInput(format!("forecasts for {s} {d} do not cover every bin")));
        }
    }
    Ok(out)
}

/// Source name of the perfect-information schedule.
pub const ORACLE: &str = "oracle";

/// Schedules for every (stock, day) with forecasts. `profile_days` sets the history
/// used for the dynamic extension; its profile is taken before the first forecast
/// day of each stock. `source == ORACLE` uses realized volumes instead.
pub fn build_schedules(
    source: &str,
    mode: ForecastMode,
    forecasts: &BTreeMap<(String, NaiveDate), Vec<f64>>,
    bins: &BinIndex,
    profile_days: usize,
) -> Result<Vec<SliceSchedule>> {
    let mut first_day: BTreeMap<&str, NaiveDate> = BTreeMap::new();
    for (s, d) in forecasts.keys() {
        first_day.entry(s.as_str()).or_insert(*d);
    }
    let mut profiles = BTreeMap::new();
    if source != ORACLE && mode == ForecastMode::Dynamic {
        for (s, d) in &first_day {
            profiles.insert(*s, bins.bin_profile(s, *d, profile_days)?);
        }
    }
    forecasts
        .iter()
        .map(|((stock, day), f)| {
            let (weights, uniform_fallback) = if source == ORACLE {
                let v = bins
                    .volumes(stock, *day)
                    .ok_or_else(|| Error::InvalidInput(format!("no bins for {stock} {day}")))?;
                (oracle_weights(&v)?, false)
            } else if mode == ForecastMode::Dynamic {
                let v = bins
                    .volumes(stock, *day)
                    .ok_or_else(|| Error::InvalidInput(format!("no bins for {stock} {day}")))?;
                day_schedule(mode, f, &profiles[stock.as_str()], &v)?
            } else {
                day_schedule(mode, f, &[], &[])?
            };
            Ok(SliceSchedule {
                stock: stock.clone(),
                day: *day,
                mode,
                weights,
                source: source.to_string(),
                uniform_fallback,
            })
        })
        .collect()
}

pub fn backtest(source: &str, mode: ForecastMode, schedules: &[SliceSchedule], bins: &BinIndex) -> Result<VwapReport> {
    let days: Vec<VwapDay> = schedules
        .iter()
        .map(|s| {
            let v = bins
                .volumes(&s.stock, s.day)
                .ok_or_else(|| Error::InvalidInput(format!("no bins for {} {}", s.stock, s.day)))?;
            evaluate_day(s, &v, &bins.prices(&s.stock, s.day)?)
        })
        .collect::<Result<_>>()?;
    VwapReport::from_days(source, mode, days)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillSession {
    pub source: String,
    pub stock: String,
    pub day: NaiveDate,
    pub report: FillReport,
}

/// Run every schedule of one (stock, day) against the same replayed events.
pub fn simulate_day(
    events: &[LobEvent],
    calendar: &TradingCalendar,
    schedules: &[&SliceSchedule],
    daily_volume: u64,
    cfg: &SessionConfig,
) -> Result<Vec<FillSession>> {
    let q = cfg.parent_quantity(daily_volume);
    schedules
        .iter()
        .map(|s| {
            Ok(FillSession {
                source: s.source.clone(),
                stock: s.stock.clone(),
                day: s.day,
                report: run_session(events, calendar, &s.weights, q, cfg)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRow {
    pub source: String,
    pub baseline: String,
    pub stock: String,
    pub day: NaiveDate,
    pub advantage_bp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSummary {
    pub source: String,
    pub baseline: String,
    pub sessions: usize,
    /// Sessions without a defined advantage (baseline filled nothing passively).
    pub skipped: usize,
    pub median_advantage_bp: f64,
    pub mean_advantage_bp: f64,
}

/// Relative fill-ratio advantage of every non-baseline source over `baseline`, per
/// session, in basis points.
pub fn advantages(sessions: &[FillSession], baseline: &str) -> Result<(Vec<AdvantageRow>, Vec<AdvantageSummary>)> {
    let mut base: BTreeMap<(&str, NaiveDate), &FillReport> = BTreeMap::new();
    for s in sessions.iter().filter(|s| s.source == baseline) {
        base.insert((s.stock.as_str(), s.day), &s.report);
    }
    if base.is_empty() {
        return Err(Error::InvalidInput(format!("no sessions for baseline `{baseline}`")));
    }
    let mut rows = Vec::new();
    let mut per_source: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for s in sessions.iter().filter(|s| s.source != baseline) {
        let b = base
            .get(&(s.stock.as_str(), s.day))
            .ok_or_else(|| Error::InvalidInput(format!("baseline lacks {} {}", s.stock, s.day)))?;
        let e = per_source.entry(s.source.as_str()).or_default();
        match fill_advantage(&s.report, b) {
            Ok(a) => {
                e.0.push(a * 1e4);
                rows.push(AdvantageRow {
                    source: s.source.clone(),
                    baseline: baseline.to_string(),
                    stock: s.stock.clone(),
                    day: s.day,
                    advantage_bp: a * 1e4,
                });
            }
            Err(err) => {
                log::warn!("{} {} {}: {err}", s.source, s.stock, s.day);
                e.1 += 1;
            }
        }
    }
    let summary = per_source
        .into_iter()
        .map(|(src, (v, skipped))| AdvantageSummary {
            source: src.to_string(),
            baseline: baseline.to_string(),
            sessions: v.len(),
            skipped,
            median_advantage_bp: stats::median(&v),
            mean_advantage_bp: stats::mean(&v),
        })
        .collect();
    Ok((rows, summary))
}
