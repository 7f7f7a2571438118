//! Synthetic multi-stock volume panels and matching LOB event streams with
//! known component ground truth.

mod events;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use events::{generate_events, EventConfig, StockEventGenerator};

use crate::calendar::BINS_PER_DAY;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_stocks: usize,
    pub n_days: usize,
    pub seed: u64,
    /// Positive per-bin multipliers with geometric mean 1.
    pub seasonal_profile: Vec<f64>,
    /// Weight of yesterday's realized level in today's daily component.
    pub daily_persistence: f64,
    pub mem_alpha: f64,
    pub mem_beta: f64,
    pub common_factor_loading: f64,
    pub factor_persistence: f64,
    /// Stocks are split round-robin into this many groups sharing a group factor.
    pub n_groups: usize,
    pub group_factor_loading: f64,
    /// Gamma shape of the unit-mean noise; `None` means no noise.
    pub noise_shape: Option<f64>,
    /// Mean shares per bin for a typical stock.
    pub base_level: f64,
    /// Log-scale dispersion of per-stock levels.
    pub level_dispersion: f64,
    /// Shares outstanding for a stock at the typical level.
    pub outstanding_shares: f64,
    /// Opening price in currency units for a typical stock.
    pub price_seed: f64,
    pub start_date: NaiveDate,
    pub events: EventConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_stocks: 8,
            n_days: 60,
            seed: 7,
            seasonal_profile: default_seasonal_profile(),
            daily_persistence: 0.5,
            mem_alpha: 0.3,
            mem_beta: 0.5,
            common_factor_loading: 0.5,
            factor_persistence: 0.5,
            n_groups: 4,
            group_factor_loading: 0.3,
            noise_shape: Some(8.0),
            base_level: 3000.0,
            level_dispersion: 0.5,
            outstanding_shares: 5.0e7,
            price_seed: 50.0,
            start_date: NaiveDate::from_ymd_opt(2017, 7, 3).expect("valid date"),
            events: EventConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_stocks == 0 || self.n_days == 0 {
            return bad("n_stocks and n_days must be positive".into());
        }
        if self.seasonal_profile.len() != BINS_PER_DAY {
            return bad(format!(
                "seasonal_profile needs {BINS_PER_DAY} entries, got {}",
                self.seasonal_profile.len()
            ));
        }
        if self.seasonal_profile.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("seasonal_profile entries must be positive".into());
        }
        let log_mean = self.seasonal_profile.iter().map(|s| s.ln()).sum::<f64>() / BINS_PER_DAY as f64;
        if log_mean.abs() > 1e-9 {
            return bad(format!("seasonal_profile geometric mean is {} (must be 1)", log_mean.exp()));
        }
        if !(0.0..1.0).contains(&self.daily_persistence) {
            return bad("daily_persistence must lie in [0, 1)".into());
        }
        if self.mem_alpha < 0.0 || self.mem_beta < 0.0 || self.mem_alpha + self.mem_beta >= 1.0 {
            return bad(format!(
                "need mem_alpha, mem_beta >= 0 and mem_alpha + mem_beta < 1 (got {} + {})",
                self.mem_alpha, self.mem_beta
            ));
        }
        if !(0.0..=1.0).contains(&self.common_factor_loading) || !(0.0..=1.0).contains(&self.group_factor_loading) {
            return bad("factor loadings must lie in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.factor_persistence) {
            return bad("factor_persistence must lie in [0, 1)".into());
        }
        if self.n_groups == 0 {
            return bad("n_groups must be at least 1".into());
        }
        if let Some(k) = self.noise_shape {
            if !(k.is_finite() && k > 0.0) {
                return bad("noise_shape must be positive".into());
            }
        }
        if !(self.base_level > 0.0 && self.outstanding_shares > 0.0 && self.price_seed > 0.0) {
            return bad("base_level, outstanding_shares and price_seed must be positive".into());
        }
        self.events.validate()
    }

    pub fn tickers(&self) -> Vec<String> {
        (0..self.n_stocks).map(|i| format!("S{i:03}")).collect()
    }

    /// Consecutive weekdays starting at `start_date`.
    pub fn trading_days(&self) -> Vec<NaiveDate> {
        let mut out = Vec::with_capacity(self.n_days);
        let mut d = self.start_date;
        while out.len() < self.n_days {
            if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
                out.push(d);
            }
            d = d.succ_opt().expect("date in range");
        }
        out
    }
}

/// U/J-shaped profile: elevated open, dip at midday, rising into the close.
pub fn default_seasonal_profile() -> Vec<f64> {
    let logs: Vec<f64> = (0..BINS_PER_DAY)
        .map(|j| {
            let open = 1.0 * (-(j as f64) / 2.0).exp();
            let close = 0.7 * (-((BINS_PER_DAY - 1 - j) as f64) / 2.5).exp();
            let auction = if j == BINS_PER_DAY - 1 { 0.35 } else { 0.0 };
            open + close + auction
        })
        .collect();
    normalize_geometric(&logs.iter().map(|l| l.exp()).collect::<Vec<_>>())
}

/// Rescale positive values to geometric mean 1.
pub fn normalize_geometric(values: &[f64]) -> Vec<f64> {
    let m = values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v.ln() - m).exp()).collect()
}

/// Integer bin volumes per stock and day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumePanel {
    pub tickers: Vec<String>,
    pub days: Vec<NaiveDate>,
    pub outstanding_shares: Vec<f64>,
    /// `volume[stock][day][bin]`
    pub volume: Vec<Vec<Vec<u64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockTruth {
    pub ticker: String,
    pub group: usize,
    pub level: f64,
    pub outstanding_shares: f64,
    pub open_price: f64,
    pub seasonal: Vec<f64>,
    /// Daily component in shares per bin.
    pub eta: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub eps: Vec<Vec<f64>>,
    /// Continuous volume before rounding.
    pub x: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub days: Vec<NaiveDate>,
    pub mem_alpha: f64,
    pub mem_beta: f64,
    pub common_factor: Vec<f64>,
    pub group_factors: Vec<Vec<f64>>,
    pub stocks: Vec<StockTruth>,
}

/// Independent stream for a (seed, stream) pair.
pub(crate) fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn ar1_path(rng: &mut ChaCha8Rng, n: usize, rho: f64) -> Vec<f64> {
    let innov = (1.0 - rho * rho).sqrt();
    let mut f: f64 = rng.sample(StandardNormal);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(f);
        let z: f64 = rng.sample(StandardNormal);
        f = rho * f + innov * z;
    }
    out
}

pub fn generate_volume_panel(config: &SynthConfig) -> Result<(VolumePanel, GroundTruth)> {
    config.validate()?;
    let days = config.trading_days();
    let n_days = days.len();
    let mut factor_rng = sub_rng(config.seed, 0);
    let common = ar1_path(&mut factor_rng, n_days, config.factor_persistence);
    let groups: Vec<Vec<f64>> = (0..config.n_groups)
        .map(|_| ar1_path(&mut factor_rng, n_days, config.factor_persistence))
        .collect();
    let tickers = config.tickers();

    let stocks: Vec<StockTruth> = (0..config.n_stocks)
        .into_par_iter()
        .map(|i| simulate_stock(config, i, &tickers[i], &common, &groups))
        .collect();

    let panel = VolumePanel {
        tickers,
        days: days.clone(),
        outstanding_shares: stocks.iter().map(|s| s.outstanding_shares).collect(),
        volume: stocks
            .iter()
            .map(|s| {
                s.x.iter()
                    .map(|row| row.iter().map(|v| v.round() as u64).collect())
                    .collect()
            })
            .collect(),
    };
    let truth = GroundTruth {
        days,
        mem_alpha: config.mem_alpha,
        mem_beta: config.mem_beta,
        common_factor: common,
        group_factors: groups,
        stocks,
    };
    Ok((panel, truth))
}

fn simulate_stock(
    config: &SynthConfig,
    i: usize,
    ticker: &str,
    common: &[f64],
    groups: &[Vec<f64>],
) -> StockTruth {
    let mut rng = sub_rng(config.seed, 1 + i as u64);
    let z: f64 = rng.sample(StandardNormal);
    let mult = (config.level_dispersion * z).exp();
    let level = config.base_level * mult;
    let zp: f64 = rng.sample(StandardNormal);
    let open_price = (config.price_seed * (0.4 * zp).exp() * 100.0).round() / 100.0;
    let group = i % config.n_groups;
    let s = &config.seasonal_profile;
    let gamma = config
        .noise_shape
        .map(|k| Gamma::new(k, 1.0 / k).expect("validated shape"));
    let (a, b) = (config.mem_alpha, config.mem_beta);
    let omega = 1.0 - a - b;
    let phi = config.daily_persistence;
    let lam = config.common_factor_loading;
    let glam = config.group_factor_loading;

    let n_days = common.len();
    let mut eta = Vec::with_capacity(n_days);
    let mut mu_all = Vec::with_capacity(n_days);
    let mut eps_all = Vec::with_capacity(n_days);
    let mut x_all = Vec::with_capacity(n_days);
    let mut prev_mean: Option<f64> = None;
    for t in 0..n_days {
        // the intraday component restarts from its unit mean at every open
        let (mut mu_prev, mut ratio_prev) = (1.0, 1.0);
        let anchor = match prev_mean {
            Some(v) => (1.0 - phi) * level + phi * v,
            None => level,
        };
        let shock = (lam * common[t] - 0.5 * lam * lam).exp()
            * (glam * groups[group][t] - 0.5 * glam * glam).exp();
        let eta_t = anchor * shock;
        let mut mu_row = Vec::with_capacity(BINS_PER_DAY);
        let mut eps_row = Vec::with_capacity(BINS_PER_DAY);
        let mut x_row = Vec::with_capacity(BINS_PER_DAY);
        for sj in s.iter() {
            let mu = omega + a * ratio_prev + b * mu_prev;
            let e = gamma.as_ref().map_or(1.0, |g| g.sample(&mut rng));
            mu_row.push(mu);
            eps_row.push(e);
            x_row.push(eta_t * sj * mu * e);
            mu_prev = mu;
            ratio_prev = mu * e;
        }
        prev_mean = Some(
            x_row.iter().zip(s).map(|(x, sj)| x / sj).sum::<f64>() / BINS_PER_DAY as f64,
        );
        eta.push(eta_t);
        mu_all.push(mu_row);
        eps_all.push(eps_row);
        x_all.push(x_row);
    }
    StockTruth {
        ticker: ticker.to_string(),
        group,
        level,
        outstanding_shares: config.outstanding_shares * mult,
        open_price,
        seasonal: s.clone(),
        eta,
        mu: mu_all,
        eps: eps_all,
        x: x_all,
    }
}
