//! VWAP replication: slicing weights from volume forecasts, realized and
//! replicated VWAP, and tracking error in basis points.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::ForecastMode;
use crate::error::{Error, Result};

/// Interim forecasts below this share of the forecast total are raised to it.
pub const FORECAST_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSchedule {
    pub stock: String,
    pub day: NaiveDate,
    pub mode: ForecastMode,
    pub weights: Vec<f64>,
    pub source: String,
    /// A dynamic step found no remaining forecast mass and spread the rest uniformly.
    pub uniform_fallback: bool,
}

fn floored(forecast: &[f64]) -> Result<Vec<f64>> {
    if forecast.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("forecast contains non-finite values".into()));
    }
    let total: f64 = forecast.iter().map(|v| v.max(0.0)).sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput("forecast is zero in every bin".into()));
    }
    let floor = FORECAST_FLOOR * total;
    Ok(forecast.iter().map(|v| v.max(floor)).collect())
}

/// Weights proportional to a day-ahead forecast.
pub fn static_weights(forecast: &[f64]) -> Result<Vec<f64>> {
    let f = floored(forecast)?;
    let total: f64 = f.iter().sum();
    Ok(f.iter().map(|v| v / total).collect())
}

/// Weights from forecasts revised every bin. `paths[i]` is the forecast made at the
/// start of bin `i` (entries before `i` are ignored). Bin `i` takes its forecast
/// share of the weight still unallocated; the last bin takes the exact remainder.
/// Returns the weights and whether the uniform fallback was used.
pub fn dynamic_weights(paths: &[Vec<f64>]) -> Result<(Vec<f64>, bool)> {
    let n = paths.len();
    if n == 0 {
        return Err(Error::InvalidInput("no bins".into()));
    }
    if paths.iter().any(|p| p.len() != n) {
        return Err(Error::InvalidInput("every forecast path must cover all bins".into()));
    }
    let mut weights = Vec::with_capacity(n);
    let mut allocated = 0.0;
    let mut fallback = false;
    for (i, path) in paths.iter().enumerate().take(n - 1) {
        let rest = &path[i..];
        if rest.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("forecast made at bin {i} has non-finite values")));
        }
        let positive: f64 = rest.iter().map(|v| v.max(0.0)).sum();
        let w = if positive > 0.0 {
            let floor = FORECAST_FLOOR * positive;
            let denom: f64 = rest.iter().map(|v| v.max(floor)).sum();
            rest[0].max(floor) / denom * (1.0 - allocated)
        } else {
            fallback = true;
            (1.0 - allocated) / (n - i) as f64
        };
        weights.push(w);
        allocated += w;
    }
    weights.push(1.0 - allocated);
    Ok((weights, fallback))
}

/// Weights equal to realized volume shares (perfect information).
pub fn oracle_weights(volumes: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = volumes.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("zero total volume".into()));
    }
    Ok(volumes.iter().map(|v| v / total).collect())
}

/// Bin prices from last-trade prices, carrying the previous bin's price into empty
/// bins. Leading empty bins take `previous_close` if known, otherwise the first
/// traded price of the day.
pub fn bin_prices(last_prices: &[Option<f64>], previous_close: Option<f64>) -> Result<Vec<f64>> {
    let first = last_prices
        .iter()
        .flatten()
        .next()
        .copied()
        .or(previous_close)
        .ok_or_else(|| Error::InvalidInput("no trade price available for the day".into()))?;
    let mut carry = previous_close.unwrap_or(first);
    Ok(last_prices
        .iter()
        .map(|p| {
            if let Some(p) = p {
                carry = *p;
            }
            carry
        })
        .collect())
}

/// Volume-weighted average of bin prices.
pub fn realized_vwap(prices: &[f64], volumes: &[f64]) -> Result<f64> {
    if prices.len() != volumes.len() {
        return Err(Error::InvalidInput("prices and volumes differ in length".into()));
    }
    let total: f64 = volumes.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("zero total volume".into()));
    }
    // Summed as share-weighted prices, the same order `replicated_vwap` uses.
    Ok(prices.iter().zip(volumes).map(|(p, v)| v / total * p).sum())
}

/// Price achieved by trading `weights` of the parent order at the bin prices.
pub fn replicated_vwap(weights: &[f64], prices: &[f64]) -> f64 {
    weights.iter().zip(prices).map(|(w, p)| w * p).sum::<f64>()
}

/// Mean absolute relative gap between realized and replicated VWAP, in basis points.
pub fn tracking_error_bp(realized: &[f64], replicated: &[f64]) -> Result<f64> {
    if realized.is_empty() || realized.len() != replicated.len() {
        return Err(Error::InvalidInput("need at least one day and aligned series".into()));
    }
    let total: f64 = realized.iter().zip(replicated).map(|(v, r)| ((v - r) / v).abs()).sum();
    Ok(total / realized.len() as f64 * 1e4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VwapDay {
    pub stock: String,
    pub day: NaiveDate,
    pub realized_vwap: f64,
    pub replicated_vwap: f64,
    pub te_bp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VwapReport {
    pub source: String,
    pub mode: ForecastMode,
    pub days: Vec<VwapDay>,
    pub tracking_error_bp: f64,
    #[serde(default)]
    pub config_hash: Option<String>,
}

impl VwapReport {
    pub fn from_days(source: &str, mode: ForecastMode, days: Vec<VwapDay>) -> Result<Self> {
        let realized: Vec<f64> = days.iter().map(|d| d.realized_vwap).collect();
        let replicated: Vec<f64> = days.iter().map(|d| d.replicated_vwap).collect();
        let te = tracking_error_bp(&realized, &replicated)?;
        Ok(Self {
            source: source.into(),
            mode,
            days,
            tracking_error_bp: te,
            config_hash: None,
        })
    }

    pub fn write_days_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for d in &self.days {
            w.serialize(d)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One (stock, day) evaluation of a schedule against realized volumes and prices.
pub fn evaluate_day(schedule: &SliceSchedule, volumes: &[f64], prices: &[f64]) -> Result<VwapDay> {
    let realized = realized_vwap(prices, volumes)?;
    let replicated = replicated_vwap(&schedule.weights, prices);
    Ok(VwapDay {
        stock: schedule.stock.clone(),
        day: schedule.day,
        realized_vwap: realized,
        replicated_vwap: replicated,
        te_bp: ((realized - replicated) / realized).abs() * 1e4,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn static_examples() {
        let w = static_weights(&[3.0; 26]).unwrap();
        assert!(w.iter().all(|v| (v - 1.0 / 26.0).abs() < 1e-15));
        assert_eq!(static_weights(&[2.0, 1.0, 1.0]).unwrap(), vec![0.5, 0.25, 0.25]);
        assert!(static_weights(&[0.0; 5]).is_err());
        let w = static_weights(&[1.0, -2.0, 1.0]).unwrap();
        assert!(w[1] > 0.0 && w[1] < 1e-8);
    }

    #[test]
    fn dynamic_examples() {
        let paths = vec![vec![2.0, 1.0, 1.0]; 3];
        let (w, fb) = dynamic_weights(&paths).unwrap();
        assert_eq!(w, vec![0.5, 0.25, 0.25]);
        assert!(!fb);
        let f: Vec<f64> = (0..26).map(|j| 1.0 + (j as f64 - 12.5).powi(2)).collect();
        let (w, _) = dynamic_weights(&vec![f.clone(); 26]).unwrap();
        let s = static_weights(&f).unwrap();
        for (a, b) in w.iter().zip(&s) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn dynamic_zero_remaining_falls_back_uniform() {
        let mut paths = vec![vec![1.0, 0.0, 0.0, 0.0]; 4];
        paths[1] = vec![1.0, 0.0, 0.0, 0.0];
        let (w, fb) = dynamic_weights(&paths).unwrap();
        assert!(fb);
        assert!((w[0] - 1.0).abs() < 1e-8);
        assert!((w[1] - w[2]).abs() < 1e-20 && (w[2] - w[3]).abs() < 1e-20);
        assert_eq!(w.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn dynamic_weights_sum_to_one_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let paths: Vec<Vec<f64>> = (0..26).map(|_| (0..26).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
            let (w, _) = dynamic_weights(&paths).unwrap();
            assert_eq!(w.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn vwap_examples() {
        assert_eq!(realized_vwap(&[10.0, 20.0], &[1.0, 3.0]).unwrap(), 17.5);
        assert!((realized_vwap(&[7.0; 4], &[1.0, 5.0, 0.0, 2.0]).unwrap() - 7.0).abs() < 1e-15);
        assert!(realized_vwap(&[1.0], &[0.0]).is_err());
        assert_eq!(tracking_error_bp(&[100.0], &[100.0]).unwrap(), 0.0);
        assert!((tracking_error_bp(&[100.0], &[99.0]).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn price_carry_forward() {
        let p = bin_prices(&[None, Some(10.0), None, None, Some(11.0), None], None).unwrap();
        assert_eq!(p, vec![10.0, 10.0, 10.0, 10.0, 11.0, 11.0]);
        let p = bin_prices(&[None, Some(10.0)], Some(9.5)).unwrap();
        assert_eq!(p, vec![9.5, 10.0]);
        assert!(bin_prices(&[None, None], None).is_err());
    }

    proptest! {
        #[test]
        fn oracle_schedule_has_zero_tracking_error(
            vols in prop::collection::vec(0.0f64..1e6, 26),
            prices in prop::collection::vec(1.0f64..500.0, 26),
        ) {
            prop_assume!(vols.iter().sum::<f64>() > 0.0);
            let w = oracle_weights(&vols).unwrap();
            let realized = realized_vwap(&prices, &vols).unwrap();
            let replicated = replicated_vwap(&w, &prices);
            prop_assert!(tracking_error_bp(&[realized], &[replicated]).unwrap() < 1e-12);
            prop_assert!(((realized - replicated) / realized).abs() < 1e-12);
        }

        #[test]
        fn static_weights_normalized(f in prop::collection::vec(0.0f64..1e4, 1..40)) {
            prop_assume!(f.iter().sum::<f64>() > 0.0);
            let w = static_weights(&f).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|v| *v >= 0.0));
        }
    }
}
