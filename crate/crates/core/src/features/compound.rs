use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calendar::IntradayInterval;
use crate::error::{Error, Result};
use crate::lob::BinRecord;

/// Numeric bin statistics usable as predictors and compound bases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BasicPredictor {
    VolBuyNotional,
    VolSellNotional,
    VolBuyQty,
    VolSellQty,
    VolBuyNrTradesLit,
    VolSellNrTradesLit,
    NrTrades,
    Ntr,
    Qty,
}

impl BasicPredictor {
    pub const ALL: [BasicPredictor; 9] = [
        BasicPredictor::VolBuyNotional,
        BasicPredictor::VolSellNotional,
        BasicPredictor::VolBuyQty,
        BasicPredictor::VolSellQty,
        BasicPredictor::VolBuyNrTradesLit,
        BasicPredictor::VolSellNrTradesLit,
        BasicPredictor::NrTrades,
        BasicPredictor::Ntr,
        BasicPredictor::Qty,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BasicPredictor::VolBuyNotional => "volBuyNotional",
            BasicPredictor::VolSellNotional => "volSellNotional",
            BasicPredictor::VolBuyQty => "volBuyQty",
            BasicPredictor::VolSellQty => "volSellQty",
            BasicPredictor::VolBuyNrTradesLit => "volBuyNrTrades_lit",
            BasicPredictor::VolSellNrTradesLit => "volSellNrTrades_lit",
            BasicPredictor::NrTrades => "nrTrades",
            BasicPredictor::Ntr => "ntr",
            BasicPredictor::Qty => "qty",
        }
    }

    pub fn value(self, r: &BinRecord) -> f64 {
        match self {
            BasicPredictor::VolBuyNotional => r.vol_buy_notional,
            BasicPredictor::VolSellNotional => r.vol_sell_notional,
            BasicPredictor::VolBuyQty => r.vol_buy_qty as f64,
            BasicPredictor::VolSellQty => r.vol_sell_qty as f64,
            BasicPredictor::VolBuyNrTradesLit => r.vol_buy_nr_trades_lit as f64,
            BasicPredictor::VolSellNrTradesLit => r.vol_sell_nr_trades_lit as f64,
            BasicPredictor::NrTrades => r.nr_trades as f64,
            BasicPredictor::Ntr => r.ntr as f64,
            BasicPredictor::Qty => r.volume as f64,
        }
    }
}

impl FromStr for BasicPredictor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if matches!(s, "timeHMs" | "intrIn" | "stock" | "day") {
            return Err(Error::InvalidInput(format!("`{s}` is not a numeric predictor")));
        }
        let alias = if s == "volume" { "qty" } else { s };
        BasicPredictor::ALL
            .into_iter()
            .find(|p| p.name() == alias)
            .ok_or_else(|| Error::InvalidInput(format!("unknown basic predictor `{s}`")))
    }
}

impl fmt::Display for BasicPredictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Window operation turning a basic predictor into a compound one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompoundOp {
    /// Sum over all bins of the previous day.
    Daily,
    /// Sum over the previous day's bins in the same intraday interval.
    Intraday,
    /// Sum over the `k` bins strictly before the current one.
    Past(usize),
}

impl CompoundOp {
    pub fn column_name(self, base: BasicPredictor) -> String {
        match self {
            CompoundOp::Daily => format!("daily_{base}"),
            CompoundOp::Intraday => format!("intraday_{base}"),
            CompoundOp::Past(k) => format!("{base}_{k}"),
        }
    }
}

impl FromStr for CompoundOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "daily" => Ok(CompoundOp::Daily),
            "intraday" => Ok(CompoundOp::Intraday),
            _ => s
                .strip_prefix("past_")
                .and_then(|k| k.parse().ok())
                .filter(|&k: &usize| k > 0)
                .map(CompoundOp::Past)
                .ok_or_else(|| Error::InvalidInput(format!("unknown compound operation `{s}`"))),
        }
    }
}

/// Compound values for one stock's series, ordered by (day, bin) with `n_bins`
/// bins per day and no gaps. `anchor[r]` is the row the window ends before
/// (normally `r` itself). `None` marks rows without enough history.
pub fn compound(
    series: &[f64],
    intervals: &[IntradayInterval],
    n_bins: usize,
    op: CompoundOp,
) -> Vec<Option<f64>> {
    let anchors: Vec<usize> = (0..series.len()).collect();
    compound_anchored(series, intervals, n_bins, op, &anchors)
}

pub(crate) fn compound_anchored(
    series: &[f64],
    intervals: &[IntradayInterval],
    n_bins: usize,
    op: CompoundOp,
    anchors: &[usize],
) -> Vec<Option<f64>> {
    assert_eq!(series.len() % n_bins, 0, "series must cover whole days");
    assert_eq!(intervals.len(), n_bins);
    let mut prefix = Vec::with_capacity(series.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in series {
        acc += v;
        prefix.push(acc);
    }
    let window = |lo: usize, hi: usize| prefix[hi] - prefix[lo];
    (0..series.len())
        .map(|r| {
            let day = r / n_bins;
            let bin = r % n_bins;
            match op {
                CompoundOp::Daily => (day > 0).then(|| window((day - 1) * n_bins, day * n_bins)),
                CompoundOp::Intraday => (day > 0).then(|| {
                    let base = (day - 1) * n_bins;
                    (0..n_bins)
                        .filter(|&j| intervals[j] == intervals[bin])
                        .map(|j| series[base + j])
                        .sum()
                }),
                CompoundOp::Past(k) => {
                    let end = anchors[r];
                    (end >= k).then(|| window(end - k, end))
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::{assign_interval, IntervalConfig};
    use proptest::prelude::*;

    fn intervals(n: usize) -> Vec<IntradayInterval> {
        if n == 26 {
            (0..n).map(|j| assign_interval(j, &IntervalConfig::default())).collect()
        } else {
            vec![IntradayInterval::Midday; n]
        }
    }

    #[test]
    fn past_two_within_day() {
        let v = [10.0, 20.0, 30.0, 40.0];
        let out = compound(&v, &intervals(4), 4, CompoundOp::Past(2));
        assert_eq!(out, vec![None, None, Some(30.0), Some(50.0)]);
    }

    #[test]
    fn daily_of_constant() {
        let v = vec![3.0; 52];
        let out = compound(&v, &intervals(26), 26, CompoundOp::Daily);
        assert!(out[..26].iter().all(Option::is_none));
        assert!(out[26..].iter().all(|x| *x == Some(78.0)));
    }

    #[test]
    fn intraday_uses_previous_day_group() {
        let v: Vec<f64> = (0..52).map(|i| i as f64).collect();
        let out = compound(&v, &intervals(26), 26, CompoundOp::Intraday);
        // bin 0 of day 1: previous day's open bins 0 and 1
        assert_eq!(out[26], Some(1.0));
        // bin 25 of day 1: previous day's close bins 24 and 25
        assert_eq!(out[51], Some(49.0));
        let midday: f64 = (2..24).map(|i| i as f64).sum();
        assert_eq!(out[30], Some(midday));
    }

    #[test]
    fn past_eight_crosses_day_boundary() {
        let v: Vec<f64> = (0..52).map(|i| (i * i % 17) as f64).collect();
        let out = compound(&v, &intervals(26), 26, CompoundOp::Past(8));
        // two bins of today plus six of yesterday's tail
        let expect: f64 = v[20..28].iter().sum();
        assert_eq!(out[28], Some(expect));
    }

    #[test]
    fn op_and_base_parsing() {
        assert_eq!("past_8".parse::<CompoundOp>().unwrap(), CompoundOp::Past(8));
        assert!("weekly".parse::<CompoundOp>().is_err());
        assert!("past_0".parse::<CompoundOp>().is_err());
        assert!("intrIn".parse::<BasicPredictor>().is_err());
        assert_eq!("nrTrades".parse::<BasicPredictor>().unwrap(), BasicPredictor::NrTrades);
        assert_eq!(CompoundOp::Past(2).column_name(BasicPredictor::NrTrades), "nrTrades_2");
        assert_eq!(CompoundOp::Daily.column_name(BasicPredictor::Qty), "daily_qty");
    }

    proptest! {
        #[test]
        fn past_k_matches_brute_force(
            days in 1usize..4,
            k in 1usize..30,
            seed in prop::collection::vec(0.0f64..1000.0, 26 * 4),
        ) {
            let v = &seed[..26 * days];
            let out = compound(v, &intervals(26), 26, CompoundOp::Past(k));
            for r in 0..v.len() {
                if r >= k {
                    let brute: f64 = (1..=k).map(|i| v[r - i]).sum();
                    prop_assert!((out[r].unwrap() - brute).abs() <= 1e-9 * brute.max(1.0));
                } else {
                    prop_assert!(out[r].is_none());
                }
            }
        }
    }
}
