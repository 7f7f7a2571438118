use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::message::{EventType, LobEvent, Side};
use crate::calendar::{assign_interval, IntradayInterval, TradingCalendar};
use crate::error::Result;

/// Per (stock, day, bin) trade statistics. Column names follow the usual
/// LOBSTER-derived predictor naming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRecord {
    pub stock: String,
    pub day: NaiveDate,
    pub bin_index: usize,
    #[serde(rename = "timeHMs")]
    pub time_hms: u32,
    #[serde(rename = "intrIn")]
    pub intr_in: IntradayInterval,
    #[serde(rename = "volBuyNotional")]
    pub vol_buy_notional: f64,
    #[serde(rename = "volSellNotional")]
    pub vol_sell_notional: f64,
    #[serde(rename = "volBuyQty")]
    pub vol_buy_qty: u64,
    #[serde(rename = "volSellQty")]
    pub vol_sell_qty: u64,
    #[serde(rename = "volBuyNrTrades_lit")]
    pub vol_buy_nr_trades_lit: u64,
    #[serde(rename = "volSellNrTrades_lit")]
    pub vol_sell_nr_trades_lit: u64,
    #[serde(rename = "nrTrades")]
    pub nr_trades: u64,
    pub ntr: u64,
    pub volume: u64,
    /// Price of the last execution in the bin, in currency units.
    #[serde(rename = "lastPrice")]
    pub last_price: Option<f64>,
}

impl BinRecord {
    pub fn empty(stock: &str, day: NaiveDate, bin: usize, cal: &TradingCalendar) -> Self {
        Self {
            stock: stock.to_string(),
            day,
            bin_index: bin,
            time_hms: cal.time_hms(bin),
            intr_in: assign_interval(bin, &cal.intervals),
            vol_buy_notional: 0.0,
            vol_sell_notional: 0.0,
            vol_buy_qty: 0,
            vol_sell_qty: 0,
            vol_buy_nr_trades_lit: 0,
            vol_sell_nr_trades_lit: 0,
            nr_trades: 0,
            ntr: 0,
            volume: 0,
            last_price: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinOutput {
    pub records: Vec<BinRecord>,
    /// Events outside the session (and its auction grace period).
    pub dropped: usize,
}

#[derive(Default, Clone, Copy)]
struct Tally {
    buy_notional: u128,
    sell_notional: u128,
    buy_qty: u64,
    sell_qty: u64,
    buy_lit: u64,
    sell_lit: u64,
    trades: u64,
    lit: u64,
    last: Option<(f64, i64)>,
}

/// Aggregate one day of events for one stock into `calendar.n_bins` records.
pub fn bin_events(
    events: &[LobEvent],
    day: NaiveDate,
    stock: &str,
    calendar: &TradingCalendar,
) -> BinOutput {
    let mut tallies = vec![Tally::default(); calendar.n_bins];
    let mut dropped = 0;
    for e in events {
        let Some(bin) = calendar.bin_of(e.time) else {
            dropped += 1;
            continue;
        };
        if !e.event_type.is_execution() {
            continue;
        }
        let t = &mut tallies[bin];
        let notional = e.size as u128 * e.price.max(0) as u128;
        let lit = e.event_type == EventType::ExecuteVisible;
        match e.direction {
            Side::Buy => {
                t.buy_qty += e.size;
                t.buy_notional += notional;
                t.buy_lit += lit as u64;
            }
            Side::Sell => {
                t.sell_qty += e.size;
                t.sell_notional += notional;
                t.sell_lit += lit as u64;
            }
        }
        t.trades += 1;
        t.lit += lit as u64;
        // Keep the latest print; ties on time resolve to the higher price so the
        // result does not depend on same-timestamp ordering.
        if t.last.is_none_or(|(time, price)| e.time > time || (e.time == time && e.price > price)) {
            t.last = Some((e.time, e.price));
        }
    }
    let records = tallies
        .iter()
        .enumerate()
        .map(|(bin, t)| {
            let mut r = BinRecord::empty(stock, day, bin, calendar);
            r.vol_buy_notional = t.buy_notional as f64 / 1e4;
            r.vol_sell_notional = t.sell_notional as f64 / 1e4;
            r.vol_buy_qty = t.buy_qty;
            r.vol_sell_qty = t.sell_qty;
            r.vol_buy_nr_trades_lit = t.buy_lit;
            r.vol_sell_nr_trades_lit = t.sell_lit;
            r.nr_trades = t.trades;
            r.ntr = t.lit;
            r.volume = t.buy_qty + t.sell_qty;
            r.last_price = t.last.map(|(_, p)| p as f64 / 1e4);
            r
        })
        .collect();
    BinOutput { records, dropped }
}

pub fn write_bins<W: Write>(out: W, records: &[BinRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_bins<R: Read>(input: R) -> Result<Vec<BinRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
