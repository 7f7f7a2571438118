//! Order flow imbalance: per-level order flows from consecutive book snapshots,
//! best-level and depth-scaled multi-level OFI, the event-based six-term form,
//! and their join onto the feature panel.

use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::{ForecastMode, TradingCalendar};
use crate::error::{Error, Result};
use crate::features::{FeaturePanel, Provenance, RowKey};
use crate::lob::{BookSnapshot, EventType, LobEvent, Side, BOOK_LEVELS};
use crate::matching::OrderBook;

/// Levels used for the multi-level OFI and the depth normalizer.
pub const OFI_LEVELS: usize = BOOK_LEVELS;

/// Signed order flow at `level` (0 = best) on `side` between two snapshots, or
/// `None` when either snapshot lacks that level.
pub fn order_flow(prev: &BookSnapshot, cur: &BookSnapshot, level: usize, side: Side) -> Option<f64> {
    let (p, c) = (&prev.levels[level], &cur.levels[level]);
    match side {
        Side::Buy => {
            let (p0, p1) = (p.bid_price?, c.bid_price?);
            let (q0, q1) = (p.bid_size as f64, c.bid_size as f64);
            Some(match p1.cmp(&p0) {
                std::cmp::Ordering::Greater => q1,
                std::cmp::Ordering::Equal => q1 - q0,
                std::cmp::Ordering::Less => -q1,
            })
        }
        Side::Sell => {
            let (p0, p1) = (p.ask_price?, c.ask_price?);
            let (q0, q1) = (p.ask_size as f64, c.ask_size as f64);
            Some(match p1.cmp(&p0) {
                std::cmp::Ordering::Greater => -q1,
                std::cmp::Ordering::Equal => q1 - q0,
                std::cmp::Ordering::Less => q1,
            })
        }
    }
}

/// Best-level limit (L), cancel (C) and marketable execution (M) shares per side.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ContTallies {
    pub l_bid: f64,
    pub c_bid: f64,
    pub m_bid: f64,
    pub l_ask: f64,
    pub c_ask: f64,
    pub m_ask: f64,
}

impl ContTallies {
    pub fn ofi(&self) -> f64 {
        self.l_bid - self.c_bid - self.m_bid - self.l_ask + self.c_ask - self.m_ask
    }

    fn add(&mut self, o: &ContTallies) {
        self.l_bid += o.l_bid;
        self.c_bid += o.c_bid;
        self.m_bid += o.m_bid;
        self.l_ask += o.l_ask;
        self.c_ask += o.c_ask;
        self.m_ask += o.m_ask;
    }
}

/// Classify one event against the book as it stood before the event.
pub fn classify_event(book: &OrderBook, e: &LobEvent) -> ContTallies {
    let mut t = ContTallies::default();
    let size = e.size as f64;
    match e.event_type {
        EventType::NewLimit => {
            let crosses = match e.direction {
                Side::Buy => book.best_ask().is_some_and(|a| e.price >= a),
                Side::Sell => book.best_bid().is_some_and(|b| e.price <= b),
            };
            if crosses {
                // Shares taken at the opposite best count as marketable flow there.
                let opp = e.direction.opposite();
                let best = book.best(opp).expect("crossing needs a best");
                let taken = size.min(book.level_size(opp, best) as f64);
                match opp {
                    Side::Buy => t.m_bid += taken,
                    Side::Sell => t.m_ask += taken,
                }
                return t;
            }
            match e.direction {
                Side::Buy if book.best_bid().is_none_or(|b| e.price >= b) => t.l_bid += size,
                Side::Sell if book.best_ask().is_none_or(|a| e.price <= a) => t.l_ask += size,
                _ => {}
            }
        }
        EventType::CancelPartial | EventType::CancelFull => {
            if let Some((side, price, remaining)) = book.order(e.order_id) {
                if book.best(side) == Some(price) {
                    let removed = if e.event_type == EventType::CancelPartial {
                        e.size.min(remaining)
                    } else {
                        remaining
                    } as f64;
                    match side {
                        Side::Buy => t.c_bid += removed,
                        Side::Sell => t.c_ask += removed,
                    }
                }
            }
        }
        EventType::ExecuteVisible => {
            if let Some(best) = book.best(e.direction) {
                let at_best = size.min(book.level_size(e.direction, best) as f64);
                match e.direction {
                    Side::Buy => t.m_bid += at_best,
                    Side::Sell => t.m_ask += at_best,
                }
            }
        }
        EventType::ExecuteHidden | EventType::Cross | EventType::Halt => {}
    }
    t
}

/// Unscaled OFI quantities over a window; every field is additive over
/// consecutive sub-windows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawOfi {
    /// Σ(OF^b − OF^a) per level, best first.
    pub levels: [f64; OFI_LEVELS],
    /// Σ over the window's snapshots of Σ_m (q^b + q^a).
    pub depth_sum: f64,
    pub pairs: usize,
    pub missing_levels: u64,
    pub tallies: ContTallies,
}

impl RawOfi {
    /// Accumulate one consecutive snapshot pair.
    pub fn add_pair(&mut self, prev: &BookSnapshot, cur: &BookSnapshot) {
        for m in 0..OFI_LEVELS {
            let b = order_flow(prev, cur, m, Side::Buy);
            let a = order_flow(prev, cur, m, Side::Sell);
            self.missing_levels += b.is_none() as u64 + a.is_none() as u64;
            self.levels[m] += b.unwrap_or(0.0) - a.unwrap_or(0.0);
            let l = &cur.levels[m];
            self.depth_sum += (l.bid_size + l.ask_size) as f64;
        }
        self.pairs += 1;
    }

    pub fn merge(&mut self, other: &RawOfi) {
        for (a, b) in self.levels.iter_mut().zip(&other.levels) {
            *a += b;
        }
        self.depth_sum += other.depth_sum;
        self.pairs += other.pairs;
        self.missing_levels += other.missing_levels;
        self.tallies.add(&other.tallies);
    }

    pub fn best_level(&self) -> f64 {
        self.levels[0]
    }

    /// Average depth per level and side over the window.
    pub fn average_depth(&self) -> f64 {
        self.depth_sum / (2.0 * OFI_LEVELS as f64 * self.pairs as f64)
    }

    /// Depth-scaled per-level OFI; errors when the window saw an empty book.
    pub fn scaled(&self) -> Result<[f64; OFI_LEVELS]> {
        let q = self.average_depth();
        if !(q > 0.0) {
            return Err(Error::Numerical("average book depth is zero in the window".into()));
        }
        Ok(self.levels.map(|v| v / q))
    }
}

/// Snapshot-based OFI over a window of consecutive snapshots (no event tallies).
pub fn window_ofi(snapshots: &[BookSnapshot]) -> RawOfi {
    let mut raw = RawOfi::default();
    for w in snapshots.windows(2) {
        raw.add_pair(&w[0], &w[1]);
    }
    raw
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfiRow {
    pub stock: String,
    pub day: NaiveDate,
    pub bin: usize,
    pub ofi: [f64; OFI_LEVELS],
    pub best_level: f64,
    pub ofi_cont: f64,
    /// Fewer than two snapshots in the window; every value is 0.
    pub empty_window: bool,
}

impl OfiRow {
    pub fn column_names() -> Vec<String> {
        let signed: Vec<String> = (0..OFI_LEVELS)
            .map(|k| format!("ofi_{k}"))
            .chain(["best_level".to_string(), "ofi_cont".to_string()])
            .collect();
        let abs: Vec<String> = signed.iter().map(|n| format!("abs_{n}")).collect();
        signed.into_iter().chain(abs).collect()
    }

    pub fn signed_values(&self) -> Vec<f64> {
        self.ofi.iter().copied().chain([self.best_level, self.ofi_cont]).collect()
    }

    /// Signed values followed by their absolute values, in `column_names` order.
    pub fn values(&self) -> Vec<f64> {
        let s = self.signed_values();
        let a = absolutize(&s);
        s.into_iter().chain(a).collect()
    }
}

pub fn absolutize(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| v.abs()).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfiCounters {
    pub missing_levels: u64,
    pub empty_windows: u64,
}

/// Replay one day's events and compute a row per bin. Each bin's window starts
/// from the book as the previous bin left it.
pub fn day_ofi(
    events: &[LobEvent],
    stock: &str,
    day: NaiveDate,
    calendar: &TradingCalendar,
) -> Result<(Vec<OfiRow>, OfiCounters)> {
    let mut raws = vec![RawOfi::default(); calendar.n_bins];
    let mut book = OrderBook::new();
    let mut fills = Vec::new();
    let mut prev = book.snapshot();
    for e in events {
        let bin = calendar.bin_of(e.time);
        if bin.is_none() && e.time >= calendar.open_secs {
            continue;
        }
        let tallies = bin.map(|_| classify_event(&book, e));
        fills.clear();
        book.apply_event(e, &mut fills);
        let cur = book.snapshot();
        if let (Some(b), Some(t)) = (bin, tallies) {
            raws[b].add_pair(&prev, &cur);
            raws[b].tallies.add(&t);
        }
        prev = cur;
    }
    let mut counters = OfiCounters::default();
    let mut rows = Vec::with_capacity(raws.len());
    for (bin, raw) in raws.iter().enumerate() {
        counters.missing_levels += raw.missing_levels;
        let empty = raw.pairs == 0;
        counters.empty_windows += empty as u64;
        let ofi = if empty {
            [0.0; OFI_LEVELS]
        } else {
            raw.scaled().map_err(|e| Error::Numerical(format!("{stock} {day} bin {bin}: {e}")))?
        };
        rows.push(OfiRow {
            stock: stock.to_string(),
            day,
            bin,
            ofi,
            best_level: raw.best_level(),
            ofi_cont: raw.tallies.ofi(),
            empty_window: empty,
        });
    }
    Ok((rows, counters))
}

/// Append OFI columns to `panel`, lagged like the basic predictors: dynamic rows
/// see the previous bin, static rows the previous day's last bin.
pub fn join_ofi(panel: &mut FeaturePanel, rows: &[OfiRow]) -> Result<()> {
    let by_key: HashMap<RowKey, &OfiRow> = rows
        .iter()
        .map(|r| {
            (
                RowKey {
                    stock: r.stock.clone(),
                    day: r.day,
                    bin: r.bin,
                },
                r,
            )
        })
        .collect();
    let mut order: BTreeMap<&str, Vec<(NaiveDate, usize)>> = BTreeMap::new();
    for r in rows {
        order.entry(r.stock.as_str()).or_default().push((r.day, r.bin));
    }
    for seq in order.values_mut() {
        seq.sort_unstable();
        seq.dedup();
    }
    let names = OfiRow::column_names();
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(panel.n_rows()); names.len()];
    for key in &panel.keys {
        let seq = order
            .get(key.stock.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("no OFI rows for {}", key.stock)))?;
        let pos = seq
            .binary_search(&(key.day, key.bin))
            .map_err(|_| Error::InvalidInput(format!("no OFI row for {} {} bin {}", key.stock, key.day, key.bin)))?;
        let source = match panel.mode {
            ForecastMode::Dynamic => pos.checked_sub(1).map(|p| seq[p]),
            ForecastMode::Static => {
                let prev_day = seq[..pos].iter().rev().find(|(d, _)| *d < key.day).map(|(d, _)| *d);
                prev_day.and_then(|d| seq.iter().filter(|(dd, _)| *dd == d).max().copied())
            }
        }
        .ok_or_else(|| Error::InvalidInput(format!("no lagged OFI row for {} {} bin {}", key.stock, key.day, key.bin)))?;
        let row = by_key[&RowKey {
            stock: key.stock.clone(),
            day: source.0,
            bin: source.1,
        }];
        for (c, v) in cols.iter_mut().zip(row.values()) {
            c.push(v);
        }
    }
    for (name, values) in names.iter().zip(cols) {
        panel.add_column(name, Provenance::Ofi, false, values)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lob::Level;
    use proptest::prelude::*;

    fn uniform(q: u64, best_bid: i64, best_ask: i64) -> BookSnapshot {
        let mut s = BookSnapshot::default();
        for (m, l) in s.levels.iter_mut().enumerate() {
            *l = Level {
                bid_price: Some(best_bid - 100 * m as i64),
                bid_size: q,
                ask_price: Some(best_ask + 100 * m as i64),
                ask_size: q,
            };
        }
        s
    }

    #[test]
    fn order_flow_cases() {
        let a = uniform(10, 10_000, 10_100);
        let mut b = a.clone();
        b.levels[0].bid_price = Some(10_050);
        b.levels[0].bid_size = 7;
        assert_eq!(order_flow(&a, &b, 0, Side::Buy), Some(7.0));
        let mut c = a.clone();
        c.levels[0].bid_size = 4;
        assert_eq!(order_flow(&a, &c, 0, Side::Buy), Some(-6.0));
        let mut d = a.clone();
        d.levels[0].ask_price = Some(10_200);
        d.levels[0].ask_size = 5;
        assert_eq!(order_flow(&a, &d, 0, Side::Sell), Some(-5.0));
        let mut e = a.clone();
        e.levels[0].bid_price = Some(9_900);
        e.levels[0].bid_size = 3;
        assert_eq!(order_flow(&a, &e, 0, Side::Buy), Some(-3.0));
        let mut f = a.clone();
        f.levels[0].ask_price = Some(10_050);
        f.levels[0].ask_size = 2;
        assert_eq!(order_flow(&a, &f, 0, Side::Sell), Some(2.0));
        let mut g = a.clone();
        g.levels[3].bid_price = None;
        assert_eq!(order_flow(&a, &g, 3, Side::Buy), None);
    }

    #[test]
    fn single_price_up_event_scales_to_one() {
        let q = 40;
        let a = uniform(q, 10_000, 10_200);
        let mut b = a.clone();
        b.levels[0].bid_price = Some(10_100);
        let raw = window_ofi(&[a, b]);
        let s = raw.scaled().unwrap();
        assert_eq!(s[0], 1.0);
        assert!(s[1..].iter().all(|v| *v == 0.0));
        assert_eq!(raw.best_level(), q as f64);
    }

    #[test]
    fn doubling_sizes_leaves_scaled_ofi_unchanged() {
        let mut snaps = vec![uniform(10, 10_000, 10_100)];
        let mut s = snaps[0].clone();
        s.levels[0].bid_size = 13;
        snaps.push(s.clone());
        s.levels[2].ask_size = 2;
        s.levels[0].ask_price = Some(10_000 + 50);
        snaps.push(s);
        let doubled: Vec<BookSnapshot> = snaps
            .iter()
            .map(|s| {
                let mut d = s.clone();
                for l in d.levels.iter_mut() {
                    l.bid_size *= 2;
                    l.ask_size *= 2;
                }
                d
            })
            .collect();
        let a = window_ofi(&snaps).scaled().unwrap();
        let b = window_ofi(&doubled).scaled().unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mirrored_activity_cancels() {
        let a = uniform(10, 10_000, 10_100);
        let mut b = a.clone();
        b.levels[0].bid_size = 15;
        b.levels[0].ask_size = 15;
        assert_eq!(window_ofi(&[a, b]).best_level(), 0.0);
    }

    #[test]
    fn empty_book_window_is_an_error() {
        let e = BookSnapshot::default();
        assert!(window_ofi(&[e.clone(), e]).scaled().is_err());
    }

    #[test]
    fn cont_substitution() {
        let t = ContTallies {
            l_bid: 5.0,
            c_bid: 2.0,
            m_bid: 1.0,
            l_ask: 3.0,
            c_ask: 1.0,
            m_ask: 0.0,
        };
        assert_eq!(t.ofi(), 0.0);
        assert_eq!(ContTallies::default().ofi(), 0.0);
    }

    #[test]
    fn column_layout() {
        let names = OfiRow::column_names();
        assert_eq!(names.len(), 24);
        assert_eq!(names[0], "ofi_0");
        assert_eq!(names[10], "best_level");
        assert_eq!(names[11], "ofi_cont");
        assert_eq!(names[12], "abs_ofi_0");
        assert_eq!(names[23], "abs_ofi_cont");
    }

    proptest! {
        #[test]
        fn absolutize_properties(v in prop::collection::vec(-1e6f64..1e6, 0..30)) {
            let a = absolutize(&v);
            prop_assert_eq!(absolutize(&a), a.clone());
            for (x, ax) in v.iter().zip(&a) {
                prop_assert!(*ax >= *x && *ax >= -*x);
            }
        }
    }
}
