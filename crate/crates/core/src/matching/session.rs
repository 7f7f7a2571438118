//! Replay of an event stream with an agent working a parent order through
//! passive child orders, one agent action per step of replayed events.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::book::{BookCounters, Fill, OrderBook, Owner};
use crate::calendar::TradingCalendar;
use crate::error::{Error, Result};
use crate::lob::{LobEvent, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepostPolicy {
    /// Orders stay where they were posted until filled or the bin ends.
    Never,
    /// Cancel and repost at the current best once the best moved away by more than one tick.
    OnMove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Parent quantity as a fraction of the day's realized volume.
    pub parent_fraction: f64,
    pub side: Side,
    /// Replayed events between two agent actions.
    pub events_per_step: usize,
    pub repost: RepostPolicy,
    /// Price tick in 1e-4 currency units.
    pub tick: i64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            parent_fraction: 0.01,
            side: Side::Sell,
            events_per_step: 100,
            repost: RepostPolicy::OnMove,
            tick: 100,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.events_per_step == 0 || self.tick <= 0 {
            return Err(Error::Config("events_per_step and tick must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.parent_fraction) {
            return Err(Error::Config("parent_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Parent quantity for a day with `daily_volume` traded shares.
    pub fn parent_quantity(&self, daily_volume: u64) -> u64 {
        (self.parent_fraction * daily_volume as f64).round() as u64
    }
}

/// Integer child sizes proportional to `weights` that sum to `quantity` exactly.
/// Leftover shares after flooring go to the largest fractional parts, lower bin first on ties.
pub fn child_sizes(weights: &[f64], quantity: u64) -> Result<Vec<u64>> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("weights sum to {total}, expected 1")));
    }
    let raw: Vec<f64> = weights.iter().map(|w| w / total * quantity as f64).collect();
    let mut sizes: Vec<u64> = raw.iter().map(|r| r.floor() as u64).collect();
    let assigned: u64 = sizes.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let mut left = quantity.saturating_sub(assigned);
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if weights[i] > 0.0 {
            sizes[i] += 1;
            left -= 1;
        }
    }
    Ok(sizes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TradeKind {
    Passive,
    Cleanup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub step: usize,
    pub bin: usize,
    pub side: Side,
    /// `None` for cleanup shares the book had no liquidity for.
    pub price: Option<f64>,
    pub size: u64,
    pub kind: TradeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinFill {
    pub bin: usize,
    pub child: u64,
    pub passive: u64,
    pub cleanup: u64,
    /// Part of `cleanup` that found no opposite liquidity and is booked at no price.
    pub unmatched_cleanup: u64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillReport {
    pub side: Side,
    pub parent_quantity: u64,
    pub passive_filled: u64,
    pub cleanup_market_filled: u64,
    pub fill_ratio: f64,
    pub unmatched_cleanup: u64,
    pub reposts: u64,
    pub per_bin: Vec<BinFill>,
    pub trades: Vec<TradeRecord>,
    pub book_counters: BookCounters,
}

impl FillReport {
    pub fn write_trades_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "bin", "side", "price", "size", "kind"])?;
        for t in &self.trades {
            w.write_record([
                t.step.to_string(),
                t.bin.to_string(),
                match t.side {
                    Side::Buy => "buy".into(),
                    Side::Sell => "sell".into(),
                },
                t.price.map_or(String::new(), |p| p.to_string()),
                t.size.to_string(),
                match t.kind {
                    TradeKind::Passive => "passive".into(),
                    TradeKind::Cleanup => "cleanup".into(),
                },
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Relative fill-ratio advantage of `model` over `baseline`.
pub fn fill_advantage(model: &FillReport, baseline: &FillReport) -> Result<f64> {
    if model.parent_quantity != baseline.parent_quantity || model.side != baseline.side {
        return Err(Error::InvalidInput("reports come from different sessions".into()));
    }
    if baseline.fill_ratio == 0.0 {
        return Err(Error::InvalidInput("baseline fill ratio is 0; advantage undefined".into()));
    }
    Ok((model.fill_ratio - baseline.fill_ratio) / baseline.fill_ratio)
}

struct AgentOrder {
    id: u64,
    price: i64,
}

struct Agent<'a> {
    cfg: &'a SessionConfig,
    side: Side,
    orders: Vec<AgentOrder>,
    child: u64,
    passive: u64,
    reposts: u64,
    trades: Vec<TradeRecord>,
}

impl Agent<'_> {
    fn resting(&self, book: &OrderBook) -> u64 {
        self.orders.iter().filter_map(|o| book.order(o.id)).map(|(_, _, s)| s).sum()
    }

    fn credit(&mut self, fills: &[Fill], step: usize, bin: usize) {
        for f in fills.iter().filter(|f| f.maker_owner == Owner::Agent) {
            self.passive += f.size;
            self.trades.push(TradeRecord {
                step,
                bin,
                side: self.side,
                price: Some(f.price as f64 / 1e4),
                size: f.size,
                kind: TradeKind::Passive,
            });
        }
    }

    fn post_price(&self, book: &OrderBook) -> Option<i64> {
        let tick = self.cfg.tick;
        match self.side {
            Side::Sell => book.best_ask().or(book.best_bid().map(|b| b + tick)),
            Side::Buy => book.best_bid().or(book.best_ask().map(|a| (a - tick).max(tick))),
        }
    }

    fn act(&mut self, book: &mut OrderBook, fills: &mut Vec<Fill>, step: usize, bin: usize) {
        self.orders.retain(|o| book.order(o.id).is_some());
        if self.cfg.repost == RepostPolicy::OnMove {
            let tick = self.cfg.tick;
            let best = book.best(self.side);
            let stale: Vec<u64> = self
                .orders
                .iter()
                .filter(|o| match (self.side, best) {
                    (Side::Sell, Some(a)) => a < o.price - tick,
                    (Side::Buy, Some(b)) => b > o.price + tick,
                    _ => false,
                })
                .map(|o| o.id)
                .collect();
            for id in stale {
                book.cancel(id, None);
                self.reposts += 1;
            }
            self.orders.retain(|o| book.order(o.id).is_some());
        }
        let unposted = self.child - self.passive - self.resting(book);
        if unposted == 0 {
            return;
        }
        let Some(price) = self.post_price(book) else { return };
        fills.clear();
        let id = book.add_agent_limit(self.side, price, unposted, fills);
        self.credit(fills, step, bin);
        self.orders.push(AgentOrder { id, price });
    }
}

/// Run one session over a day's `events` with slicing `weights` for a parent of `quantity` shares.
pub fn run_session(
    events: &[LobEvent],
    calendar: &TradingCalendar,
    weights: &[f64],
    quantity: u64,
    cfg: &SessionConfig,
) -> Result<FillReport> {
    run_session_observed(events, calendar, weights, quantity, cfg, |_| {})
}

/// As [`run_session`], calling `observe` with the book after every replayed event.
pub fn run_session_observed(
    events: &[LobEvent],
    calendar: &TradingCalendar,
    weights: &[f64],
    quantity: u64,
    cfg: &SessionConfig,
    mut observe: impl FnMut(&OrderBook),
) -> Result<FillReport> {
    cfg.validate()?;
    let n_bins = calendar.n_bins;
    if weights.len() != n_bins {
        return Err(Error::InvalidInput(format!("{} weights for {n_bins} bins", weights.len())));
    }
    let children = child_sizes(weights, quantity)?;

    // Events before the open prime the book; events after the close are not replayed.
    let mut per_bin: Vec<Vec<&LobEvent>> = vec![Vec::new(); n_bins];
    let mut pre_open = Vec::new();
    for e in events {
        match calendar.bin_of(e.time) {
            Some(b) => per_bin[b].push(e),
            None if e.time < calendar.open_secs => pre_open.push(e),
            None => {}
        }
    }
    if let Some(last) = (0..n_bins).rev().find(|&b| !per_bin[b].is_empty()) {
        if last + 1 < n_bins {
            return Err(Error::StreamExhausted {
                bin: last + 1,
                events: events.len(),
                detail: format!("no events after bin {last} of {n_bins}"),
            });
        }
    } else {
        return Err(Error::StreamExhausted {
            bin: 0,
            events: events.len(),
            detail: "no events inside the session".into(),
        });
    }

    let mut book = OrderBook::new();
    let mut fills = Vec::new();
    for e in pre_open {
        fills.clear();
        book.apply_event(e, &mut fills);
        observe(&book);
    }

    let side = cfg.side;
    let mut agent = Agent {
        cfg,
        side,
        orders: Vec::new(),
        child: 0,
        passive: 0,
        reposts: 0,
        trades: Vec::new(),
    };
    let mut bins = Vec::with_capacity(n_bins);
    let mut step = 0usize;
    let mut unmatched_total = 0;
    let mut passive_total = 0;
    let mut cleanup_total = 0;
    for (bin, bin_events) in per_bin.iter().enumerate() {
        agent.child = children[bin];
        agent.passive = 0;
        agent.orders.clear();
        let chunks: Vec<&[&LobEvent]> = if bin_events.is_empty() {
            vec![&[]]
        } else {
            bin_events.chunks(cfg.events_per_step).collect()
        };
        let steps = chunks.len();
        for chunk in chunks {
            if agent.child > 0 {
                agent.act(&mut book, &mut fills, step, bin);
            }
            for e in chunk {
                fills.clear();
                book.apply_event(e, &mut fills);
                agent.credit(&fills, step, bin);
                observe(&book);
            }
            step += 1;
        }
        for o in std::mem::take(&mut agent.orders) {
            book.cancel(o.id, None);
        }
        let remainder = agent.child - agent.passive;
        let mut unmatched = 0;
        if remainder > 0 {
            fills.clear();
            unmatched = book.market_order(side, remainder, &mut fills);
            for f in &fills {
                agent.trades.push(TradeRecord {
                    step,
                    bin,
                    side,
                    price: Some(f.price as f64 / 1e4),
                    size: f.size,
                    kind: TradeKind::Cleanup,
                });
            }
            if unmatched > 0 {
                agent.trades.push(TradeRecord {
                    step,
                    bin,
                    side,
                    price: None,
                    size: unmatched,
                    kind: TradeKind::Cleanup,
                });
            }
            observe(&book);
        }
        passive_total += agent.passive;
        cleanup_total += remainder;
        unmatched_total += unmatched;
        bins.push(BinFill {
            bin,
            child: agent.child,
            passive: agent.passive,
            cleanup: remainder,
            unmatched_cleanup: unmatched,
            steps,
        });
    }
    debug_assert_eq!(passive_total + cleanup_total, quantity);
    Ok(FillReport {
        side,
        parent_quantity: quantity,
        passive_filled: passive_total,
        cleanup_market_filled: cleanup_total,
        fill_ratio: if quantity == 0 {
            0.0
        } else {
            passive_total as f64 / quantity as f64
        },
        unmatched_cleanup: unmatched_total,
        reposts: agent.reposts,
        per_bin: bins,
        trades: agent.trades,
        book_counters: book.counters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lob::EventType;
    use proptest::prelude::*;

    fn ev(time: f64, event_type: EventType, id: u64, size: u64, price: i64, direction: Side) -> LobEvent {
        LobEvent {
            time,
            event_type,
            order_id: id,
            size,
            price,
            direction,
        }
    }

    fn one_bin_calendar() -> TradingCalendar {
        TradingCalendar {
            n_bins: 1,
            ..TradingCalendar::default()
        }
    }

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(child_sizes(&[1.0 / 3.0; 3], 10).unwrap(), vec![4, 3, 3]);
        assert_eq!(child_sizes(&[0.5, 0.0, 0.5], 3).unwrap(), vec![2, 0, 1]);
        assert_eq!(child_sizes(&[0.25; 4], 0).unwrap(), vec![0; 4]);
        assert!(child_sizes(&[0.5, 0.6], 10).is_err());
    }

    proptest! {
        #[test]
        fn child_sizes_conserve_quantity(raw in prop::collection::vec(0.0f64..1.0, 1..30), q in 0u64..1_000_000) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 0.0);
            let w: Vec<f64> = raw.iter().map(|r| r / total).collect();
            let s = child_sizes(&w, q).unwrap();
            prop_assert_eq!(s.iter().sum::<u64>(), q);
            for (si, wi) in s.iter().zip(&w) {
                prop_assert!((*si as f64 - wi * q as f64).abs() < 1.0 + 1e-6);
            }
        }
    }

    #[test]
    fn market_buy_crosses_lone_agent_sell() {
        let open = 9.5 * 3600.0;
        // Step 0 sees an empty book; step 1 posts the agent's 10 as the only ask,
        // one tick above the bid, and the replayed buy of 15 lifts it.
        let events = vec![
            ev(open + 1.0, EventType::NewLimit, 1, 50, 990_000, Side::Buy),
            ev(open + 2.0, EventType::ExecuteVisible, 2, 15, 990_100, Side::Sell),
        ];
        let cfg = SessionConfig {
            events_per_step: 1,
            ..SessionConfig::default()
        };
        let report = run_session(&events, &one_bin_calendar(), &[1.0], 10, &cfg).unwrap();
        assert_eq!(report.passive_filled, 10);
        assert_eq!(report.cleanup_market_filled, 0);
        assert_eq!(report.per_bin[0].cleanup, 0);
        assert_eq!(report.trades.len(), 1);
        assert_eq!(report.trades[0].price, Some(99.01));
        assert_eq!(report.book_counters.unfilled_market_shares, 5);
    }

    #[test]
    fn zero_weight_bin_places_nothing() {
        let cal = TradingCalendar {
            n_bins: 2,
            ..TradingCalendar::default()
        };
        let open = cal.open_secs;
        let events = vec![
            ev(open + 1.0, EventType::NewLimit, 1, 50, 99_00, Side::Buy),
            ev(open + 2.0, EventType::NewLimit, 2, 40, 101_00, Side::Sell),
            ev(open + 901.0, EventType::NewLimit, 3, 40, 98_00, Side::Buy),
        ];
        let r = run_session(&events, &cal, &[0.0, 1.0], 30, &SessionConfig::default()).unwrap();
        assert_eq!(r.per_bin[0].child, 0);
        assert_eq!(r.per_bin[0].passive + r.per_bin[0].cleanup, 0);
        assert!(r.trades.iter().all(|t| t.bin == 1));
        assert_eq!(r.cleanup_market_filled, 30);
    }

    #[test]
    fn half_passive_half_cleanup() {
        let open = 9.5 * 3600.0;
        // Agent posts 100 at the 101.00 ask behind nothing; a replayed execution takes 50.
        let events = vec![
            ev(open, EventType::NewLimit, 1, 500, 100_00, Side::Buy),
            ev(open, EventType::NewLimit, 2, 30, 101_00, Side::Sell),
            ev(open + 1.0, EventType::CancelFull, 2, 30, 101_00, Side::Sell),
            ev(open + 2.0, EventType::NewLimit, 3, 30, 102_00, Side::Sell),
            ev(open + 3.0, EventType::ExecuteVisible, 3, 50, 101_00, Side::Sell),
        ];
        let cfg = SessionConfig {
            events_per_step: 2,
            repost: RepostPolicy::Never,
            ..SessionConfig::default()
        };
        let r = run_session(&events, &one_bin_calendar(), &[1.0], 100, &cfg).unwrap();
        assert_eq!(r.passive_filled, 50);
        assert_eq!(r.cleanup_market_filled, 50);
        assert_eq!(r.fill_ratio, 0.5);
        let cleanup: u64 = r.trades.iter().filter(|t| t.kind == TradeKind::Cleanup).map(|t| t.size).sum();
        assert_eq!(cleanup, 50);
    }

    #[test]
    fn exhausted_stream_is_an_error() {
        let cal = TradingCalendar::default();
        let events = vec![ev(cal.open_secs + 5.0, EventType::NewLimit, 1, 10, 100_00, Side::Buy)];
        let err = run_session(&events, &cal, &[1.0 / 26.0; 26], 26, &SessionConfig::default()).unwrap_err();
        assert!(matches!(err, Error::StreamExhausted { bin: 1, .. }), "{err}");
    }

    #[test]
    fn advantage_examples() {
        let base = |ratio: f64| FillReport {
            side: Side::Sell,
            parent_quantity: 100,
            passive_filled: 0,
            cleanup_market_filled: 100,
            fill_ratio: ratio,
            unmatched_cleanup: 0,
            reposts: 0,
            per_bin: vec![],
            trades: vec![],
            book_counters: BookCounters::default(),
        };
        assert_eq!(fill_advantage(&base(0.5), &base(0.5)).unwrap(), 0.0);
        assert!((fill_advantage(&base(0.55), &base(0.5)).unwrap() - 0.1).abs() < 1e-12);
        assert!(fill_advantage(&base(0.5), &base(0.0)).is_err());
    }
}
