use std::collections::BTreeMap;

use chrono::NaiveDate;
use intravol::calendar::TradingCalendar;
use intravol::lob::{BookSnapshot, EventType, LobEvent, Side};
use intravol::matching::OrderBook;
use intravol::ofi::{day_ofi, window_ofi, RawOfi};
use intravol::synth::{EventConfig, StockEventGenerator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn day() -> NaiveDate {
    NaiveDate::from_ymd_opt(2017, 7, 3).unwrap()
}

fn ev(t: f64, event_type: EventType, id: u64, size: u64, price: i64, direction: Side) -> LobEvent {
    LobEvent {
        time: 34_200.0 + t,
        event_type,
        order_id: id,
        size,
        price,
        direction,
    }
}

fn scripted() -> Vec<LobEvent> {
    use EventType::*;
    vec![
        ev(1.0, NewLimit, 1, 100, 10_000, Side::Buy),
        ev(2.0, NewLimit, 2, 50, 10_100, Side::Sell),
        ev(3.0, NewLimit, 3, 30, 10_050, Side::Buy),
        ev(4.0, CancelPartial, 2, 20, 10_100, Side::Sell),
        ev(5.0, ExecuteVisible, 3, 10, 10_050, Side::Buy),
    ]
}

fn snapshots(events: &[LobEvent]) -> Vec<BookSnapshot> {
    let mut book = OrderBook::new();
    let mut fills = Vec::new();
    let mut out = vec![book.snapshot()];
    for e in events {
        book.apply_event(e, &mut fills);
        out.push(book.snapshot());
    }
    out
}

/// Naive best-level sum over consecutive pairs; a missing price contributes 0.
fn brute_best_level(snaps: &[BookSnapshot]) -> f64 {
    let mut total = 0.0;
    for i in 1..snaps.len() {
        let (p, c) = (&snaps[i - 1].levels[0], &snaps[i].levels[0]);
        let bid = match (p.bid_price, c.bid_price) {
            (Some(a), Some(b)) if b > a => c.bid_size as f64,
            (Some(a), Some(b)) if b == a => c.bid_size as f64 - p.bid_size as f64,
            (Some(_), Some(_)) => -(c.bid_size as f64),
            _ => 0.0,
        };
        let ask = match (p.ask_price, c.ask_price) {
            (Some(a), Some(b)) if b > a => -(c.ask_size as f64),
            (Some(a), Some(b)) if b == a => c.ask_size as f64 - p.ask_size as f64,
            (Some(_), Some(_)) => c.ask_size as f64,
            _ => 0.0,
        };
        total += bid - ask;
    }
    total
}

/// Classifier that tracks live orders itself instead of asking the book.
#[derive(Default)]
struct Tally {
    orders: BTreeMap<u64, (Side, i64, u64)>,
}

impl Tally {
    fn best(&self, side: Side) -> Option<i64> {
        let prices = self.orders.values().filter(|o| o.0 == side && o.2 > 0).map(|o| o.1);
        match side {
            Side::Buy => prices.max(),
            Side::Sell => prices.min(),
        }
    }

    /// Returns the signed contribution of `e` to the six-term OFI.
    fn step(&mut self, e: &LobEvent) -> f64 {
        let (bb, ba) = (self.best(Side::Buy), self.best(Side::Sell));
        let sign = |side: Side| if side == Side::Buy { 1.0 } else { -1.0 };
        match e.event_type {
            EventType::NewLimit => {
                self.orders.insert(e.order_id, (e.direction, e.price, e.size));
                let at_or_better = match e.direction {
                    Side::Buy => bb.is_none_or(|b| e.price >= b),
                    Side::Sell => ba.is_none_or(|a| e.price <= a),
                };
                if at_or_better {
                    sign(e.direction) * e.size as f64
                } else {
                    0.0
                }
            }
            EventType::CancelPartial | EventType::CancelFull => {
                let Some(o) = self.orders.get_mut(&e.order_id) else { return 0.0 };
                let removed = if e.event_type == EventType::CancelFull { o.2 } else { e.size.min(o.2) };
                let best = if o.0 == Side::Buy { bb } else { ba };
                let contrib = if best == Some(o.1) { -sign(o.0) * removed as f64 } else { 0.0 };
                o.2 -= removed;
                contrib
            }
            EventType::ExecuteVisible => {
                // Every execution in these streams takes from the named front order.
                if let Some(o) = self.orders.get_mut(&e.order_id) {
                    o.2 -= e.size.min(o.2);
                }
                -(e.size as f64)
            }
            _ => 0.0,
        }
    }
}

#[test]
fn scripted_window_matches_hand_values() {
    let events = scripted();
    let cal = TradingCalendar::default();
    let (rows, counters) = day_ofi(&events, "AAA", day(), &cal).unwrap();
    assert_eq!(rows[0].best_level, 40.0);
    assert_eq!(rows[0].ofi_cont, 90.0);
    assert!(rows[1..].iter().all(|r| r.empty_window));
    assert_eq!(counters.empty_windows, 25);
    let snaps = snapshots(&events);
    assert_eq!(brute_best_level(&snaps), 40.0);
    let mut t = Tally::default();
    assert_eq!(events.iter().map(|e| t.step(e)).sum::<f64>(), 90.0);
}

fn synth_day(seed: u64) -> Vec<LobEvent> {
    let mut g = StockEventGenerator::new(&EventConfig::default(), seed, 0, 30.0);
    let vols: Vec<u64> = (0..26).map(|j| 800 + 40 * j).collect();
    g.day_events(&vols)
}

#[test]
fn synthetic_days_match_brute_force_and_independent_tallies() {
    let cal = TradingCalendar::default();
    for seed in 0..3 {
        let events = synth_day(seed);
        let (rows, _) = day_ofi(&events, "AAA", day(), &cal).unwrap();
        let mut tally = Tally::default();
        let mut cont = vec![0.0; 26];
        let mut book = OrderBook::new();
        let mut fills = Vec::new();
        let mut per_bin: Vec<Vec<BookSnapshot>> = vec![Vec::new(); 26];
        let mut last = book.snapshot();
        for e in &events {
            let bin = cal.bin_of(e.time);
            let c = tally.step(e);
            book.apply_event(e, &mut fills);
            if let Some(b) = bin {
                cont[b] += c;
                if per_bin[b].is_empty() {
                    per_bin[b].push(last.clone());
                }
                per_bin[b].push(book.snapshot());
            }
            last = book.snapshot();
        }
        for b in 0..26 {
            assert_eq!(rows[b].ofi_cont, cont[b], "seed {seed} bin {b}");
            assert_eq!(rows[b].best_level, brute_best_level(&per_bin[b]), "seed {seed} bin {b}");
        }
    }
}

#[test]
fn windowed_additivity_over_random_partitions() {
    let snaps = snapshots(&synth_day(11));
    let whole = window_ofi(&snaps);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let k = rng.random_range(1..20);
        let mut cuts: Vec<usize> = (0..k).map(|_| rng.random_range(1..snaps.len() - 1)).collect();
        cuts.push(0);
        cuts.push(snaps.len() - 1);
        cuts.sort_unstable();
        cuts.dedup();
        let mut sum = RawOfi::default();
        for w in cuts.windows(2) {
            sum.merge(&window_ofi(&snaps[w[0]..=w[1]]));
        }
        assert_eq!(sum.pairs, whole.pairs);
        assert_eq!(sum.missing_levels, whole.missing_levels);
        for (a, b) in sum.levels.iter().zip(&whole.levels) {
            // integer-valued flows: exact
            assert_eq!(a, b);
        }
        assert_eq!(sum.depth_sum, whole.depth_sum);
    }
}
