//! Scripted replay fixtures with hand-simulated outcomes.
//! Prices are in 1e-4 currency units; 100_000 is 10.00.

use intravol::lob::{EventType, LobEvent, Side};
use intravol::matching::{BookCounters, Fill, OrderBook, Owner};

pub struct Fixture {
    pub name: &'static str,
    pub events: Vec<LobEvent>,
    /// (maker id, price, size) in execution order.
    pub fills: Vec<(u64, i64, u64)>,
    /// Aggregated (price, size) levels, best first.
    pub bids: Vec<(i64, u64)>,
    pub asks: Vec<(i64, u64)>,
    pub counters: BookCounters,
}

fn e(event_type: EventType, id: u64, size: u64, price: i64, direction: Side) -> LobEvent {
    LobEvent {
        time: 34_200.0,
        event_type,
        order_id: id,
        size,
        price,
        direction,
    }
}

use EventType::*;
use Side::*;

pub fn replay_fixtures() -> Vec<Fixture> {
    let none = BookCounters::default();
    vec![
        Fixture {
            name: "insert bid into empty book",
            events: vec![e(NewLimit, 1, 100, 100_000, Buy)],
            fills: vec![],
            bids: vec![(100_000, 100)],
            asks: vec![],
            counters: none,
        },
        Fixture {
            name: "market sell walks two bid levels",
            events: vec![
                e(NewLimit, 1, 100, 100_000, Buy),
                e(NewLimit, 2, 100, 99_900, Buy),
                e(ExecuteVisible, 1, 150, 100_000, Buy),
            ],
            fills: vec![(1, 100_000, 100), (2, 99_900, 50)],
            bids: vec![(99_900, 50)],
            asks: vec![],
            counters: none,
        },
        Fixture {
            name: "fifo partial execution at one level",
            events: vec![
                e(NewLimit, 1, 100, 101_000, Sell),
                e(NewLimit, 2, 50, 101_000, Sell),
                e(ExecuteVisible, 1, 120, 101_000, Sell),
            ],
            fills: vec![(1, 101_000, 100), (2, 101_000, 20)],
            bids: vec![],
            asks: vec![(101_000, 30)],
            counters: none,
        },
        Fixture {
            name: "partial cancel reduces size",
            events: vec![e(NewLimit, 1, 100, 100_000, Buy), e(CancelPartial, 1, 30, 100_000, Buy)],
            fills: vec![],
            bids: vec![(100_000, 70)],
            asks: vec![],
            counters: none,
        },
        Fixture {
            name: "full cancel removes the best level",
            events: vec![
                e(NewLimit, 1, 100, 100_000, Buy),
                e(NewLimit, 2, 40, 99_800, Buy),
                e(CancelFull, 1, 100, 100_000, Buy),
            ],
            fills: vec![],
            bids: vec![(99_800, 40)],
            asks: vec![],
            counters: none,
        },
        Fixture {
            name: "unknown cancel is counted and ignored",
            events: vec![e(NewLimit, 1, 10, 100_000, Sell), e(CancelFull, 99, 5, 100_000, Sell)],
            fills: vec![],
            bids: vec![],
            asks: vec![(100_000, 10)],
            counters: BookCounters {
                unknown_cancels: 1,
                ..none
            },
        },
        Fixture {
            name: "marketable limit buy walks asks",
            events: vec![
                e(NewLimit, 1, 50, 101_000, Sell),
                e(NewLimit, 2, 50, 102_000, Sell),
                e(NewLimit, 3, 80, 102_000, Buy),
            ],
            fills: vec![(1, 101_000, 50), (2, 102_000, 30)],
            bids: vec![],
            asks: vec![(102_000, 20)],
            counters: none,
        },
        Fixture {
            name: "marketable limit remainder rests at its limit",
            events: vec![e(NewLimit, 1, 50, 101_000, Sell), e(NewLimit, 2, 80, 101_500, Buy)],
            fills: vec![(1, 101_000, 50)],
            bids: vec![(101_500, 30)],
            asks: vec![],
            counters: none,
        },
        Fixture {
            name: "hidden execution leaves the book alone",
            events: vec![e(NewLimit, 1, 100, 100_000, Buy), e(ExecuteHidden, 7, 50, 100_000, Buy)],
            fills: vec![],
            bids: vec![(100_000, 100)],
            asks: vec![],
            counters: BookCounters {
                ignored_events: 1,
                ..none
            },
        },
        Fixture {
            name: "partial cancel keeps time priority",
            events: vec![
                e(NewLimit, 1, 100, 100_000, Buy),
                e(NewLimit, 2, 100, 100_000, Buy),
                e(CancelPartial, 1, 50, 100_000, Buy),
                e(ExecuteVisible, 1, 60, 100_000, Buy),
            ],
            fills: vec![(1, 100_000, 50), (2, 100_000, 10)],
            bids: vec![(100_000, 90)],
            asks: vec![],
            counters: none,
        },
        Fixture {
            name: "execution larger than the book",
            events: vec![e(NewLimit, 1, 30, 100_000, Buy), e(ExecuteVisible, 1, 50, 100_000, Buy)],
            fills: vec![(1, 100_000, 30)],
            bids: vec![],
            asks: vec![],
            counters: BookCounters {
                unfilled_market_shares: 20,
                ..none
            },
        },
        Fixture {
            name: "improving bid is hit first",
            events: vec![
                e(NewLimit, 1, 100, 99_000, Buy),
                e(NewLimit, 2, 100, 101_000, Sell),
                e(NewLimit, 3, 50, 100_000, Buy),
                e(ExecuteVisible, 3, 70, 100_000, Buy),
            ],
            fills: vec![(3, 100_000, 50), (1, 99_000, 20)],
            bids: vec![(99_000, 80)],
            asks: vec![(101_000, 100)],
            counters: none,
        },
    ]
}

pub struct Outcome {
    pub fills: Vec<(u64, i64, u64)>,
    pub bids: Vec<(i64, u64)>,
    pub asks: Vec<(i64, u64)>,
    pub counters: BookCounters,
}

pub fn replay(events: &[LobEvent]) -> Outcome {
    let mut book = OrderBook::new();
    let mut fills: Vec<Fill> = Vec::new();
    for ev in events {
        book.apply_event(ev, &mut fills);
        book.check_integrity().expect("book integrity");
    }
    assert!(fills.iter().all(|f| f.maker_owner == Owner::Market));
    let snap = book.snapshot();
    Outcome {
        fills: fills.iter().map(|f| (f.maker_id, f.price, f.size)).collect(),
        bids: snap.levels.iter().filter_map(|l| l.bid_price.map(|p| (p, l.bid_size))).collect(),
        asks: snap.levels.iter().filter_map(|l| l.ask_price.map(|p| (p, l.ask_size))).collect(),
        counters: book.counters,
    }
}

/// Names of fixtures whose replay differs from the hand simulation.
pub fn failing_fixtures() -> Vec<&'static str> {
    replay_fixtures()
        .into_iter()
        .filter(|f| {
            let o = replay(&f.events);
            o.fills != f.fills || o.bids != f.bids || o.asks != f.asks || o.counters != f.counters
        })
        .map(|f| f.name)
        .collect()
}
