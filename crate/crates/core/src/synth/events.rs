use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sub_rng, SynthConfig, VolumePanel};
use crate::calendar::{TradingCalendar, BINS_PER_DAY};
use crate::error::{Error, Result};
use crate::lob::{EventType, LobEvent, Side};
use crate::matching::OrderBook;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventConfig {
    /// Mean number of limit/cancel messages per bin.
    pub background_per_bin: f64,
    /// Mean size of one execution chunk, in shares.
    pub mean_chunk: f64,
    /// Probability an execution chunk is printed as a hidden execution.
    pub hidden_fraction: f64,
    /// Price tick in 1e-4 currency units.
    pub tick: i64,
    /// Mean size of limit orders.
    pub mean_order_size: f64,
}

impl Default for EventConfig {
    fn default() -> Self {
        Self {
            background_per_bin: 200.0,
            mean_chunk: 100.0,
            hidden_fraction: 0.1,
            tick: 100,
            mean_order_size: 150.0,
        }
    }
}

impl EventConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.background_per_bin >= 0.0 && self.mean_chunk >= 1.0 && self.mean_order_size >= 1.0) {
            return Err(Error::Config(
                "background_per_bin must be >= 0, mean_chunk and mean_order_size >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.hidden_fraction) || self.tick <= 0 {
            return Err(Error::Config("hidden_fraction must be in [0,1] and tick positive".into()));
        }
        Ok(())
    }
}

enum Op {
    Exec(u64),
    Background,
}

/// Event stream for one stock, one day at a time. Prices carry over between days;
/// each day opens with a fresh 10-level book posted at the session open.
pub struct StockEventGenerator {
    cfg: EventConfig,
    cal: TradingCalendar,
    rng: ChaCha8Rng,
    mid: i64,
    next_id: u64,
    chunk: Geometric,
    order_size: Geometric,
}

impl StockEventGenerator {
    pub fn new(cfg: &EventConfig, seed: u64, stock: usize, open_price: f64) -> Self {
        let tick = cfg.tick;
        let mid = ((open_price * 1e4) as i64 / tick).max(20) * tick;
        Self {
            cfg: cfg.clone(),
            cal: TradingCalendar::default(),
            rng: sub_rng(seed, 10_000 + stock as u64),
            mid,
            next_id: 1_000_000,
            chunk: Geometric::new(1.0 / cfg.mean_chunk).expect("validated"),
            order_size: Geometric::new(1.0 / cfg.mean_order_size).expect("validated"),
        }
    }

    fn fresh_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    fn emit(
        &mut self,
        book: &mut OrderBook,
        out: &mut Vec<LobEvent>,
        time: f64,
        event_type: EventType,
        order_id: u64,
        size: u64,
        price: i64,
        direction: Side,
    ) {
        let e = LobEvent {
            time,
            event_type,
            order_id,
            size,
            price,
            direction,
        };
        let mut fills = Vec::new();
        book.apply_event(&e, &mut fills);
        out.push(e);
    }

    fn post(&mut self, book: &mut OrderBook, out: &mut Vec<LobEvent>, time: f64, side: Side, price: i64, size: u64) {
        let id = self.fresh_id();
        self.emit(book, out, time, EventType::NewLimit, id, size, price, side);
    }

    fn draw_order_size(&mut self) -> u64 {
        1 + self.order_size.sample(&mut self.rng)
    }

    /// Passive price on `side` that cannot cross the opposite best.
    fn passive_price(&mut self, book: &OrderBook, side: Side) -> i64 {
        let tick = self.cfg.tick;
        let depth = self.rng.random_range(0..5i64);
        let p = match (side, book.best_bid(), book.best_ask()) {
            (Side::Buy, Some(b), Some(a)) => {
                if a - b > tick && self.rng.random_bool(0.3) {
                    b + tick
                } else {
                    b - depth * tick
                }
            }
            (Side::Sell, Some(b), Some(a)) => {
                if a - b > tick && self.rng.random_bool(0.3) {
                    a - tick
                } else {
                    a + depth * tick
                }
            }
            (Side::Buy, Some(b), None) => b - depth * tick,
            (Side::Buy, None, Some(a)) => a - (1 + depth) * tick,
            (Side::Sell, None, Some(a)) => a + depth * tick,
            (Side::Sell, Some(b), None) => b + (1 + depth) * tick,
            (Side::Buy, None, None) => self.mid - (1 + depth) * tick,
            (Side::Sell, None, None) => self.mid + (1 + depth) * tick,
        };
        p.max(tick)
    }

    pub fn day_events(&mut self, volumes: &[u64]) -> Vec<LobEvent> {
        assert_eq!(volumes.len(), BINS_PER_DAY);
        let tick = self.cfg.tick;
        let mut book = OrderBook::new();
        let mut out = Vec::new();
        let open = self.cal.open_secs;
        for m in 0..10i64 {
            let sz = self.draw_order_size() + 100;
            self.post(&mut book, &mut out, open, Side::Sell, self.mid + (m + 1) * tick, sz);
            let sz = self.draw_order_size() + 100;
            self.post(&mut book, &mut out, open, Side::Buy, self.mid - (m + 1) * tick, sz);
        }
        let mut live: Vec<u64> = Vec::new();
        for (bin, &volume) in volumes.iter().enumerate() {
            let mut ops = Vec::new();
            let mut rem = volume;
            while rem > 0 {
                let c = (1 + self.chunk.sample(&mut self.rng)).min(rem);
                ops.push(Op::Exec(c));
                rem -= c;
            }
            let n_bg = if self.cfg.background_per_bin > 0.0 {
                Poisson::new(self.cfg.background_per_bin)
                    .expect("positive rate")
                    .sample(&mut self.rng) as usize
            } else {
                0
            };
            ops.extend((0..n_bg).map(|_| Op::Background));
            ops.shuffle(&mut self.rng);
            let start = self.cal.bin_start(bin);
            let span = self.cal.bin_secs * 0.999;
            let mut times: Vec<f64> = (0..ops.len())
                .map(|_| ((start + self.rng.random::<f64>() * span) * 1e6).round() / 1e6)
                .collect();
            times.sort_by(f64::total_cmp);
            for (op, time) in ops.into_iter().zip(times) {
                match op {
                    Op::Exec(size) => self.execute(&mut book, &mut out, time, size),
                    Op::Background => self.background(&mut book, &mut out, &mut live, time),
                }
            }
        }
        if let (Some(b), Some(a)) = (book.best_bid(), book.best_ask()) {
            self.mid = ((a + b) / 2 / tick).max(20) * tick;
        }
        out
    }

    fn execute(&mut self, book: &mut OrderBook, out: &mut Vec<LobEvent>, time: f64, size: u64) {
        // Resting side being hit; lean against the side with less depth so the
        // book does not drain one way.
        let bid_depth = book.best_bid().map_or(0, |p| book.level_size(Side::Buy, p));
        let ask_depth = book.best_ask().map_or(0, |p| book.level_size(Side::Sell, p));
        let p_bid = (bid_depth as f64 + 1.0) / (bid_depth as f64 + ask_depth as f64 + 2.0);
        let resting = if self.rng.random_bool(p_bid.clamp(0.2, 0.8)) {
            Side::Buy
        } else {
            Side::Sell
        };
        if self.rng.random_bool(self.cfg.hidden_fraction) {
            let price = book.best(resting).unwrap_or(self.mid);
            let id = self.fresh_id();
            self.emit(book, out, time, EventType::ExecuteHidden, id, size, price, resting);
            return;
        }
        let mut rem = size;
        while rem > 0 {
            let (price, order) = match book.front(resting) {
                Some(f) => f,
                None => {
                    let p = self.passive_price(book, resting);
                    let sz = rem + self.draw_order_size();
                    self.post(book, out, time, resting, p, sz);
                    book.front(resting).expect("just posted")
                }
            };
            let q = rem.min(order.size);
            self.emit(book, out, time, EventType::ExecuteVisible, order.id, q, price, resting);
            rem -= q;
        }
    }

    fn background(&mut self, book: &mut OrderBook, out: &mut Vec<LobEvent>, live: &mut Vec<u64>, time: f64) {
        if !live.is_empty() && self.rng.random_bool(0.45) {
            for _ in 0..8 {
                let k = self.rng.random_range(0..live.len());
                let id = live[k];
                match book.order(id) {
                    Some((side, price, remaining)) => {
                        if remaining > 1 && self.rng.random_bool(0.3) {
                            let q = self.rng.random_range(1..remaining);
                            self.emit(book, out, time, EventType::CancelPartial, id, q, price, side);
                        } else {
                            live.swap_remove(k);
                            self.emit(book, out, time, EventType::CancelFull, id, remaining, price, side);
                        }
                        return;
                    }
                    None => {
                        live.swap_remove(k);
                        if live.is_empty() {
                            break;
                        }
                    }
                }
            }
        }
        let bid_levels = book.snapshot().levels.iter().filter(|l| l.bid_price.is_some()).count();
        let ask_levels = book.snapshot().levels.iter().filter(|l| l.ask_price.is_some()).count();
        let p_buy = (ask_levels as f64 + 1.0) / (bid_levels as f64 + ask_levels as f64 + 2.0);
        let side = if self.rng.random_bool(p_buy) { Side::Buy } else { Side::Sell };
        let price = self.passive_price(book, side);
        let size = self.draw_order_size();
        let id = self.fresh_id();
        self.emit(book, out, time, EventType::NewLimit, id, size, price, side);
        live.push(id);
    }
}

/// Event streams for every stock and day of `panel`: `result[stock][day]`.
pub fn generate_events(config: &SynthConfig, panel: &VolumePanel, open_prices: &[f64]) -> Vec<Vec<Vec<LobEvent>>> {
    (0..panel.tickers.len())
        .into_par_iter()
        .map(|i| {
            let mut gen = StockEventGenerator::new(&config.events, config.seed, i, open_prices[i]);
            panel.volume[i].iter().map(|day| gen.day_events(day)).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lob::bin_events;
    use chrono::NaiveDate;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2017, 7, 3).unwrap()
    }

    #[test]
    fn executed_shares_match_bin_volumes() {
        let mut vols = vec![0u64; 26];
        vols[0] = 150;
        vols[3] = 4_321;
        vols[25] = 1;
        let mut gen = StockEventGenerator::new(&EventConfig::default(), 3, 0, 42.0);
        let events = gen.day_events(&vols);
        let out = bin_events(&events, day(), "S000", &TradingCalendar::default());
        assert_eq!(out.dropped, 0);
        let got: Vec<u64> = out.records.iter().map(|r| r.volume).collect();
        assert_eq!(got, vols);
        // zero-volume bins carry no executions
        assert!(out.records[1].nr_trades == 0 && out.records[2].nr_trades == 0);
    }

    #[test]
    fn stream_is_time_ordered_and_book_never_crosses() {
        let vols: Vec<u64> = (0..26).map(|j| 500 + 37 * j as u64).collect();
        let mut gen = StockEventGenerator::new(&EventConfig::default(), 11, 2, 20.0);
        let events = gen.day_events(&vols);
        let mut book = OrderBook::new();
        let mut fills = Vec::new();
        let mut last = 0.0;
        for e in &events {
            assert!(e.time >= last);
            last = e.time;
            book.apply_event(e, &mut fills);
            if let (Some(b), Some(a)) = (book.best_bid(), book.best_ask()) {
                assert!(a > b);
            }
        }
        book.check_integrity().unwrap();
        assert_eq!(book.counters.unknown_cancels, 0);
        assert_eq!(book.counters.unfilled_market_shares, 0);
    }

    #[test]
    fn visible_executions_hit_the_queue_front() {
        let vols = vec![300u64; 26];
        let mut gen = StockEventGenerator::new(&EventConfig::default(), 5, 0, 30.0);
        let events = gen.day_events(&vols);
        let mut book = OrderBook::new();
        let mut fills = Vec::new();
        for e in &events {
            if e.event_type == EventType::ExecuteVisible {
                let (price, front) = book.front(e.direction).expect("liquidity present");
                assert_eq!((front.id, price), (e.order_id, e.price));
                assert!(e.size <= front.size);
            }
            book.apply_event(e, &mut fills);
        }
    }
}
