//! Price-time priority limit order book.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::lob::{BookSnapshot, EventType, LobEvent, Side, BOOK_LEVELS};

/// Agent order ids live in their own range so they never collide with replayed ids.
pub const AGENT_ID_BASE: u64 = 1 << 62;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Owner {
    Market,
    Agent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RestingOrder {
    pub id: u64,
    pub owner: Owner,
    pub size: u64,
    pub seq: u64,
}

/// One execution against a resting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fill {
    pub maker_id: u64,
    pub maker_owner: Owner,
    pub maker_side: Side,
    pub price: i64,
    pub size: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct PriceLevel {
    orders: VecDeque<RestingOrder>,
    total: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookCounters {
    pub unknown_cancels: u64,
    pub unfilled_market_shares: u64,
    pub ignored_events: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OrderBook {
    bids: BTreeMap<i64, PriceLevel>,
    asks: BTreeMap<i64, PriceLevel>,
    index: HashMap<u64, (Side, i64)>,
    seq: u64,
    next_agent_id: u64,
    pub counters: BookCounters,
}

impl OrderBook {
    pub fn new() -> Self {
        Self::default()
    }

    fn side_map(&self, side: Side) -> &BTreeMap<i64, PriceLevel> {
        match side {
            Side::Buy => &self.bids,
            Side::Sell => &self.asks,
        }
    }

    fn side_map_mut(&mut self, side: Side) -> &mut BTreeMap<i64, PriceLevel> {
        match side {
            Side::Buy => &mut self.bids,
            Side::Sell => &mut self.asks,
        }
    }

    pub fn best_bid(&self) -> Option<i64> {
        self.bids.keys().next_back().copied()
    }

    pub fn best_ask(&self) -> Option<i64> {
        self.asks.keys().next().copied()
    }

    pub fn best(&self, side: Side) -> Option<i64> {
        match side {
            Side::Buy => self.best_bid(),
            Side::Sell => self.best_ask(),
        }
    }

    pub fn level_size(&self, side: Side, price: i64) -> u64 {
        self.side_map(side).get(&price).map_or(0, |l| l.total)
    }

    /// Resting orders at a price, front of the queue first.
    pub fn queue(&self, side: Side, price: i64) -> impl Iterator<Item = &RestingOrder> {
        self.side_map(side)
            .get(&price)
            .into_iter()
            .flat_map(|l| l.orders.iter())
    }

    /// Front order at the best price of `side`.
    pub fn front(&self, side: Side) -> Option<(i64, RestingOrder)> {
        let price = self.best(side)?;
        let lvl = self.side_map(side).get(&price)?;
        lvl.orders.front().map(|o| (price, *o))
    }

    /// `(side, price, remaining size)` of a live order.
    pub fn order(&self, id: u64) -> Option<(Side, i64, u64)> {
        let &(side, price) = self.index.get(&id)?;
        let o = self.side_map(side).get(&price)?.orders.iter().find(|o| o.id == id)?;
        Some((side, price, o.size))
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Top `BOOK_LEVELS` aggregated levels per side.
    pub fn snapshot(&self) -> BookSnapshot {
        let mut snap = BookSnapshot::default();
        for (lvl, (p, l)) in snap.levels.iter_mut().zip(self.asks.iter()) {
            lvl.ask_price = Some(*p);
            lvl.ask_size = l.total;
        }
        for (lvl, (p, l)) in snap.levels.iter_mut().zip(self.bids.iter().rev()) {
            lvl.bid_price = Some(*p);
            lvl.bid_size = l.total;
        }
        debug_assert!(snap.levels.len() == BOOK_LEVELS);
        snap
    }

    fn push_resting(&mut self, side: Side, price: i64, id: u64, owner: Owner, size: u64) {
        self.seq += 1;
        let order = RestingOrder {
            id,
            owner,
            size,
            seq: self.seq,
        };
        let lvl = self.side_map_mut(side).entry(price).or_default();
        lvl.orders.push_back(order);
        lvl.total += size;
        self.index.insert(id, (side, price));
    }

    fn crosses(&self, side: Side, price: i64) -> bool {
        match side {
            Side::Buy => self.best_ask().is_some_and(|a| price >= a),
            Side::Sell => self.best_bid().is_some_and(|b| price <= b),
        }
    }

    /// Consume up to `size` shares from the resting `side`, best price first,
    /// FIFO within a level, not going past `limit` if given.
    fn take_liquidity(
        &mut self,
        side: Side,
        mut size: u64,
        limit: Option<i64>,
        fills: &mut Vec<Fill>,
    ) -> u64 {
        while size > 0 {
            let Some(price) = self.best(side) else { break };
            if let Some(lim) = limit {
                let ok = match side {
                    Side::Sell => price <= lim,
                    Side::Buy => price >= lim,
                };
                if !ok {
                    break;
                }
            }
            let map = match side {
                Side::Buy => &mut self.bids,
                Side::Sell => &mut self.asks,
            };
            let lvl = map.get_mut(&price).expect("best level exists");
            while size > 0 {
                let Some(front) = lvl.orders.front_mut() else { break };
                let q = size.min(front.size);
                fills.push(Fill {
                    maker_id: front.id,
                    maker_owner: front.owner,
                    maker_side: side,
                    price,
                    size: q,
                });
                front.size -= q;
                lvl.total -= q;
                size -= q;
                if front.size == 0 {
                    let id = front.id;
                    lvl.orders.pop_front();
                    self.index.remove(&id);
                }
            }
            if lvl.orders.is_empty() {
                map.remove(&price);
            }
        }
        size
    }

    /// Limit order: executes against the opposite side while marketable, rests the remainder.
    pub fn add_limit(
        &mut self,
        id: u64,
        owner: Owner,
        side: Side,
        price: i64,
        size: u64,
        fills: &mut Vec<Fill>,
    ) {
        let mut remaining = size;
        if self.crosses(side, price) {
            remaining = self.take_liquidity(side.opposite(), remaining, Some(price), fills);
        }
        if remaining > 0 {
            if self.index.contains_key(&id) {
                // a reused id replaces the stale order
                self.cancel(id, None);
            }
            self.push_resting(side, price, id, owner, remaining);
        }
    }

    /// Post an agent order; returns its id.
    pub fn add_agent_limit(&mut self, side: Side, price: i64, size: u64, fills: &mut Vec<Fill>) -> u64 {
        self.next_agent_id += 1;
        let id = AGENT_ID_BASE + self.next_agent_id;
        self.add_limit(id, Owner::Agent, side, price, size, fills);
        id
    }

    /// Marketable order from an aggressor on `aggressor_side`. Returns the unfilled size.
    pub fn market_order(&mut self, aggressor_side: Side, size: u64, fills: &mut Vec<Fill>) -> u64 {
        self.take_liquidity(aggressor_side.opposite(), size, None, fills)
    }

    /// Cancel `size` shares (all if `None`). Returns the shares removed, or `None` if unknown.
    pub fn cancel(&mut self, id: u64, size: Option<u64>) -> Option<u64> {
        let &(side, price) = self.index.get(&id)?;
        let map = self.side_map_mut(side);
        let lvl = map.get_mut(&price)?;
        let pos = lvl.orders.iter().position(|o| o.id == id)?;
        let order = &mut lvl.orders[pos];
        let removed = size.map_or(order.size, |s| s.min(order.size));
        order.size -= removed;
        lvl.total -= removed;
        if order.size == 0 {
            lvl.orders.remove(pos);
            if lvl.orders.is_empty() {
                map.remove(&price);
            }
            self.index.remove(&id);
        }
        Some(removed)
    }

    /// Apply one replayed message, appending any executions to `fills`.
    pub fn apply_event(&mut self, event: &LobEvent, fills: &mut Vec<Fill>) {
        match event.event_type {
            EventType::NewLimit => self.add_limit(
                event.order_id,
                Owner::Market,
                event.direction,
                event.price,
                event.size,
                fills,
            ),
            EventType::CancelPartial | EventType::CancelFull => {
                let size = (event.event_type == EventType::CancelPartial).then_some(event.size);
                if self.cancel(event.order_id, size).is_none() {
                    self.counters.unknown_cancels += 1;
                }
            }
            EventType::ExecuteVisible => {
                // The direction names the resting side; replay it as an aggressor
                // against that side's queue.
                let left = self.market_order(event.direction.opposite(), event.size, fills);
                self.counters.unfilled_market_shares += left;
            }
            EventType::ExecuteHidden | EventType::Cross | EventType::Halt => {
                self.counters.ignored_events += 1;
            }
        }
    }

    /// Full structural audit; `Err` describes the first violation found.
    pub fn check_integrity(&self) -> Result<(), String> {
        if let (Some(b), Some(a)) = (self.best_bid(), self.best_ask()) {
            if b >= a {
                return Err(format!("crossed book: bid {b} >= ask {a}"));
            }
        }
        let mut count = 0;
        for (side, map) in [(Side::Buy, &self.bids), (Side::Sell, &self.asks)] {
            for (price, lvl) in map {
                if lvl.orders.is_empty() {
                    return Err(format!("empty level at {price}"));
                }
                let mut total = 0;
                let mut last_seq = 0;
                for o in &lvl.orders {
                    if o.size == 0 {
                        return Err(format!("zero-size order {}", o.id));
                    }
                    if o.seq <= last_seq {
                        return Err(format!("FIFO violated at {price}"));
                    }
                    last_seq = o.seq;
                    total += o.size;
                    if self.index.get(&o.id) != Some(&(side, *price)) {
                        return Err(format!("index mismatch for order {}", o.id));
                    }
                    count += 1;
                }
                if total != lvl.total {
                    return Err(format!("level total mismatch at {price}"));
                }
            }
        }
        if count != self.index.len() {
            return Err("index holds stale orders".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(ty: EventType, id: u64, size: u64, price: i64, dir: Side) -> LobEvent {
        LobEvent {
            time: 34_200.0,
            event_type: ty,
            order_id: id,
            size,
            price,
            direction: dir,
        }
    }

    #[test]
    fn insert_into_empty_book() {
        let mut b = OrderBook::new();
        let mut f = Vec::new();
        b.apply_event(&ev(EventType::NewLimit, 1, 100, 100_000, Side::Buy), &mut f);
        assert_eq!(b.best_bid(), Some(100_000));
        assert_eq!(b.level_size(Side::Buy, 100_000), 100);
        assert!(f.is_empty());
    }

    #[test]
    fn market_sell_walks_bids() {
        let mut b = OrderBook::new();
        let mut f = Vec::new();
        b.apply_event(&ev(EventType::NewLimit, 1, 100, 100_000, Side::Buy), &mut f);
        b.apply_event(&ev(EventType::NewLimit, 2, 100, 99_900, Side::Buy), &mut f);
        let left = b.market_order(Side::Sell, 150, &mut f);
        assert_eq!(left, 0);
        let got: Vec<(i64, u64)> = f.iter().map(|x| (x.price, x.size)).collect();
        assert_eq!(got, vec![(100_000, 100), (99_900, 50)]);
        assert_eq!(b.best_bid(), Some(99_900));
        assert_eq!(b.level_size(Side::Buy, 99_900), 50);
    }

    #[test]
    fn fifo_partial_execution() {
        let mut b = OrderBook::new();
        let mut f = Vec::new();
        b.apply_event(&ev(EventType::NewLimit, 1, 100, 100_100, Side::Sell), &mut f);
        b.apply_event(&ev(EventType::NewLimit, 2, 50, 100_100, Side::Sell), &mut f);
        b.apply_event(&ev(EventType::ExecuteVisible, 1, 120, 100_100, Side::Sell), &mut f);
        assert_eq!(
            f.iter().map(|x| (x.maker_id, x.size)).collect::<Vec<_>>(),
            vec![(1, 100), (2, 20)]
        );
        assert_eq!(b.order(2), Some((Side::Sell, 100_100, 30)));
        assert_eq!(b.order(1), None);
        b.check_integrity().unwrap();
    }

    #[test]
    fn crossing_limit_walks_then_rests() {
        let mut b = OrderBook::new();
        let mut f = Vec::new();
        b.apply_event(&ev(EventType::NewLimit, 1, 10, 100_100, Side::Sell), &mut f);
        b.apply_event(&ev(EventType::NewLimit, 2, 10, 100_200, Side::Sell), &mut f);
        b.apply_event(&ev(EventType::NewLimit, 3, 25, 100_100, Side::Buy), &mut f);
        assert_eq!(f.len(), 1);
        assert_eq!(b.best_bid(), Some(100_100));
        assert_eq!(b.level_size(Side::Buy, 100_100), 15);
        assert_eq!(b.best_ask(), Some(100_200));
        b.check_integrity().unwrap();
    }

    #[test]
    fn cancels() {
        let mut b = OrderBook::new();
        let mut f = Vec::new();
        b.apply_event(&ev(EventType::NewLimit, 1, 100, 100_000, Side::Buy), &mut f);
        b.apply_event(&ev(EventType::CancelPartial, 1, 30, 100_000, Side::Buy), &mut f);
        assert_eq!(b.order(1), Some((Side::Buy, 100_000, 70)));
        b.apply_event(&ev(EventType::CancelFull, 1, 70, 100_000, Side::Buy), &mut f);
        assert!(b.is_empty());
        assert_eq!(b.best_bid(), None);
        b.apply_event(&ev(EventType::CancelFull, 99, 70, 100_000, Side::Buy), &mut f);
        assert_eq!(b.counters.unknown_cancels, 1);
    }

    #[test]
    fn hidden_execution_leaves_book_alone() {
        let mut b = OrderBook::new();
        let mut f = Vec::new();
        b.apply_event(&ev(EventType::NewLimit, 1, 100, 100_000, Side::Buy), &mut f);
        let before = b.clone();
        b.apply_event(&ev(EventType::ExecuteHidden, 5, 10, 100_000, Side::Buy), &mut f);
        assert_eq!(b.snapshot(), before.snapshot());
        assert!(f.is_empty());
    }

    #[test]
    fn snapshot_levels() {
        let mut b = OrderBook::new();
        let mut f = Vec::new();
        for i in 0..12 {
            b.apply_event(&ev(EventType::NewLimit, i, 10 + i, 100_100 + 100 * i as i64, Side::Sell), &mut f);
            b.apply_event(&ev(EventType::NewLimit, 100 + i, 5, 100_000 - 100 * i as i64, Side::Buy), &mut f);
        }
        let s = b.snapshot();
        s.validate().unwrap();
        assert_eq!(s.levels[0].ask_price, Some(100_100));
        assert_eq!(s.levels[9].ask_size, 19);
        assert_eq!(s.levels[9].bid_price, Some(99_100));
    }
}
