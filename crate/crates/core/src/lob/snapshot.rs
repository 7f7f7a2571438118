use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOOK_LEVELS: usize = 10;

/// Dummy prices LOBSTER writes for empty levels.
const EMPTY_ASK: i64 = 9_999_999_999;
const EMPTY_BID: i64 = -9_999_999_999;

/// One book level; a missing side has `None` price and zero size.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Level {
    pub ask_price: Option<i64>,
    pub ask_size: u64,
    pub bid_price: Option<i64>,
    pub bid_size: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookSnapshot {
    pub levels: [Level; BOOK_LEVELS],
}

impl BookSnapshot {
    pub fn best_bid(&self) -> Option<i64> {
        self.levels[0].bid_price
    }

    pub fn best_ask(&self) -> Option<i64> {
        self.levels[0].ask_price
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut prev_ask: Option<i64> = None;
        let mut prev_bid: Option<i64> = None;
        for (i, lvl) in self.levels.iter().enumerate() {
            if let Some(p) = lvl.ask_price {
                if prev_ask.is_some_and(|q| p <= q) {
                    return Err(format!("ask prices not increasing at level {}", i + 1));
                }
                prev_ask = Some(p);
            }
            if let Some(p) = lvl.bid_price {
                if prev_bid.is_some_and(|q| p >= q) {
                    return Err(format!("bid prices not decreasing at level {}", i + 1));
                }
                prev_bid = Some(p);
            }
        }
        if let (Some(a), Some(b)) = (self.best_ask(), self.best_bid()) {
            if a <= b {
                return Err(format!("crossed book: ask {a} <= bid {b}"));
            }
        }
        Ok(())
    }

    /// Row in the 40-column orderbook file layout.
    pub fn to_row(&self) -> Vec<i64> {
        let mut row = Vec::with_capacity(4 * BOOK_LEVELS);
        for lvl in &self.levels {
            row.push(lvl.ask_price.unwrap_or(EMPTY_ASK));
            row.push(lvl.ask_size as i64);
            row.push(lvl.bid_price.unwrap_or(EMPTY_BID));
            row.push(lvl.bid_size as i64);
        }
        row
    }
}

/// Parse a 40-column orderbook file (ask_p, ask_sz, bid_p, bid_sz per level).
pub fn parse_orderbook(path: impl AsRef<Path>) -> Result<Vec<BookSnapshot>> {
    let path = path.as_ref();
    let source = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let err = |message: String| Error::Parse {
            path: source.clone(),
            line,
            message,
        };
        if record.len() != 4 * BOOK_LEVELS {
            return Err(err(format!("expected 40 columns, found {}", record.len())));
        }
        let mut vals = [0i64; 4 * BOOK_LEVELS];
        for (i, field) in record.iter().enumerate() {
            vals[i] = field
                .parse()
                .map_err(|_| err(format!("bad integer `{field}` in column {}", i + 1)))?;
        }
        let mut snap = BookSnapshot::default();
        for (m, lvl) in snap.levels.iter_mut().enumerate() {
            let (ap, asz, bp, bsz) = (vals[4 * m], vals[4 * m + 1], vals[4 * m + 2], vals[4 * m + 3]);
            if asz < 0 || bsz < 0 {
                return Err(err(format!("negative size at level {}", m + 1)));
            }
            let present = |p: i64, sz: i64| sz > 0 && p > 0 && p != EMPTY_ASK;
            if present(ap, asz) {
                lvl.ask_price = Some(ap);
                lvl.ask_size = asz as u64;
            }
            if present(bp, bsz) {
                lvl.bid_price = Some(bp);
                lvl.bid_size = bsz as u64;
            }
        }
        snap.validate().map_err(err)?;
        out.push(snap);
    }
    Ok(out)
}
