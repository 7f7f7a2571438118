use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Price recorded for trading-halt messages.
pub const HALT_PRICE: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventType {
    NewLimit = 1,
    CancelPartial = 2,
    CancelFull = 3,
    ExecuteVisible = 4,
    ExecuteHidden = 5,
    Cross = 6,
    Halt = 7,
}

impl EventType {
    pub fn from_code(code: i64) -> Option<Self> {
        Some(match code {
            1 => EventType::NewLimit,
            2 => EventType::CancelPartial,
            3 => EventType::CancelFull,
            4 => EventType::ExecuteVisible,
            5 => EventType::ExecuteHidden,
            6 => EventType::Cross,
            7 => EventType::Halt,
            _ => return None,
        })
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn is_execution(self) -> bool {
        matches!(self, EventType::ExecuteVisible | EventType::ExecuteHidden)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            1 => Some(Side::Buy),
            -1 => Some(Side::Sell),
            _ => None,
        }
    }

    pub fn code(self) -> i8 {
        match self {
            Side::Buy => 1,
            Side::Sell => -1,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Side::Buy => Side::Sell,
            Side::Sell => Side::Buy,
        }
    }
}

/// One order-book message. `price` is in units of 1e-4 currency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LobEvent {
    pub time: f64,
    pub event_type: EventType,
    pub order_id: u64,
    pub size: u64,
    pub price: i64,
    pub direction: Side,
}

impl LobEvent {
    pub fn price_dollars(&self) -> f64 {
        self.price as f64 / 1e4
    }
}

pub fn parse_messages(path: impl AsRef<Path>) -> Result<Vec<LobEvent>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_messages(file, &path.display().to_string())
}

/// Parse a message stream; `source` labels errors.
pub fn read_messages<R: Read>(reader: R, source: &str) -> Result<Vec<LobEvent>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut events = Vec::new();
    let mut last_time = f64::NEG_INFINITY;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let parse_err = |message: String| Error::Parse {
            path: source.to_string(),
            line,
            message,
        };
        if record.len() != 6 {
            return Err(parse_err(format!("expected 6 columns, found {}", record.len())));
        }
        let time: f64 = record[0]
            .parse()
            .map_err(|_| parse_err(format!("bad time `{}`", &record[0])))?;
        if !time.is_finite() || time < 0.0 {
            return Err(parse_err(format!("time must be a non-negative number, got {time}")));
        }
        let int_field = |idx: usize, name: &str| -> Result<i64> {
            record[idx]
                .parse::<i64>()
                .map_err(|_| parse_err(format!("bad {name} `{}`", &record[idx])))
        };
        let type_code = int_field(1, "event type")?;
        let event_type = EventType::from_code(type_code)
            .ok_or_else(|| parse_err(format!("unknown event type {type_code}")))?;
        let order_id = int_field(2, "order id")?;
        let size = int_field(3, "size")?;
        let price = int_field(4, "price")?;
        let dir_code = int_field(5, "direction")?;
        let direction = Side::from_code(dir_code)
            .ok_or_else(|| parse_err(format!("direction must be 1 or -1, got {dir_code}")))?;
        if event_type != EventType::Halt {
            if size <= 0 {
                return Err(parse_err(format!("size must be positive, got {size}")));
            }
            if price <= 0 {
                return Err(parse_err(format!("price must be positive, got {price}")));
            }
        }
        if order_id < 0 || size < 0 {
            return Err(parse_err("negative order id or size".into()));
        }
        if time < last_time {
            return Err(Error::Validation(format!(
                "{source}:{line}: time {time} precedes previous event at {last_time}"
            )));
        }
        last_time = time;
        events.push(LobEvent {
            time,
            event_type,
            order_id: order_id as u64,
            size: size as u64,
            price,
            direction,
        });
    }
    Ok(events)
}

/// Serialize events in the same 6-column format `read_messages` accepts.
pub fn write_messages<W: Write>(mut out: W, events: &[LobEvent]) -> Result<()> {
    for e in events {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            e.time,
            e.event_type.code(),
            e.order_id,
            e.size,
            e.price,
            e.direction.code()
        )?;
    }
    Ok(())
}
