//! LOBSTER-style message/orderbook files and 15-minute bin aggregation.

mod binning;
mod message;
mod snapshot;

pub use binning::{bin_events, read_bins, write_bins, BinOutput, BinRecord};
pub use message::{
    parse_messages, read_messages, write_messages, EventType, LobEvent, Side, HALT_PRICE,
};
pub use snapshot::{parse_orderbook, BookSnapshot, Level, BOOK_LEVELS};
