//! Replay matching engine and passive-order fill simulation.

mod book;
mod session;

pub use book::{BookCounters, Fill, OrderBook, Owner, RestingOrder, AGENT_ID_BASE};
pub use session::{
    child_sizes, fill_advantage, run_session, run_session_observed, BinFill, FillReport, RepostPolicy,
    SessionConfig, TradeKind, TradeRecord,
};
