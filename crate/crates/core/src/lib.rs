//! Microstructure measurement for on-chain binary prediction markets.
//!
//! The crate reconstructs L2 books from a taker-blind delta feed, decodes
//! authoritative exchange fills from chain logs, infers trades from the feed,
//! calibrates the inference against the chain record, and computes spread,
//! impact and panel statistics. A synthetic venue provides ground truth.

pub mod calibrate;
pub mod chain;
pub mod feed;
pub mod inference;
pub mod io;
pub mod measures;
pub mod panel;
pub mod sim;
pub mod stats;
pub mod stylized;
pub mod trade;
pub mod units;

pub use units::{Qty, Side, Sign, Tick};
