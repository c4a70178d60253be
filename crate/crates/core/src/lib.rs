//! Reconstructs daily clusters of investment reasoning ("modes") from
//! structured arguments, tracks each mode's profitability through time, and
//! turns mode-weighted argument scores into daily ranked portfolios.
//!
//! The stages, in the order a trading day runs them:
//!
//! 1. [`extraction`]: documents to `(polarity, rationale, evidence)` arguments.
//! 2. [`embedding`]: argument text to vectors, content-addressed cache.
//! 3. [`modes`]: per-day diagonal Gaussian mixture and posteriors.
//! 4. [`alignment`]: minimum-distance matching of yesterday's modes to today's.
//! 5. [`evaluation`]: realized argument scores and the per-mode EMA.
//! 6. [`signal`]: predicted argument scores, stock signals, top-fraction portfolio.
//! 7. [`backtest`] and [`lifecycle`]: simulation, metrics, mode classification.
//!
//! [`pipeline`] wires these together day by day with persisted state.

pub mod alignment;
pub mod backtest;
pub mod concurrency;
pub mod embedding;
mod error;
pub mod evaluation;
pub mod extraction;
pub mod lifecycle;
pub mod market;
pub mod modes;
pub mod numeric;
pub mod pipeline;
pub mod signal;

pub use error::{Error, Result};

/// A trading day.
pub type Day = chrono::NaiveDate;
