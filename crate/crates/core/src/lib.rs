//! Scenario-adaptive optimal market making.
//!
//! Build a catalog of quote coefficients by backward induction over a
//! scenario-indexed model of market-order arrivals, then use it to quote,
//! simulate and backtest.

// `!(x > 0.0)` style checks are intentional: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod calibration;
pub mod config;
pub mod error;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod recursion;
pub mod simulate;

pub use error::{Error, Result};
