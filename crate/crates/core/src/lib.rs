//! Mean and quantile effects of the generation mix on the system electricity
//! price.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`ingest`]: hourly system price (locational price minus congestion and
//!    loss) joined with hourly energy per generation source.
//! 2. [`calendar`]: removal of hour, season, hour × season and weekend effects.
//! 3. [`metrics`]: EWMSD volatility of the detrended price and per-source
//!    penetration percentages.
//! 4. [`regression`] and [`quantile`]: least-squares and quantile regressions
//!    of price and volatility on penetration, with inference.
//! 5. [`study`] and [`report`]: the model grid, results bundle, tables and
//!    figures.

pub mod calendar;
pub mod error;
pub mod fixture;
pub mod ingest;
pub mod metrics;
pub mod quantile;
pub mod regression;
pub mod report;
pub mod special;
pub mod study;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/system-price.md")]
    mod system_price {}
    #[doc = include_str!("../../../book/src/calendar.md")]
    mod calendar {}
    #[doc = include_str!("../../../book/src/volatility.md")]
    mod volatility {}
    #[doc = include_str!("../../../book/src/least-squares.md")]
    mod least_squares {}
    #[doc = include_str!("../../../book/src/quantile-regression.md")]
    mod quantile_regression {}
    #[doc = include_str!("../../../book/src/study.md")]
    mod study {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
