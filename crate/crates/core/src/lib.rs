//! Calling binary forecasting questions from crowdsourced forecasts.

pub mod aggregate;
pub mod analytics;
pub mod cli;
pub mod corpus;
pub mod encode;
pub mod error;
pub mod eval;
pub mod neural;
pub mod synth;
pub mod windowing;

pub use error::{Error, Result};
