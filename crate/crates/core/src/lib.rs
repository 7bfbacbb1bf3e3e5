//! Forecast-driven long/short portfolio selection.
//!
//! A frequency-enhanced encoder/decoder forecaster is pre-trained on price
//! windows, wrapped with low-rank adapters, and used by a policy that scores
//! assets, picks long and short books and splits capital between them. The
//! policy is fine-tuned on realized returns and evaluated by a daily
//! rebalancing backtest.

pub mod autograd;
pub mod backtest;
pub mod checkpoint;
pub mod error;
pub mod forecast;
pub mod lora;
pub mod market_data;
pub mod optim;
pub mod params;
pub mod policy;
pub mod rl;
pub mod train;

pub use error::{Error, Result};
