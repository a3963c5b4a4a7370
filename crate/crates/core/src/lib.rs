//! Time-series momentum portfolios built by a multi-task LSTM that jointly
//! learns position sizing (Sharpe objective) and forward-volatility
//! forecasting, together with classical momentum baselines, an
//! expanding-window backtest engine and performance analytics.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64`, which is what the backtest
//! engine and the command-line driver use.

pub mod analytics;
pub mod backtest;
pub mod baselines;
pub mod features;
pub mod market_data;
pub mod mtl_model;
pub mod neural;
pub mod numfmt;
pub mod scalar;
pub mod vol_estimators;

pub use scalar::Real;

pub type Bar = market_data::Bar<f64>;
pub type AssetSeries = market_data::AssetSeries<f64>;
pub type Universe = market_data::Universe<f64>;
pub type VolSeries = vol_estimators::VolSeries<f64>;
pub type FeaturePanel = features::FeaturePanel<f64>;
pub type StrategyOutput = baselines::StrategyOutput<f64>;
pub type MtlModel = mtl_model::MtlModel<f64>;
