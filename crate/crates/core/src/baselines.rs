//! Benchmark strategies: classical volatility-scaled TSMOM and the
//! EWMA-crossover CTA momentum signal.
//!
//! Positions are decided at the close of calendar day `t` from data up to
//! `t` and earn the settle log return from `t` to `t + 1`.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{AlignedAsset, AssetSeries, Universe};
use crate::numfmt::fmt10;
use crate::scalar::{lit, Real};
use crate::vol_estimators::{backward, ewma_vol_path, VolEstimatorKind};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("bar {t} needs {needed} bars of history plus the next bar; series has {available}")]
    InsufficientHistory { t: usize, needed: usize, available: usize },
    #[error("invalid volatility target config: {0}")]
    InvalidConfig(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Ex-ante volatilities below this force a flat position.
pub const MIN_EX_ANTE_VOL: f64 = 1e-8;

/// Trailing return horizon of the classical signal.
pub const TSMOM_LOOKBACK: usize = 252;

/// Sign with `sgn(0) = 0`.
pub fn sgn<T: Real>(x: T) -> i8 {
    if x > T::zero() {
        1
    } else if x < T::zero() {
        -1
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolTargetConfig {
    pub sigma_target: f64,
    pub estimator: VolEstimatorKind,
    pub span: usize,
}

impl Default for VolTargetConfig {
    fn default() -> Self {
        Self { sigma_target: 0.10, estimator: VolEstimatorKind::EwmaExAnte, span: 60 }
    }
}

impl VolTargetConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(self.sigma_target.is_finite() && self.sigma_target > 0.0) {
            return Err(BaselineError::InvalidConfig("sigma_target must be positive".into()));
        }
        if self.span < 2 {
            return Err(BaselineError::InvalidConfig("span must be at least 2".into()));
        }
        Ok(())
    }
}

/// Ex-ante annualized volatility per bar of a series.
pub fn ex_ante_vol<T: Real>(series: &AssetSeries<T>, cfg: &VolTargetConfig) -> Vec<Option<T>> {
    match cfg.estimator {
        VolEstimatorKind::EwmaExAnte => ewma_vol_path(&series.settles(), cfg.span),
        kind => backward(kind, series, cfg.span).map(|v| v.values).unwrap_or_else(|_| vec![None; series.len()]),
    }
}

/// `sigma_target / sigma` with the flat-position guard.
fn vol_scale<T: Real>(sigma: T, cfg: &VolTargetConfig, asset: &str, t: usize) -> T {
    if sigma < lit(MIN_EX_ANTE_VOL) {
        log::warn!("{asset}: ex-ante volatility {sigma} below guard at bar {t}; position set flat");
        T::zero()
    } else {
        lit::<T>(cfg.sigma_target) / sigma
    }
}

/// One asset's strategy return from bar `t` to `t + 1`:
/// `sgn(r_{t-252,t}) * sigma_tgt / sigma_t * r_{t,t+1}`.
pub fn tsmom_asset_return<T: Real>(series: &AssetSeries<T>, t: usize, cfg: &VolTargetConfig) -> Result<T, BaselineError> {
    if t < TSMOM_LOOKBACK || t + 1 >= series.len() {
        return Err(BaselineError::InsufficientHistory { t, needed: TSMOM_LOOKBACK + 1, available: series.len() });
    }
    let p = series.settles();
    let sigma = ex_ante_vol(series, cfg)[t]
        .ok_or(BaselineError::InsufficientHistory { t, needed: cfg.span, available: series.len() })?;
    let signal = sgn((p[t] / p[t - TSMOM_LOOKBACK]).ln());
    let next = (p[t + 1] / p[t]).ln();
    Ok(lit::<T>(signal as f64) * vol_scale(sigma, cfg, series.asset_id(), t) * next)
}

/// Positions and gross returns of a per-asset strategy on the calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyOutput<T> {
    pub dates: Vec<NaiveDate>,
    pub asset_ids: Vec<String>,
    /// `signals[asset][t]`: raw signal decided at `t` (sgn or CTA response).
    pub signals: Vec<Vec<Option<T>>>,
    /// `positions[asset][t]`: signal times `sigma_tgt / sigma_t`, decided at `t`.
    pub positions: Vec<Vec<Option<T>>>,
    /// `per_asset_returns[asset][t]`: position at `t - 1` times the return into `t`.
    pub per_asset_returns: Vec<Vec<Option<T>>>,
    /// Equal-weight average over active assets, realized at `t`; 0 when none.
    pub daily_returns: Vec<T>,
}

impl<T: Real> StrategyOutput<T> {
    fn from_signals(universe: &Universe<T>, signals: Vec<Vec<Option<T>>>, cfg: &VolTargetConfig) -> Self {
        let n = universe.len();
        let mut positions = Vec::with_capacity(universe.n_assets());
        let mut per_asset = Vec::with_capacity(universe.n_assets());
        for (asset, sig) in universe.assets().iter().zip(&signals) {
            let vol = ex_ante_vol(&asset.series, cfg);
            let mut pos = vec![None; n];
            let mut ret = vec![None; n];
            for t in asset.start..asset.end() {
                let k = t - asset.start;
                if let (Some(s), Some(v)) = (sig[t], vol[k]) {
                    pos[t] = Some(s * vol_scale(v, cfg, asset.id(), k));
                }
            }
            for t in asset.start + 1..asset.end() {
                if let (Some(p), Some(r)) = (pos[t - 1], next_log_return(asset, t - 1)) {
                    ret[t] = Some(p * r);
                }
            }
            positions.push(pos);
            per_asset.push(ret);
        }
        let daily_returns = (0..n)
            .map(|t| {
                let active: Vec<T> = per_asset.iter().filter_map(|r| r[t]).collect();
                if active.is_empty() {
                    T::zero()
                } else {
                    active.iter().copied().sum::<T>() / lit(active.len() as f64)
                }
            })
            .collect();
        Self {
            dates: universe.calendar().to_vec(),
            asset_ids: universe.asset_ids(),
            signals,
            positions,
            per_asset_returns: per_asset,
            daily_returns,
        }
    }

    /// `date,return` rows.
    pub fn write_returns_csv<W: Write>(&self, out: W) -> Result<(), BaselineError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "return"]).map_err(csv_io)?;
        for (d, r) in self.dates.iter().zip(&self.daily_returns) {
            w.write_record([d.format("%Y-%m-%d").to_string(), fmt10(r.to_f64_lossy())]).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `date,asset,weight` rows for every decided position.
    pub fn write_weights_csv<W: Write>(&self, out: W) -> Result<(), BaselineError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "asset", "weight"]).map_err(csv_io)?;
        for (t, d) in self.dates.iter().enumerate() {
            for (a, id) in self.asset_ids.iter().enumerate() {
                if let Some(p) = self.positions[a][t] {
                    w.write_record([d.format("%Y-%m-%d").to_string(), id.clone(), fmt10(p.to_f64_lossy())])
                        .map_err(csv_io)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> BaselineError {
    BaselineError::Io(std::io::Error::other(e))
}

/// Settle log return from calendar index `t` to `t + 1`.
pub(crate) fn next_log_return<T: Real>(asset: &AlignedAsset<T>, t: usize) -> Option<T> {
    Some((asset.settle_at(t + 1)? / asset.settle_at(t)?).ln())
}

/// Classical TSMOM on every asset, averaged over the assets active each day.
pub fn tsmom_portfolio<T: Real>(universe: &Universe<T>, cfg: &VolTargetConfig) -> Result<StrategyOutput<T>, BaselineError> {
    cfg.validate()?;
    let n = universe.len();
    let signals = universe
        .assets()
        .iter()
        .map(|asset| {
            let p = asset.series.settles();
            let mut sig = vec![None; n];
            for k in TSMOM_LOOKBACK..p.len() {
                sig[asset.start + k] = Some(lit::<T>(sgn((p[k] / p[k - TSMOM_LOOKBACK]).ln()) as f64));
            }
            sig
        })
        .collect();
    Ok(StrategyOutput::from_signals(universe, signals, cfg))
}

/// Parameters of the EWMA-crossover signal. Timescales are half-lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CtaParams {
    pub timescales: Vec<(usize, usize)>,
    pub price_std_window: usize,
    pub signal_std_window: usize,
    pub min_history: usize,
}

impl Default for CtaParams {
    fn default() -> Self {
        Self {
            timescales: vec![(8, 24), (16, 48), (32, 96)],
            price_std_window: 63,
            signal_std_window: 252,
            min_history: 252 + 96,
        }
    }
}

/// Scale making the response peak near one.
pub const CTA_RESPONSE_SCALE: f64 = 0.89;

/// `z * exp(-z^2 / 4) / 0.89`, maximal at `z = sqrt(2)`.
pub fn cta_response<T: Real>(z: T) -> T {
    z * (-z * z / lit(4.0)).exp() / lit(CTA_RESPONSE_SCALE)
}

fn rolling_std<T: Real>(x: &[Option<T>], window: usize) -> Vec<Option<T>> {
    let n: T = lit(window as f64);
    (0..x.len())
        .map(|t| {
            if t + 1 < window {
                return None;
            }
            let w = &x[t + 1 - window..=t];
            let mut sum = T::zero();
            for v in w {
                sum += (*v)?;
            }
            let mean = sum / n;
            let ss: T = w.iter().map(|v| (v.unwrap() - mean).powi(2)).sum();
            Some((ss / (n - T::one())).sqrt())
        })
        .collect()
}

fn guarded_div<T: Real>(a: T, b: T) -> T {
    if b < lit(1e-12) {
        T::zero()
    } else {
        a / b
    }
}

/// CTA signal at every bar of a price path; `None` before `min_history` bars.
pub fn cta_signal_path<T: Real>(prices: &[T], params: &CtaParams) -> Vec<Option<T>> {
    let n = prices.len();
    let price_opt: Vec<Option<T>> = prices.iter().map(|&p| Some(p)).collect();
    let price_std = rolling_std(&price_opt, params.price_std_window);
    let mut total = vec![Some(T::zero()); n];
    for &(short, long) in &params.timescales {
        let ms = ewma_path(prices, short);
        let ml = ewma_path(prices, long);
        let y: Vec<Option<T>> =
            (0..n).map(|t| price_std[t].map(|s| guarded_div(ms[t] - ml[t], s))).collect();
        let y_std = rolling_std(&y, params.signal_std_window);
        for t in 0..n {
            total[t] = match (total[t], y[t], y_std[t]) {
                (Some(acc), Some(yt), Some(sd)) => Some(acc + cta_response(guarded_div(yt, sd))),
                _ => None,
            };
        }
    }
    let k: T = lit(params.timescales.len() as f64);
    total
        .into_iter()
        .enumerate()
        .map(|(t, v)| if t + 1 < params.min_history { None } else { v.map(|s| s / k) })
        .collect()
}

/// Half-life EWMA of a price path, seeded at the first price.
fn ewma_path<T: Real>(prices: &[T], half_life: usize) -> Vec<T> {
    let alpha: T = T::one() - (lit::<T>(0.5f64.ln()) / lit(half_life as f64)).exp();
    let mut out = Vec::with_capacity(prices.len());
    let mut m = prices[0];
    for &p in prices {
        m = m + alpha * (p - m);
        out.push(m);
    }
    out
}

/// CTA signal at bar `t` of a single series.
pub fn cta_mom_signal<T: Real>(series: &AssetSeries<T>, t: usize, params: &CtaParams) -> Result<T, BaselineError> {
    if t >= series.len() {
        return Err(BaselineError::InsufficientHistory { t, needed: params.min_history, available: series.len() });
    }
    cta_signal_path(&series.settles()[..=t], params)[t]
        .ok_or(BaselineError::InsufficientHistory { t, needed: params.min_history, available: t + 1 })
}

/// CTA momentum with positions `signal * sigma_tgt / sigma_t`.
pub fn cta_mom_portfolio<T: Real>(
    universe: &Universe<T>,
    cfg: &VolTargetConfig,
    params: &CtaParams,
) -> Result<StrategyOutput<T>, BaselineError> {
    cfg.validate()?;
    let n = universe.len();
    let signals = universe
        .assets()
        .iter()
        .map(|asset| {
            let path = cta_signal_path(&asset.series.settles(), params);
            let mut sig = vec![None; n];
            for (k, s) in path.into_iter().enumerate() {
                sig[asset.start + k] = s;
            }
            sig
        })
        .collect();
    Ok(StrategyOutput::from_signals(universe, signals, cfg))
}
