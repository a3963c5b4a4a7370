//! Model inputs: multi-horizon log returns, realized volatility and
//! vol-of-vol, each standardized by a trailing z-score, plus the five
//! forward-volatility targets.
//!
//! Feature order (with the default spec) is
//! `r1 r21 r63 r126 r252 rv5 rv21 rv63 rv126 rv252 vv5 vv21 vv63 vv126 vv252`,
//! where `vvN` is the vol-of-vol of `rvN`.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::Universe;
use crate::numfmt::fmt10;
use crate::scalar::{lit, Real, TRADING_DAYS};
use crate::vol_estimators::{forward_target, VolEstimatorKind};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("window {window} needs more than the {available} observations available")]
    WindowTooLarge { window: usize, available: usize },
    #[error("invalid feature spec: {0}")]
    InvalidSpec(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Floor applied to realized volatility before taking log-changes.
pub const RV_FLOOR: f64 = 1e-8;
/// Standard deviations below this produce a zero z-score.
pub const ZSCORE_MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSpec {
    pub return_horizons: Vec<usize>,
    pub rv_horizons: Vec<usize>,
    pub volvol_window: usize,
    pub zscore_window: usize,
    pub target_horizon: usize,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            return_horizons: vec![1, 21, 63, 126, 252],
            rv_horizons: vec![5, 21, 63, 126, 252],
            volvol_window: 21,
            zscore_window: 21,
            target_horizon: 21,
        }
    }
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.return_horizons.is_empty() || self.rv_horizons.is_empty() {
            return Err(FeatureError::InvalidSpec("horizon lists must be nonempty".into()));
        }
        if self.return_horizons.iter().chain(&self.rv_horizons).any(|&h| h < 1) {
            return Err(FeatureError::InvalidSpec("horizons must be at least 1".into()));
        }
        if self.volvol_window < 1 {
            return Err(FeatureError::InvalidSpec("volvol_window must be at least 1".into()));
        }
        if self.zscore_window < 2 {
            return Err(FeatureError::InvalidSpec("zscore_window must be at least 2".into()));
        }
        if self.target_horizon < 2 {
            return Err(FeatureError::InvalidSpec("target_horizon must be at least 2".into()));
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.return_horizons.len() + 2 * self.rv_horizons.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.return_horizons.iter().map(|h| format!("r{h}")).collect();
        names.extend(self.rv_horizons.iter().map(|h| format!("rv{h}")));
        names.extend(self.rv_horizons.iter().map(|h| format!("vv{h}")));
        names
    }

    /// Bars of history (including the current one) before every feature is
    /// defined: the longest vol-of-vol chain plus the z-score window.
    pub fn warmup_bars(&self) -> usize {
        let rv_chain = self.rv_horizons.iter().max().copied().unwrap_or(0) + 1 + self.volvol_window;
        let ret_chain = self.return_horizons.iter().max().copied().unwrap_or(0) + 1;
        rv_chain.max(ret_chain) + self.zscore_window - 1
    }
}

/// `ln(P_t / P_{t-d})`.
pub fn log_return<T: Real>(prices: &[T], d: usize) -> Result<Vec<Option<T>>, FeatureError> {
    if d < 1 || d >= prices.len() {
        return Err(FeatureError::WindowTooLarge { window: d, available: prices.len() });
    }
    Ok(log_return_opt(&prices.iter().map(|&p| Some(p)).collect::<Vec<_>>(), d))
}

fn log_return_opt<T: Real>(prices: &[Option<T>], d: usize) -> Vec<Option<T>> {
    (0..prices.len())
        .map(|t| match (t.checked_sub(d).and_then(|s| prices[s]), prices[t]) {
            (Some(p0), Some(p1)) => Some((p1 / p0).ln()),
            _ => None,
        })
        .collect()
}

/// `sqrt(252 / N * sum of the last N squared daily log returns)`, raw
/// (not demeaned).
pub fn realized_vol_feature<T: Real>(prices: &[T], n: usize) -> Result<Vec<Option<T>>, FeatureError> {
    if n < 1 || n >= prices.len() {
        return Err(FeatureError::WindowTooLarge { window: n, available: prices.len() });
    }
    let daily = log_return_opt(&prices.iter().map(|&p| Some(p)).collect::<Vec<_>>(), 1);
    Ok(rms_annualized(&daily, n))
}

fn rms_annualized<T: Real>(returns: &[Option<T>], n: usize) -> Vec<Option<T>> {
    let scale: T = lit(TRADING_DAYS / n as f64);
    (0..returns.len())
        .map(|t| {
            if t + 1 < n {
                return None;
            }
            let mut acc = T::zero();
            for r in &returns[t + 1 - n..=t] {
                let r = (*r)?;
                acc += r * r;
            }
            Some((scale * acc).sqrt())
        })
        .collect()
}

/// Realized volatility of a realized-volatility series: the RV formula
/// applied to daily log-changes of the (floored) RV values.
pub fn vol_of_vol<T: Real>(rv: &[Option<T>], window: usize) -> Result<Vec<Option<T>>, FeatureError> {
    let defined = rv.iter().filter(|x| x.is_some()).count();
    if window < 1 || window >= defined {
        return Err(FeatureError::WindowTooLarge { window, available: defined });
    }
    Ok(vol_of_vol_opt(rv, window))
}

fn vol_of_vol_opt<T: Real>(rv: &[Option<T>], window: usize) -> Vec<Option<T>> {
    let floor: T = lit(RV_FLOOR);
    let floored: Vec<Option<T>> = rv.iter().map(|x| x.map(|v| v.max(floor))).collect();
    rms_annualized(&log_return_opt(&floored, 1), window)
}

/// `(x_t - mean) / std` over the trailing `window` values including `t`,
/// sample std, zero when the std falls below [`ZSCORE_MIN_STD`].
pub fn sliding_zscore<T: Real>(x: &[Option<T>], window: usize) -> Result<Vec<Option<T>>, FeatureError> {
    if window < 2 || window > x.len() {
        return Err(FeatureError::WindowTooLarge { window, available: x.len() });
    }
    Ok(zscore_opt(x, window))
}

fn zscore_opt<T: Real>(x: &[Option<T>], window: usize) -> Vec<Option<T>> {
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
            let std = (ss / (n - T::one())).sqrt();
            let cur = x[t].unwrap();
            Some(if std < lit(ZSCORE_MIN_STD) { T::zero() } else { (cur - mean) / std })
        })
        .collect()
}

/// Standardized features and forward-vol targets on the universe calendar.
///
/// Storage is dense: `features` holds `n_assets * n_dates * n_features`
/// values (asset-major, then date), zero where `valid` is false.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePanel<T> {
    pub asset_ids: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub feature_names: Vec<String>,
    pub spec: FeatureSpec,
    features: Vec<T>,
    targets: Vec<[Option<T>; 5]>,
    valid: Vec<bool>,
}

impl<T: Real> FeaturePanel<T> {
    pub fn n_assets(&self) -> usize {
        self.asset_ids.len()
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn cell(&self, asset: usize, t: usize) -> usize {
        asset * self.dates.len() + t
    }

    pub fn is_valid(&self, asset: usize, t: usize) -> bool {
        self.valid[self.cell(asset, t)]
    }

    /// Feature vector, only where valid.
    pub fn features(&self, asset: usize, t: usize) -> Option<&[T]> {
        let c = self.cell(asset, t);
        let f = self.n_features();
        self.valid[c].then(|| &self.features[c * f..(c + 1) * f])
    }

    /// Raw row (zeros where invalid); used when packing batches.
    pub(crate) fn row_unchecked(&self, asset: usize, t: usize) -> &[T] {
        let c = self.cell(asset, t);
        let f = self.n_features();
        &self.features[c * f..(c + 1) * f]
    }

    /// Forward-vol targets in [`VolEstimatorKind::AUXILIARY`] order.
    pub fn targets(&self, asset: usize, t: usize) -> &[Option<T>; 5] {
        &self.targets[self.cell(asset, t)]
    }

    pub fn target(&self, asset: usize, t: usize, kind: VolEstimatorKind) -> Option<T> {
        let k = VolEstimatorKind::AUXILIARY.iter().position(|&x| x == kind)?;
        self.targets[self.cell(asset, t)][k]
    }

    /// True when `lookback` consecutive valid rows end at `t`.
    pub fn window_valid(&self, asset: usize, t: usize, lookback: usize) -> bool {
        t + 1 >= lookback && (t + 1 - lookback..=t).all(|s| self.is_valid(asset, s))
    }

    /// Columnar CSV: asset_id, date, f1.., tgt_ctc.., valid.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), FeatureError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["asset_id".to_string(), "date".to_string()];
        header.extend((1..=self.n_features()).map(|i| format!("f{i}")));
        header.extend(VolEstimatorKind::AUXILIARY.iter().map(|k| format!("tgt_{}", k.tag())));
        header.push("valid".into());
        w.write_record(&header).map_err(csv_io)?;
        for a in 0..self.n_assets() {
            for t in 0..self.n_dates() {
                let mut row = vec![self.asset_ids[a].clone(), self.dates[t].format("%Y-%m-%d").to_string()];
                match self.features(a, t) {
                    Some(f) => row.extend(f.iter().map(|x| fmt10(x.to_f64_lossy()))),
                    None => row.extend(std::iter::repeat_n(String::new(), self.n_features())),
                }
                row.extend(self.targets(a, t).iter().map(|x| x.map(|v| fmt10(v.to_f64_lossy())).unwrap_or_default()));
                row.push(if self.is_valid(a, t) { "1" } else { "0" }.to_string());
                w.write_record(&row).map_err(csv_io)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> FeatureError {
    FeatureError::Io(std::io::Error::other(e))
}

/// Per-asset raw (unstandardized) features, each aligned to the asset's bars.
fn raw_features<T: Real>(prices: &[T], spec: &FeatureSpec) -> Vec<Vec<Option<T>>> {
    let opt: Vec<Option<T>> = prices.iter().map(|&p| Some(p)).collect();
    let daily = log_return_opt(&opt, 1);
    let mut out = Vec::with_capacity(spec.n_features());
    for &d in &spec.return_horizons {
        out.push(log_return_opt(&opt, d));
    }
    let rvs: Vec<_> = spec.rv_horizons.iter().map(|&n| rms_annualized(&daily, n)).collect();
    for rv in &rvs {
        out.push(rv.clone());
    }
    for rv in &rvs {
        out.push(vol_of_vol_opt(rv, spec.volvol_window));
    }
    out
}

/// Builds the standardized panel and targets for every asset.
pub fn build_panel<T: Real>(universe: &Universe<T>, spec: &FeatureSpec) -> Result<FeaturePanel<T>, FeatureError> {
    spec.validate()?;
    let n_dates = universe.len();
    let n_assets = universe.n_assets();
    let nf = spec.n_features();
    let mut features = vec![T::zero(); n_assets * n_dates * nf];
    let mut targets = vec![[None; 5]; n_assets * n_dates];
    let mut valid = vec![false; n_assets * n_dates];

    for (a, asset) in universe.assets().iter().enumerate() {
        let prices = asset.series.settles();
        let z: Vec<Vec<Option<T>>> =
            raw_features(&prices, spec).iter().map(|f| zscore_opt(f, spec.zscore_window)).collect();
        let fwd: Vec<Vec<Option<T>>> = VolEstimatorKind::AUXILIARY
            .iter()
            .map(|&k| {
                forward_target(&asset.series, k, spec.target_horizon)
                    .map(|v| v.values)
                    .unwrap_or_else(|_| vec![None; prices.len()])
            })
            .collect();
        for k in 0..prices.len() {
            let t = asset.start + k;
            let cell = a * n_dates + t;
            for (j, tgt) in fwd.iter().enumerate() {
                targets[cell][j] = tgt[k];
            }
            let row: Option<Vec<T>> = z.iter().map(|f| f[k].filter(|v| v.is_finite())).collect();
            if let Some(row) = row {
                features[cell * nf..(cell + 1) * nf].copy_from_slice(&row);
                valid[cell] = true;
            }
        }
    }

    Ok(FeaturePanel {
        asset_ids: universe.asset_ids(),
        dates: universe.calendar().to_vec(),
        feature_names: spec.feature_names(),
        spec: spec.clone(),
        features,
        targets,
        valid,
    })
}
