//! Close-to-close and range-based volatility estimators, the EWMA ex-ante
//! volatility used for position sizing, and forward-volatility targets.
//!
//! Per bar `t` with open `O`, high `H`, low `L`, close `C`:
//!
//! * `u = ln(H/O)`, `d = ln(L/O)`, `c = ln(C/O)`
//! * `o = ln(O_t / C_{t-1})` (overnight), `r = ln(C_t / C_{t-1})`
//!
//! Every estimator returns an annualized volatility: daily variance times
//! 252, then the square root.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{AssetSeries, Bar};
use crate::scalar::{lit, Real, TRADING_DAYS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VolError {
    #[error("window {window} needs {needed} bars, series has {available}")]
    WindowTooLarge { window: usize, needed: usize, available: usize },
    #[error("window {window} is below the minimum {min} for {kind:?}")]
    WindowTooSmall { kind: VolEstimatorKind, window: usize, min: usize },
    #[error("{0:?} has no forward target")]
    InvalidKind(VolEstimatorKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolEstimatorKind {
    CloseToClose,
    Parkinson,
    GarmanKlass,
    RogersSatchell,
    YangZhang,
    EwmaExAnte,
}

impl VolEstimatorKind {
    /// The five estimators predicted by the auxiliary heads, in feature order.
    pub const AUXILIARY: [VolEstimatorKind; 5] = [
        VolEstimatorKind::CloseToClose,
        VolEstimatorKind::Parkinson,
        VolEstimatorKind::GarmanKlass,
        VolEstimatorKind::RogersSatchell,
        VolEstimatorKind::YangZhang,
    ];

    /// Short tag used in file columns.
    pub fn tag(self) -> &'static str {
        match self {
            VolEstimatorKind::CloseToClose => "ctc",
            VolEstimatorKind::Parkinson => "p",
            VolEstimatorKind::GarmanKlass => "gk",
            VolEstimatorKind::RogersSatchell => "rs",
            VolEstimatorKind::YangZhang => "yz",
            VolEstimatorKind::EwmaExAnte => "ewma",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        [Self::CloseToClose, Self::Parkinson, Self::GarmanKlass, Self::RogersSatchell, Self::YangZhang, Self::EwmaExAnte]
            .into_iter()
            .find(|k| k.tag() == tag)
    }

    /// Smallest admissible window.
    pub fn min_window(self) -> usize {
        match self {
            VolEstimatorKind::CloseToClose | VolEstimatorKind::YangZhang | VolEstimatorKind::EwmaExAnte => 2,
            _ => 1,
        }
    }

    /// Whether the estimator reads the close of the bar before the window.
    fn needs_prev_close(self) -> bool {
        matches!(self, VolEstimatorKind::CloseToClose | VolEstimatorKind::YangZhang)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Backward,
    Forward,
}

/// Annualized volatilities aligned to the series dates; `None` marks dates
/// without enough bars.
#[derive(Debug, Clone, PartialEq)]
pub struct VolSeries<T> {
    pub asset_id: String,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<Option<T>>,
    pub window: usize,
    pub kind: VolEstimatorKind,
    pub direction: Direction,
}

impl<T: Real> VolSeries<T> {
    /// Mean of the defined values.
    pub fn mean(&self) -> Option<T> {
        let defined: Vec<T> = self.values.iter().flatten().copied().collect();
        (!defined.is_empty()).then(|| defined.iter().copied().sum::<T>() / lit(defined.len() as f64))
    }
}

#[derive(Clone, Copy)]
struct LogBar<T> {
    u: T,
    d: T,
    c: T,
}

impl<T: Real> LogBar<T> {
    fn of(b: &Bar<T>) -> Self {
        Self { u: (b.high / b.open).ln(), d: (b.low / b.open).ln(), c: (b.close / b.open).ln() }
    }
}

fn sample_variance<T: Real>(xs: impl Iterator<Item = T> + Clone) -> T {
    let n = xs.clone().count();
    let mean = xs.clone().sum::<T>() / lit(n as f64);
    xs.map(|x| (x - mean) * (x - mean)).sum::<T>() / lit((n - 1) as f64)
}

fn rs_term<T: Real>(b: &LogBar<T>) -> T {
    b.u * (b.u - b.c) + b.d * (b.d - b.c)
}

/// `k` weight of the Yang-Zhang estimator for window `n`.
pub fn yang_zhang_k(n: usize) -> f64 {
    0.34 / (1.34 + (n as f64 + 1.0) / (n as f64 - 1.0))
}

/// Daily variance of `kind` over `bars[end + 1 - n ..= end]`.
///
/// Kinds that need the prior close read `bars[end - n]` as well. Callers
/// guarantee the index range is in bounds.
fn window_daily_variance<T: Real>(kind: VolEstimatorKind, bars: &[Bar<T>], end: usize, n: usize) -> T {
    let first = end + 1 - n;
    let window = &bars[first..=end];
    let nn: T = lit(n as f64);
    let zero = T::zero();
    match kind {
        VolEstimatorKind::CloseToClose => {
            let rets = (first..=end).map(|k| (bars[k].close / bars[k - 1].close).ln());
            sample_variance(rets)
        }
        VolEstimatorKind::Parkinson => {
            let sum: T = window.iter().map(|b| (b.high / b.low).ln().powi(2)).sum();
            sum / (lit::<T>(4.0) * nn * T::LN_2())
        }
        VolEstimatorKind::GarmanKlass => {
            let coef = lit::<T>(2.0) * T::LN_2() - T::one();
            let sum: T = window
                .iter()
                .map(|b| {
                    let lb = LogBar::of(b);
                    lit::<T>(0.5) * (lb.u - lb.d).powi(2) - coef * lb.c * lb.c
                })
                .sum();
            (sum / nn).max(zero)
        }
        VolEstimatorKind::RogersSatchell => {
            let sum: T = window.iter().map(|b| rs_term(&LogBar::of(b))).sum();
            (sum / nn).max(zero)
        }
        VolEstimatorKind::YangZhang => {
            let overnight = (first..=end).map(|k| (bars[k].open / bars[k - 1].close).ln());
            let open_close = window.iter().map(|b| (b.close / b.open).ln());
            let rs = (window.iter().map(|b| rs_term(&LogBar::of(b))).sum::<T>() / nn).max(zero);
            let k: T = lit(yang_zhang_k(n));
            (sample_variance(overnight) + k * sample_variance(open_close) + (T::one() - k) * rs).max(zero)
        }
        VolEstimatorKind::EwmaExAnte => unreachable!("EWMA is recursive, not windowed"),
    }
}

fn annualize<T: Real>(daily_var: T) -> T {
    (daily_var.max(T::zero()) * lit(TRADING_DAYS)).sqrt()
}

fn check_window<T: Real>(kind: VolEstimatorKind, series: &AssetSeries<T>, n: usize) -> Result<(), VolError> {
    if n < kind.min_window() {
        return Err(VolError::WindowTooSmall { kind, window: n, min: kind.min_window() });
    }
    let needed = n + usize::from(kind.needs_prev_close());
    if series.len() < needed {
        return Err(VolError::WindowTooLarge { window: n, needed, available: series.len() });
    }
    Ok(())
}

/// Rolling backward estimator: value at `t` uses bars up to and including `t`.
pub fn backward<T: Real>(kind: VolEstimatorKind, series: &AssetSeries<T>, n: usize) -> Result<VolSeries<T>, VolError> {
    if kind == VolEstimatorKind::EwmaExAnte {
        return ewma_ex_ante(series, n);
    }
    check_window(kind, series, n)?;
    let bars = series.bars();
    let first_defined = n - 1 + usize::from(kind.needs_prev_close());
    let values = (0..bars.len())
        .map(|t| (t >= first_defined).then(|| annualize(window_daily_variance(kind, bars, t, n))))
        .collect();
    Ok(VolSeries {
        asset_id: series.asset_id().to_string(),
        dates: series.dates(),
        values,
        window: n,
        kind,
        direction: Direction::Backward,
    })
}

pub fn close_to_close<T: Real>(series: &AssetSeries<T>, n: usize) -> Result<VolSeries<T>, VolError> {
    backward(VolEstimatorKind::CloseToClose, series, n)
}

pub fn parkinson<T: Real>(series: &AssetSeries<T>, n: usize) -> Result<VolSeries<T>, VolError> {
    backward(VolEstimatorKind::Parkinson, series, n)
}

pub fn garman_klass<T: Real>(series: &AssetSeries<T>, n: usize) -> Result<VolSeries<T>, VolError> {
    backward(VolEstimatorKind::GarmanKlass, series, n)
}

pub fn rogers_satchell<T: Real>(series: &AssetSeries<T>, n: usize) -> Result<VolSeries<T>, VolError> {
    backward(VolEstimatorKind::RogersSatchell, series, n)
}

pub fn yang_zhang<T: Real>(series: &AssetSeries<T>, n: usize) -> Result<VolSeries<T>, VolError> {
    backward(VolEstimatorKind::YangZhang, series, n)
}

/// EWMA volatility of daily settle log returns around their EW mean.
///
/// Decay `alpha = 2 / (span + 1)`. The first defined value is at index 1.
pub fn ewma_ex_ante<T: Real>(series: &AssetSeries<T>, span: usize) -> Result<VolSeries<T>, VolError> {
    let kind = VolEstimatorKind::EwmaExAnte;
    if span < 2 {
        return Err(VolError::WindowTooSmall { kind, window: span, min: 2 });
    }
    if series.len() < 2 {
        return Err(VolError::WindowTooLarge { window: span, needed: 2, available: series.len() });
    }
    let settles = series.settles();
    let values = ewma_vol_path(&settles, span);
    Ok(VolSeries {
        asset_id: series.asset_id().to_string(),
        dates: series.dates(),
        values,
        window: span,
        kind,
        direction: Direction::Backward,
    })
}

/// EWMA annualized vol path over a price path; index 0 is undefined.
pub(crate) fn ewma_vol_path<T: Real>(prices: &[T], span: usize) -> Vec<Option<T>> {
    let alpha: T = lit(2.0 / (span as f64 + 1.0));
    let one_minus = T::one() - alpha;
    let mut out = Vec::with_capacity(prices.len());
    if prices.is_empty() {
        return out;
    }
    out.push(None);
    let (mut mean, mut var) = (T::zero(), T::zero());
    for t in 1..prices.len() {
        let r = (prices[t] / prices[t - 1]).ln();
        if t == 1 {
            mean = r;
        } else {
            let dev = r - mean;
            mean += alpha * dev;
            var = one_minus * (var + alpha * dev * dev);
        }
        out.push(Some(annualize(var)));
    }
    out
}

/// Forward target: value at `t` is the estimator over bars `(t, t + horizon]`.
///
/// Close-to-close and Yang-Zhang also read the close at `t` itself, which is
/// known at `t`. The last `horizon` dates are absent.
pub fn forward_target<T: Real>(
    series: &AssetSeries<T>,
    kind: VolEstimatorKind,
    horizon: usize,
) -> Result<VolSeries<T>, VolError> {
    if kind == VolEstimatorKind::EwmaExAnte {
        return Err(VolError::InvalidKind(kind));
    }
    if horizon < kind.min_window() {
        return Err(VolError::WindowTooSmall { kind, window: horizon, min: kind.min_window() });
    }
    let bars = series.bars();
    let values = (0..bars.len())
        .map(|t| {
            let end = t + horizon;
            (end < bars.len()).then(|| annualize(window_daily_variance(kind, bars, end, horizon)))
        })
        .collect();
    Ok(VolSeries {
        asset_id: series.asset_id().to_string(),
        dates: series.dates(),
        values,
        window: horizon,
        kind,
        direction: Direction::Forward,
    })
}
