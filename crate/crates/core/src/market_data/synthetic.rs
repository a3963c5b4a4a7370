//! Seeded synthetic futures-like universes with trend regimes.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{build_universe, AssetSeries, Bar, DataError, FillPolicy, Universe};
use crate::scalar::{Real, TRADING_DAYS};

/// Intraday sub-steps used to draw the high/low of each bar.
const INTRADAY_STEPS: usize = 32;

/// Parameters of the synthetic generator.
///
/// `drift` and `vol` are annualized; a single-element list applies to every
/// asset. With `persistence = Some(p)` each asset's drift flips sign with
/// probability `1 - p` per day, starting in the positive regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_assets: usize,
    pub n_days: usize,
    pub start_date: NaiveDate,
    pub drift: Vec<f64>,
    pub vol: Vec<f64>,
    pub persistence: Option<f64>,
    /// Share of daily variance realized between the previous settle and the open.
    pub overnight_fraction: f64,
    pub initial_price: f64,
    pub id_prefix: String,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_assets: 4,
            n_days: 2520,
            start_date: NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date"),
            drift: vec![0.0],
            vol: vec![0.2],
            persistence: None,
            overnight_fraction: 0.0,
            initial_price: 100.0,
            id_prefix: "SYN".into(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |field: &str, reason: String| {
            Err(DataError::InvalidSpec { field: field.to_string(), reason })
        };
        if self.n_assets < 1 {
            return bad("n_assets", "must be at least 1".into());
        }
        if self.n_days < 2 {
            return bad("n_days", "must be at least 2".into());
        }
        for (field, list) in [("drift", &self.drift), ("vol", &self.vol)] {
            if list.len() != 1 && list.len() != self.n_assets {
                return bad(field, format!("expected 1 or {} values, got {}", self.n_assets, list.len()));
            }
            if list.iter().any(|x| !x.is_finite()) {
                return bad(field, "values must be finite".into());
            }
        }
        if self.vol.iter().any(|&v| v < 0.0) {
            return bad("vol", "volatility must be nonnegative".into());
        }
        if let Some(p) = self.persistence {
            if !(0.0..=1.0).contains(&p) {
                return bad("persistence", format!("must lie in [0, 1], got {p}"));
            }
        }
        if !(0.0..=1.0).contains(&self.overnight_fraction) {
            return bad("overnight_fraction", "must lie in [0, 1]".into());
        }
        if !(self.initial_price.is_finite() && self.initial_price > 0.0) {
            return bad("initial_price", "must be strictly positive".into());
        }
        Ok(())
    }

    fn per_asset(list: &[f64], i: usize) -> f64 {
        if list.len() == 1 {
            list[0]
        } else {
            list[i]
        }
    }

    /// Weekday calendar of `n_days` trading dates from `start_date`.
    pub fn calendar(&self) -> Vec<NaiveDate> {
        let mut out = Vec::with_capacity(self.n_days);
        let mut d = self.start_date;
        while out.len() < self.n_days {
            if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
                out.push(d);
            }
            d = d.succ_opt().expect("date in range");
        }
        out
    }
}

/// Deterministic universe for the given spec and seed.
pub fn generate_synthetic<T: Real>(spec: &SyntheticSpec, seed: u64) -> Result<Universe<T>, DataError> {
    spec.validate()?;
    let calendar = spec.calendar();
    let width = (spec.n_assets.max(2) - 1).to_string().len();
    let series = (0..spec.n_assets)
        .map(|i| {
            let id = format!("{}{:0width$}", spec.id_prefix, i, width = width);
            let bars = simulate_asset(spec, i, seed, &calendar);
            AssetSeries::new(id, bars)
        })
        .collect::<Result<Vec<_>, _>>()?;
    build_universe(series, FillPolicy::ForwardFill)
}

fn simulate_asset<T: Real>(spec: &SyntheticSpec, asset: usize, seed: u64, calendar: &[NaiveDate]) -> Vec<Bar<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(asset as u64 + 1);

    let mu = SyntheticSpec::per_asset(&spec.drift, asset);
    let sigma = SyntheticSpec::per_asset(&spec.vol, asset);
    let daily_var = sigma * sigma / TRADING_DAYS;
    let overnight_sd = (spec.overnight_fraction * daily_var).sqrt();
    let step_var = (1.0 - spec.overnight_fraction) * daily_var / INTRADAY_STEPS as f64;
    let step_sd = step_var.sqrt();

    let mut regime = 1.0;
    let mut prev_settle = spec.initial_price.ln();
    let mut bars = Vec::with_capacity(calendar.len());
    for (t, &date) in calendar.iter().enumerate() {
        if t > 0 {
            if let Some(p) = spec.persistence {
                if rng.random::<f64>() >= p {
                    regime = -regime;
                }
            }
        }
        let step_drift = regime * mu / TRADING_DAYS / INTRADAY_STEPS as f64;
        let overnight: f64 = overnight_sd * rng.sample::<f64, _>(StandardNormal);
        let open = prev_settle + overnight;

        let (mut x, mut hi, mut lo) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..INTRADAY_STEPS {
            let z: f64 = rng.sample(StandardNormal);
            let next = x + step_drift + step_sd * z;
            // exact Brownian-bridge extremes between the two sub-step endpoints
            let gap = (next - x).powi(2);
            let u1: f64 = 1.0 - rng.random::<f64>();
            let u2: f64 = 1.0 - rng.random::<f64>();
            let top = 0.5 * (x + next + (gap - 2.0 * step_var * u1.ln()).sqrt());
            let bottom = 0.5 * (x + next - (gap - 2.0 * step_var * u2.ln()).sqrt());
            hi = hi.max(top).max(next);
            lo = lo.min(bottom).min(next);
            x = next;
        }
        let close = open + x;
        let bar = Bar::new(
            date,
            T::lit(open.exp()),
            T::lit((open + hi).exp()),
            T::lit((open + lo).exp()),
            T::lit(close.exp()),
            T::lit(close.exp()),
        );
        bars.push(clamp_bracket(bar));
        prev_settle = close;
    }
    bars
}

/// Guards the high/low bracket against rounding in the `f64 -> T` cast.
fn clamp_bracket<T: Real>(mut b: Bar<T>) -> Bar<T> {
    b.high = b.high.max(b.open.max(b.close));
    b.low = b.low.min(b.open.min(b.close));
    b
}
