//! Performance metrics of daily return series and report files.
//!
//! Returns are simple daily returns. Equity starts at 1 (100 in the equity
//! file) on an inception point before the first return, and drawdowns are
//! measured against that curve.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numfmt::fmt10;
use crate::scalar::TRADING_DAYS;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("need at least {need} observations, got {got}")]
    TooFewObservations { need: usize, got: usize },
    #[error("series has zero volatility")]
    ZeroVolatility,
    #[error("return at index {index} is {value}, a total loss")]
    TotalLoss { index: usize, value: f64 },
    #[error("series share no dates")]
    NoOverlap,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn need(n: usize, got: usize) -> Result<(), AnalyticsError> {
    if got < n {
        Err(AnalyticsError::TooFewObservations { need: n, got })
    } else {
        Ok(())
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_std(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Annualized sample volatility.
pub fn annualized_vol(returns: &[f64]) -> Result<f64, AnalyticsError> {
    need(2, returns.len())?;
    Ok(sample_std(returns) * TRADING_DAYS.sqrt())
}

/// Scales the series so its annualized sample volatility is `sigma_target`.
pub fn rescale_to_target_vol(returns: &[f64], sigma_target: f64) -> Result<Vec<f64>, AnalyticsError> {
    let vol = annualized_vol(returns)?;
    if !(vol > 0.0) || !vol.is_finite() {
        return Err(AnalyticsError::ZeroVolatility);
    }
    let k = sigma_target / vol;
    Ok(returns.iter().map(|r| r * k).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Annualization {
    /// `(prod(1 + r))^(252 / T) - 1`.
    #[default]
    Geometric,
    /// `252 * mean(r)`.
    Arithmetic,
}

pub fn annualized_return(returns: &[f64]) -> Result<f64, AnalyticsError> {
    annualized_return_with(returns, Annualization::Geometric)
}

pub fn annualized_return_with(returns: &[f64], mode: Annualization) -> Result<f64, AnalyticsError> {
    need(1, returns.len())?;
    if let Some((index, &value)) = returns.iter().enumerate().find(|(_, &r)| r <= -1.0) {
        return Err(AnalyticsError::TotalLoss { index, value });
    }
    Ok(match mode {
        Annualization::Geometric => {
            let log_growth: f64 = returns.iter().map(|r| r.ln_1p()).sum();
            (log_growth * TRADING_DAYS / returns.len() as f64).exp_m1()
        }
        Annualization::Arithmetic => mean(returns) * TRADING_DAYS,
    })
}

/// `mean / std * sqrt(252)` with sample std and zero risk-free rate.
pub fn sharpe_ratio(returns: &[f64]) -> Result<f64, AnalyticsError> {
    need(2, returns.len())?;
    let m = mean(returns);
    if m == 0.0 {
        return Ok(0.0);
    }
    let s = sample_std(returns);
    if s == 0.0 {
        return Err(AnalyticsError::ZeroVolatility);
    }
    Ok(m / s * TRADING_DAYS.sqrt())
}

/// `mean / sqrt(mean(min(r, 0)^2)) * sqrt(252)`; `+inf` (or `-inf`) when
/// no return is negative and the mean is nonzero.
pub fn sortino_ratio(returns: &[f64]) -> Result<f64, AnalyticsError> {
    need(2, returns.len())?;
    let m = mean(returns);
    if m == 0.0 {
        return Ok(0.0);
    }
    let dd = (returns.iter().map(|r| r.min(0.0).powi(2)).sum::<f64>() / returns.len() as f64).sqrt();
    if dd == 0.0 {
        return Ok(f64::INFINITY.copysign(m));
    }
    Ok(m / dd * TRADING_DAYS.sqrt())
}

/// Share of strictly positive returns.
pub fn proportion_positive(returns: &[f64]) -> Result<f64, AnalyticsError> {
    need(1, returns.len())?;
    Ok(returns.iter().filter(|&&r| r > 0.0).count() as f64 / returns.len() as f64)
}

/// Equity curve starting at 1 before the first return (`T + 1` points).
pub fn equity_curve(returns: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(returns.len() + 1);
    let mut e = 1.0;
    out.push(e);
    for r in returns {
        e *= 1.0 + r;
        out.push(e);
    }
    out
}

/// `E_t / max_{s <= t} E_s - 1` over the equity curve (`T + 1` points).
pub fn drawdown_series(returns: &[f64]) -> Vec<f64> {
    let mut peak = f64::NEG_INFINITY;
    equity_curve(returns)
        .into_iter()
        .map(|e| {
            peak = peak.max(e);
            e / peak - 1.0
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawdownStats {
    /// Deepest drawdown, `<= 0`.
    pub max_drawdown: f64,
    /// Trading days from the last peak before the deepest trough to it.
    pub max_drawdown_period: usize,
    /// Trading days from the trough back to the peak level; `None` if never.
    pub recovery_period: Option<usize>,
}

/// Deepest drawdown and its durations. The trough is the first point of
/// minimal drawdown and its peak the latest point at the running maximum
/// before it.
pub fn drawdown_stats(returns: &[f64]) -> Result<DrawdownStats, AnalyticsError> {
    need(1, returns.len())?;
    let dd = drawdown_series(returns);
    let mut trough = 0;
    for (t, &d) in dd.iter().enumerate() {
        if d < dd[trough] {
            trough = t;
        }
    }
    if dd[trough] == 0.0 {
        return Ok(DrawdownStats { max_drawdown: 0.0, max_drawdown_period: 0, recovery_period: Some(0) });
    }
    let peak = (0..trough).rev().find(|&t| dd[t] == 0.0).unwrap_or(0);
    let recovery = (trough + 1..dd.len()).find(|&t| dd[t] == 0.0).map(|t| t - trough);
    Ok(DrawdownStats { max_drawdown: dd[trough], max_drawdown_period: trough - peak, recovery_period: recovery })
}

/// Trailing-window Pearson correlation of two aligned series; `None` for
/// the first `window - 1` points and wherever either window is constant.
pub fn rolling_correlation(a: &[f64], b: &[f64], window: usize) -> Result<Vec<Option<f64>>, AnalyticsError> {
    if a.len() != b.len() {
        return Err(AnalyticsError::Invalid(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    if window < 2 {
        return Err(AnalyticsError::Invalid("window must be at least 2".into()));
    }
    if a.is_empty() {
        return Err(AnalyticsError::NoOverlap);
    }
    let mut out = vec![None; a.len()];
    for t in window.saturating_sub(1)..a.len() {
        let (x, y) = (&a[t + 1 - window..=t], &b[t + 1 - window..=t]);
        let (mx, my) = (mean(x), mean(y));
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (u, v) in x.iter().zip(y) {
            let (du, dv) = (u - mx, v - my);
            sxy += du * dv;
            sxx += du * du;
            syy += dv * dv;
        }
        if sxx > 0.0 && syy > 0.0 {
            out[t] = Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0));
        }
    }
    Ok(out)
}

/// Daily simple returns of an external total-return index.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSeries {
    pub dates: Vec<NaiveDate>,
    pub returns: Vec<f64>,
}

impl IndexSeries {
    /// Builds from `(date, level)` pairs; the first date has no return.
    pub fn from_levels(levels: &[(NaiveDate, f64)]) -> Result<Self, AnalyticsError> {
        need(2, levels.len())?;
        if levels.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(AnalyticsError::Invalid("index dates must be strictly ascending".into()));
        }
        if levels.iter().any(|(_, l)| !(l.is_finite() && *l > 0.0)) {
            return Err(AnalyticsError::Invalid("index levels must be positive".into()));
        }
        let (dates, returns) = levels.windows(2).map(|w| (w[1].0, (w[1].1 / w[0].1).ln().exp_m1())).unzip();
        Ok(Self { dates, returns })
    }

    /// Reads a `date,level` CSV with a header row.
    pub fn load_csv(path: &Path) -> Result<Self, AnalyticsError> {
        let mut r = csv::Reader::from_path(path).map_err(|e| AnalyticsError::Io(std::io::Error::other(e)))?;
        let mut levels = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| AnalyticsError::Io(std::io::Error::other(e)))?;
            let bad = || AnalyticsError::Invalid(format!("{}: bad row {}", path.display(), i + 2));
            let d = NaiveDate::parse_from_str(rec.get(0).ok_or_else(bad)?.trim(), "%Y-%m-%d").map_err(|_| bad())?;
            let l: f64 = rec.get(1).ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
            levels.push((d, l));
        }
        Self::from_levels(&levels)
    }

    /// Index returns on `dates`, `None` where the index has no observation.
    pub fn on(&self, dates: &[NaiveDate]) -> Vec<Option<f64>> {
        dates.iter().map(|d| self.dates.binary_search(d).ok().map(|i| self.returns[i])).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_obs: usize,
    pub annualized_return: f64,
    pub annualized_vol: f64,
    pub sharpe: f64,
    pub sortino: f64,
    /// `annualized_return / |max_drawdown|`; infinite when there is no drawdown.
    pub return_over_max_drawdown: f64,
    pub max_drawdown: f64,
    pub max_drawdown_period: usize,
    pub max_drawdown_recovery_period: Option<usize>,
    pub proportion_positive: f64,
}

pub fn metric_report(returns: &[f64], mode: Annualization) -> Result<MetricReport, AnalyticsError> {
    let ar = annualized_return_with(returns, mode)?;
    let dd = drawdown_stats(returns)?;
    Ok(MetricReport {
        n_obs: returns.len(),
        annualized_return: ar,
        annualized_vol: annualized_vol(returns)?,
        sharpe: sharpe_ratio(returns)?,
        sortino: sortino_ratio(returns)?,
        return_over_max_drawdown: ar / dd.max_drawdown.abs(),
        max_drawdown: dd.max_drawdown,
        max_drawdown_period: dd.max_drawdown_period,
        max_drawdown_recovery_period: dd.recovery_period,
        proportion_positive: proportion_positive(returns)?,
    })
}

/// A named daily return series for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSeries {
    pub tag: String,
    pub dates: Vec<NaiveDate>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportOptions {
    /// Ex-post volatility every series is rescaled to before measuring;
    /// `None` reports raw returns.
    pub rescale_to: Option<f64>,
    pub annualization: Annualization,
    pub correlation_window: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { rescale_to: Some(0.10), annualization: Annualization::Geometric, correlation_window: 252 }
    }
}

/// Weekday before `d`, used as the inception date of equity files.
pub fn previous_weekday(d: NaiveDate) -> NaiveDate {
    let mut p = d.pred_opt().expect("date in range");
    while matches!(p.weekday(), Weekday::Sat | Weekday::Sun) {
        p = p.pred_opt().expect("date in range");
    }
    p
}

const METRIC_COLUMNS: [&str; 10] = [
    "annualized_return",
    "annualized_vol",
    "sharpe",
    "sortino",
    "return_over_max_drawdown",
    "max_drawdown",
    "max_drawdown_period",
    "max_drawdown_recovery_period",
    "proportion_positive",
    "n_obs",
];

fn metric_fields(m: &MetricReport) -> Vec<String> {
    vec![
        fmt10(m.annualized_return),
        fmt10(m.annualized_vol),
        fmt10(m.sharpe),
        fmt10(m.sortino),
        fmt10(m.return_over_max_drawdown),
        fmt10(m.max_drawdown),
        m.max_drawdown_period.to_string(),
        m.max_drawdown_recovery_period.map_or_else(|| "not_recovered".to_string(), |p| p.to_string()),
        fmt10(m.proportion_positive),
        m.n_obs.to_string(),
    ]
}

/// Human-readable table: one column per strategy, one row per metric.
pub fn format_metrics_table(rows: &[(String, MetricReport)]) -> String {
    let pct = |x: f64| format!("{:.2}%", 100.0 * x);
    let num = |x: f64| format!("{x:.2}");
    let lines: Vec<(&str, Box<dyn Fn(&MetricReport) -> String>)> = vec![
        ("Annualized Return", Box::new(move |m| pct(m.annualized_return))),
        ("Annualized Volatility", Box::new(move |m| pct(m.annualized_vol))),
        ("Sharpe Ratio", Box::new(move |m| num(m.sharpe))),
        ("Sortino Ratio", Box::new(move |m| num(m.sortino))),
        ("Return Over Max Drawdown", Box::new(move |m| num(m.return_over_max_drawdown))),
        ("Max Drawdown", Box::new(move |m| pct(m.max_drawdown))),
        ("Max Drawdown Period (days)", Box::new(|m| m.max_drawdown_period.to_string())),
        (
            "Max Drawdown Recovery (days)",
            Box::new(|m| m.max_drawdown_recovery_period.map_or_else(|| "not recovered".into(), |p| p.to_string())),
        ),
        ("Proportion Positive", Box::new(move |m| pct(m.proportion_positive))),
        ("Observations", Box::new(|m| m.n_obs.to_string())),
    ];
    let label_w = lines.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
    let cells: Vec<Vec<String>> = lines.iter().map(|(_, f)| rows.iter().map(|(_, m)| f(m)).collect()).collect();
    let col_w: Vec<usize> = (0..rows.len())
        .map(|j| cells.iter().map(|r| r[j].len()).chain([rows[j].0.len()]).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    let _ = write!(s, "{:label_w$}", "");
    for (j, (tag, _)) in rows.iter().enumerate() {
        let _ = write!(s, "  {:>w$}", tag, w = col_w[j]);
    }
    s.push('\n');
    for ((label, _), row) in lines.iter().zip(&cells) {
        let _ = write!(s, "{label:label_w$}");
        for (j, c) in row.iter().enumerate() {
            let _ = write!(s, "  {:>w$}", c, w = col_w[j]);
        }
        s.push('\n');
    }
    s
}

type CsvOut = csv::Writer<BufWriter<fs::File>>;

fn csv_writer(path: &Path) -> Result<CsvOut, AnalyticsError> {
    Ok(csv::Writer::from_writer(BufWriter::new(fs::File::create(path)?)))
}

fn csv_err(e: csv::Error) -> AnalyticsError {
    AnalyticsError::Io(std::io::Error::other(e))
}

fn ymd(d: NaiveDate) -> String {
    d.format("%Y-%m-%d").to_string()
}

/// Writes `metrics.csv`, `metrics.txt`, `equity.csv`, `drawdown.csv` and,
/// with an index, `rolling_corr.csv` into `outdir`. Returns the metrics.
pub fn emit_report(
    runs: &[ReportSeries],
    index: Option<&IndexSeries>,
    outdir: &Path,
    opts: &ReportOptions,
) -> Result<Vec<(String, MetricReport)>, AnalyticsError> {
    let first = runs.first().ok_or_else(|| AnalyticsError::Invalid("no series to report".into()))?;
    need(2, first.returns.len())?;
    for r in runs {
        if r.dates != first.dates || r.returns.len() != r.dates.len() {
            return Err(AnalyticsError::Invalid(format!("series {} does not share the report dates", r.tag)));
        }
    }
    fs::create_dir_all(outdir)?;
    let scaled: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| match opts.rescale_to {
            Some(target) => rescale_to_target_vol(&r.returns, target),
            None => Ok(r.returns.clone()),
        })
        .collect::<Result<_, _>>()?;
    let metrics: Vec<(String, MetricReport)> = runs
        .iter()
        .zip(&scaled)
        .map(|(r, x)| Ok((r.tag.clone(), metric_report(x, opts.annualization)?)))
        .collect::<Result<_, AnalyticsError>>()?;

    let mut w = csv_writer(&outdir.join("metrics.csv"))?;
    let mut header = vec!["strategy".to_string()];
    header.extend(METRIC_COLUMNS.map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for (tag, m) in &metrics {
        let mut row = vec![tag.clone()];
        row.extend(metric_fields(m));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;

    let mut txt = BufWriter::new(fs::File::create(outdir.join("metrics.txt"))?);
    let span = format!("{} to {}", ymd(first.dates[0]), ymd(*first.dates.last().expect("nonempty")));
    let scale_note = match opts.rescale_to {
        Some(t) => format!(", rescaled to {}% annualized volatility", fmt10(100.0 * t)),
        None => String::new(),
    };
    writeln!(txt, "Net metrics, {span}{scale_note}\n")?;
    txt.write_all(format_metrics_table(&metrics).as_bytes())?;
    txt.flush()?;

    let tags: Vec<String> = runs.iter().map(|r| r.tag.clone()).collect();
    let inception = previous_weekday(first.dates[0]);
    let mut dates = vec![inception];
    dates.extend(&first.dates);
    for (name, curves) in [
        ("equity.csv", scaled.iter().map(|x| equity_curve(x).into_iter().map(|e| 100.0 * e).collect()).collect::<Vec<Vec<f64>>>()),
        ("drawdown.csv", scaled.iter().map(|x| drawdown_series(x)).collect()),
    ] {
        let mut w = csv_writer(&outdir.join(name))?;
        let mut header = vec!["date".to_string()];
        header.extend(tags.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (t, d) in dates.iter().enumerate() {
            let mut row = vec![ymd(*d)];
            row.extend(curves.iter().map(|c| fmt10(c[t])));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
    }

    if let Some(index) = index {
        let idx = index.on(&first.dates);
        let keep: Vec<usize> = (0..idx.len()).filter(|&t| idx[t].is_some()).collect();
        if keep.is_empty() {
            return Err(AnalyticsError::NoOverlap);
        }
        let b: Vec<f64> = keep.iter().map(|&t| idx[t].expect("kept")).collect();
        let corr: Vec<Vec<Option<f64>>> = runs
            .iter()
            .map(|r| {
                let a: Vec<f64> = keep.iter().map(|&t| r.returns[t]).collect();
                rolling_correlation(&a, &b, opts.correlation_window)
            })
            .collect::<Result<_, _>>()?;
        let mut w = csv_writer(&outdir.join("rolling_corr.csv"))?;
        let mut header = vec!["date".to_string()];
        header.extend(tags.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (k, &t) in keep.iter().enumerate() {
            let mut row = vec![ymd(first.dates[t])];
            row.extend(corr.iter().map(|c| c[k].map(fmt10).unwrap_or_default()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(metrics)
}
