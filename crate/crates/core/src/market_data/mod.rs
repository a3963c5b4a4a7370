//! Dated OHLC + settle series, CSV ingestion and the aligned multi-asset
//! [`Universe`].

mod synthetic;

pub use synthetic::{generate_synthetic, SyntheticSpec};

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numfmt::fmt10;
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing column `{column}`")]
    MissingColumn { column: String },
    #[error("row {row}: unparseable date `{value}`")]
    UnparseableDate { row: usize, value: String },
    #[error("row {row}: unparseable price in column `{column}`: `{value}`")]
    UnparseablePrice { row: usize, column: String, value: String },
    #[error("row {row}: {reason}")]
    PriceInvariantViolation { row: usize, reason: String },
    #[error("duplicate date {date} in series `{asset}`")]
    DuplicateDate { asset: String, date: NaiveDate },
    #[error("series `{asset}` has no rows")]
    EmptySeries { asset: String },
    #[error("duplicate asset id `{0}`")]
    DuplicateAssetId(String),
    #[error("no series supplied")]
    EmptyInput,
    #[error("invalid synthetic spec: {field}: {reason}")]
    InvalidSpec { field: String, reason: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One trading day of an asset. `settle` is the pricing reference for
/// returns; `filled` marks a bar repeated by forward-fill.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bar<T> {
    pub date: NaiveDate,
    pub open: T,
    pub high: T,
    pub low: T,
    pub close: T,
    pub settle: T,
    pub filled: bool,
}

impl<T: Real> Bar<T> {
    pub fn new(date: NaiveDate, open: T, high: T, low: T, close: T, settle: T) -> Self {
        Self { date, open, high, low, close, settle, filled: false }
    }

    /// Checks positivity and the high/low bracket.
    pub fn validate(&self) -> Result<(), String> {
        let prices = [
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
            ("settle", self.settle),
        ];
        for (name, p) in prices {
            if !(p.is_finite() && p > T::zero()) {
                return Err(format!("{name} must be finite and strictly positive, got {p}"));
            }
        }
        if self.low > self.open.min(self.close) {
            return Err(format!(
                "low {} exceeds min(open, close) {}",
                self.low,
                self.open.min(self.close)
            ));
        }
        if self.high < self.open.max(self.close) {
            return Err(format!(
                "high {} is below max(open, close) {}",
                self.high,
                self.open.max(self.close)
            ));
        }
        Ok(())
    }
}

/// A single asset's date-ascending bar history.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetSeries<T> {
    asset_id: String,
    bars: Vec<Bar<T>>,
}

impl<T: Real> AssetSeries<T> {
    /// Sorts by date and rejects duplicate dates or invalid bars.
    pub fn new(asset_id: impl Into<String>, mut bars: Vec<Bar<T>>) -> Result<Self, DataError> {
        let asset_id = asset_id.into();
        if bars.is_empty() {
            return Err(DataError::EmptySeries { asset: asset_id });
        }
        for (i, b) in bars.iter().enumerate() {
            b.validate()
                .map_err(|reason| DataError::PriceInvariantViolation { row: i + 1, reason })?;
        }
        bars.sort_by_key(|b| b.date);
        if let Some(w) = bars.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(DataError::DuplicateDate { asset: asset_id, date: w[0].date });
        }
        Ok(Self { asset_id, bars })
    }

    pub fn asset_id(&self) -> &str {
        &self.asset_id
    }

    pub fn bars(&self) -> &[Bar<T>] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.bars.iter().map(|b| b.date).collect()
    }

    pub fn settles(&self) -> Vec<T> {
        self.bars.iter().map(|b| b.settle).collect()
    }

    /// Keeps bars dated on or before `last`.
    pub fn truncated(&self, last: NaiveDate) -> Option<Self> {
        let bars: Vec<_> = self.bars.iter().copied().filter(|b| b.date <= last).collect();
        (!bars.is_empty()).then(|| Self { asset_id: self.asset_id.clone(), bars })
    }

    /// Multiplies every price by `k`; used by scale-invariance checks.
    pub fn scaled(&self, k: T) -> Self {
        let bars = self
            .bars
            .iter()
            .map(|b| Bar {
                open: b.open * k,
                high: b.high * k,
                low: b.low * k,
                close: b.close * k,
                settle: b.settle * k,
                ..*b
            })
            .collect();
        Self { asset_id: self.asset_id.clone(), bars }
    }
}

/// Column names used to locate each field in an input CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub date: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
    pub settle: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            date: "date".into(),
            open: "open".into(),
            high: "high".into(),
            low: "low".into(),
            close: "close".into(),
            settle: "settle".into(),
        }
    }
}

/// Loads one asset from a CSV file; the asset id is the file stem.
pub fn load_csv<T: Real>(path: &Path, schema: &CsvSchema) -> Result<AssetSeries<T>, DataError> {
    let asset_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "asset".to_string());
    let file = std::fs::File::open(path)?;
    read_csv(file, asset_id, schema)
}

/// Parses a CSV stream. Row numbers in errors count data rows from 1.
pub fn read_csv<T: Real, R: Read>(
    reader: R,
    asset_id: impl Into<String>,
    schema: &CsvSchema,
) -> Result<AssetSeries<T>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn { column: name.to_string() })
    };
    let idx_date = column(&schema.date)?;
    let price_cols = [
        (column(&schema.open)?, &schema.open),
        (column(&schema.high)?, &schema.high),
        (column(&schema.low)?, &schema.low),
        (column(&schema.close)?, &schema.close),
        (column(&schema.settle)?, &schema.settle),
    ];

    let mut bars = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let raw_date = record.get(idx_date).unwrap_or("");
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d").map_err(|_| {
            DataError::UnparseableDate { row, value: raw_date.to_string() }
        })?;
        let mut px = [T::zero(); 5];
        for (slot, (idx, name)) in px.iter_mut().zip(price_cols.iter()) {
            let raw = record.get(*idx).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| DataError::UnparseablePrice {
                row,
                column: name.to_string(),
                value: raw.to_string(),
            })?;
            *slot = T::lit(v);
        }
        let bar = Bar::new(date, px[0], px[1], px[2], px[3], px[4]);
        bar.validate().map_err(|reason| DataError::PriceInvariantViolation { row, reason })?;
        bars.push(bar);
    }
    AssetSeries::new(asset_id, bars)
}

/// Writes `date,open,high,low,close,settle` with 10 significant digits.
pub fn write_csv<T: Real, W: Write>(series: &AssetSeries<T>, out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["date", "open", "high", "low", "close", "settle"])?;
    for b in series.bars() {
        w.write_record([
            b.date.format("%Y-%m-%d").to_string(),
            fmt10(b.open.to_f64_lossy()),
            fmt10(b.high.to_f64_lossy()),
            fmt10(b.low.to_f64_lossy()),
            fmt10(b.close.to_f64_lossy()),
            fmt10(b.settle.to_f64_lossy()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// How calendar dates missing from an already-started asset are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillPolicy {
    /// Repeat the previous bar (flagged `filled`), giving a zero return.
    #[default]
    ForwardFill,
    /// Drop calendar dates on which any started asset is missing a bar.
    DropDate,
}

/// An asset aligned to the universe calendar from index `start` onward.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedAsset<T> {
    pub series: AssetSeries<T>,
    /// Calendar index of the first bar.
    pub start: usize,
}

impl<T: Real> AlignedAsset<T> {
    pub fn id(&self) -> &str {
        self.series.asset_id()
    }

    /// Bar at calendar index `t`, if the asset has started.
    pub fn bar_at(&self, t: usize) -> Option<&Bar<T>> {
        t.checked_sub(self.start).and_then(|k| self.series.bars.get(k))
    }

    /// Settle at calendar index `t`.
    pub fn settle_at(&self, t: usize) -> Option<T> {
        self.bar_at(t).map(|b| b.settle)
    }

    /// Calendar index one past the last bar.
    pub fn end(&self) -> usize {
        self.start + self.series.len()
    }
}

/// Multi-asset universe on a shared trading calendar. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Universe<T> {
    assets: Vec<AlignedAsset<T>>,
    calendar: Vec<NaiveDate>,
}

impl<T: Real> Universe<T> {
    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    /// Assets sorted by id.
    pub fn assets(&self) -> &[AlignedAsset<T>] {
        &self.assets
    }

    pub fn asset(&self, id: &str) -> Option<&AlignedAsset<T>> {
        self.assets.iter().find(|a| a.id() == id)
    }

    pub fn asset_ids(&self) -> Vec<String> {
        self.assets.iter().map(|a| a.id().to_string()).collect()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn len(&self) -> usize {
        self.calendar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calendar.is_empty()
    }

    /// Calendar index of `date`, if it is a trading day.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.calendar.binary_search(&date).ok()
    }

    /// Rebuilds the universe keeping only dates `<= last`.
    pub fn truncated(&self, last: NaiveDate) -> Result<Self, DataError> {
        let series: Vec<_> =
            self.assets.iter().filter_map(|a| a.series.truncated(last)).collect();
        build_universe(series, FillPolicy::ForwardFill)
    }
}

/// Aligns a set of series onto the union calendar.
pub fn build_universe<T: Real>(
    series: Vec<AssetSeries<T>>,
    fill_policy: FillPolicy,
) -> Result<Universe<T>, DataError> {
    if series.is_empty() {
        return Err(DataError::EmptyInput);
    }
    let mut ids = BTreeSet::new();
    for s in &series {
        if !ids.insert(s.asset_id().to_string()) {
            return Err(DataError::DuplicateAssetId(s.asset_id().to_string()));
        }
    }

    let mut calendar: Vec<NaiveDate> = series
        .iter()
        .flat_map(|s| s.bars.iter().map(|b| b.date))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    if fill_policy == FillPolicy::DropDate {
        // a date survives if every asset that has started by then, and not yet
        // ended, has a bar on it
        let by_asset: Vec<(NaiveDate, NaiveDate, BTreeSet<NaiveDate>)> = series
            .iter()
            .map(|s| {
                (
                    s.bars[0].date,
                    s.bars[s.len() - 1].date,
                    s.bars.iter().map(|b| b.date).collect(),
                )
            })
            .collect();
        calendar.retain(|d| {
            by_asset
                .iter()
                .all(|(first, last, dates)| d < first || d > last || dates.contains(d))
        });
    }

    let mut sorted: BTreeMap<String, AssetSeries<T>> =
        series.into_iter().map(|s| (s.asset_id.clone(), s)).collect();
    let mut assets = Vec::with_capacity(sorted.len());
    for (id, s) in std::mem::take(&mut sorted) {
        let by_date: BTreeMap<NaiveDate, Bar<T>> = s.bars.iter().map(|b| (b.date, *b)).collect();
        let first = s.bars[0].date;
        let start = calendar.partition_point(|d| *d < first);
        let mut bars = Vec::with_capacity(calendar.len() - start);
        let mut last: Option<Bar<T>> = None;
        for &d in &calendar[start..] {
            let bar = match by_date.get(&d) {
                Some(b) => *b,
                None => match fill_policy {
                    FillPolicy::ForwardFill => {
                        let prev = last.expect("first calendar date of an asset has a bar");
                        Bar::filled_from(d, &prev)
                    }
                    FillPolicy::DropDate => continue,
                },
            };
            last = Some(bar);
            bars.push(bar);
        }
        assets.push(AlignedAsset { series: AssetSeries { asset_id: id, bars }, start });
    }
    Ok(Universe { assets, calendar })
}

impl<T: Real> Bar<T> {
    /// Forward-filled copy of `prev`: flat at the previous settle, so it
    /// carries a zero return and zero intraday range.
    fn filled_from(date: NaiveDate, prev: &Bar<T>) -> Self {
        let p = prev.settle;
        Bar { date, open: p, high: p, low: p, close: p, settle: p, filled: true }
    }
}
