use std::ops::Range;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::BacktestError;

/// One expanding-window fold in calendar-index terms.
///
/// Ranges are half-open calendar indices. The validation split is the
/// tail of the train span starting at `validation_start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold_index: usize,
    pub test_year: i32,
    pub train_span: (NaiveDate, NaiveDate),
    pub test_span: (NaiveDate, NaiveDate),
    pub validation_fraction: f64,
    pub train: Range<usize>,
    pub validation_start: usize,
    pub test: Range<usize>,
}

impl FoldPlan {
    /// Last bar index the training split may read.
    pub fn train_bar_limit(&self) -> usize {
        self.validation_start - 1
    }

    /// Last bar index the fold may read while fitting (end of validation).
    pub fn fit_bar_limit(&self) -> usize {
        self.train.end - 1
    }
}

fn year_range(calendar: &[NaiveDate], first: i32, last: i32) -> Range<usize> {
    let lo = calendar.partition_point(|d| d.year() < first);
    let hi = calendar.partition_point(|d| d.year() <= last);
    lo..hi
}

/// One fold per test year; fold `k` trains on `[train_start, year_k - 1]`
/// and tests on `year_k`.
pub fn plan_folds(
    calendar: &[NaiveDate],
    first_test_year: i32,
    last_test_year: i32,
    train_start: i32,
    validation_fraction: f64,
) -> Result<Vec<FoldPlan>, BacktestError> {
    let span = |m: String| Err(BacktestError::InvalidSpan(m));
    if train_start >= first_test_year {
        return span(format!("train_start {train_start} must precede first test year {first_test_year}"));
    }
    if first_test_year > last_test_year {
        return span(format!("first test year {first_test_year} is after last test year {last_test_year}"));
    }
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return span(format!("validation fraction {validation_fraction} must lie in (0, 1)"));
    }
    let mut folds = Vec::new();
    for (k, year) in (first_test_year..=last_test_year).enumerate() {
        let train = year_range(calendar, train_start, year - 1);
        let test = year_range(calendar, year, year);
        if test.is_empty() {
            return span(format!("calendar has no trading days in test year {year}"));
        }
        if calendar[train.start].year() != train_start {
            return span(format!("calendar has no trading days in train start year {train_start}"));
        }
        if train.len() < 2 {
            return span(format!("train span before {year} has fewer than 2 dates"));
        }
        let n_val = ((train.len() as f64 * validation_fraction).round() as usize).clamp(1, train.len() - 1);
        folds.push(FoldPlan {
            fold_index: k,
            test_year: year,
            train_span: (calendar[train.start], calendar[train.end - 1]),
            test_span: (calendar[test.start], calendar[test.end - 1]),
            validation_fraction,
            validation_start: train.end - n_val,
            train,
            test,
        });
    }
    Ok(folds)
}

/// FNV-1a over the fold spans, used to check runs share a plan.
pub fn fold_plan_hash(folds: &[FoldPlan]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for f in folds {
        for x in [f.train.start, f.train.end, f.validation_start, f.test.start, f.test.end] {
            eat(x as u64);
        }
    }
    h
}

/// Outcome of feeding one validation loss to [`EarlyStopping`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience counter over per-epoch validation losses (lower is better).
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0, stale: 0 }
    }

    /// Only strict decreases count as improvement; NaN never does.
    pub fn update(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// 0 until the first finite loss arrives.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}
