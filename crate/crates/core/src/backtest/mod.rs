//! Expanding-window backtests: fold planning, per-fold grid search and
//! training, out-of-sample weights, net-of-cost accounting and stitching.

pub mod data;
pub mod folds;
pub mod grid;
mod output;
pub mod train;

use std::sync::atomic::{AtomicBool, Ordering};

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::baselines::{cta_mom_portfolio, tsmom_portfolio, BaselineError, CtaParams, VolTargetConfig};
use crate::features::{build_panel, FeatureError, FeatureSpec};
use crate::market_data::Universe;
use crate::mtl_model::{portfolio_return_net, ModelConfig, ModelError, MtlModel};
use crate::neural::NeuralError;
use crate::vol_estimators::VolEstimatorKind;

pub use data::{BarReach, PanelData};
pub use folds::{fold_plan_hash, plan_folds, EarlyStopping, FoldPlan, StopDecision};
pub use grid::{derive_seed, pick_best, select_points, GridBudget, GridPoint, GridSpace};
pub use output::{read_returns_csv, write_run};
pub use train::{train_fold, EpochLog, TrainJob, TrainRunResult, TrainSettings};

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("invalid span: {0}")]
    InvalidSpan(String),
    #[error("no valid data: {0}")]
    NoValidData(String),
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
    #[error("interrupted")]
    Cancelled,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Portfolio construction method.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Strategy {
    Tsmom,
    CtaMom,
    /// Multi-task model with the auxiliary tasks of the base config.
    MtlTsmom,
    /// Multi-task model with the given auxiliary tasks.
    MtlAblation(Vec<VolEstimatorKind>),
}

impl Strategy {
    pub fn tag(&self) -> String {
        match self {
            Strategy::Tsmom => "TSMOM".into(),
            Strategy::CtaMom => "CTA-MOM".into(),
            Strategy::MtlTsmom => "MTL-TSMOM".into(),
            Strategy::MtlAblation(tasks) => format!("MTL-ablation-{}", subset_label(tasks)),
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "TSMOM" => Some(Strategy::Tsmom),
            "CTA-MOM" => Some(Strategy::CtaMom),
            "MTL-TSMOM" => Some(Strategy::MtlTsmom),
            _ => {
                let rest = tag.strip_prefix("MTL-ablation-")?;
                if rest == "none" {
                    return Some(Strategy::MtlAblation(Vec::new()));
                }
                let tasks = rest.split('+').map(VolEstimatorKind::from_tag).collect::<Option<Vec<_>>>()?;
                Some(Strategy::MtlAblation(tasks))
            }
        }
    }

    pub fn is_neural(&self) -> bool {
        matches!(self, Strategy::MtlTsmom | Strategy::MtlAblation(_))
    }
}

/// `none`, or task tags joined by `+` in canonical order.
pub fn subset_label(tasks: &[VolEstimatorKind]) -> String {
    let tags: Vec<_> = VolEstimatorKind::AUXILIARY.iter().filter(|k| tasks.contains(k)).map(|k| k.tag()).collect();
    if tags.is_empty() {
        "none".into()
    } else {
        tags.join("+")
    }
}

/// No auxiliary task, each single task, then all of them.
pub fn default_ablation_subsets() -> Vec<Vec<VolEstimatorKind>> {
    let mut out = vec![Vec::new()];
    out.extend(VolEstimatorKind::AUXILIARY.iter().map(|&k| vec![k]));
    out.push(VolEstimatorKind::AUXILIARY.to_vec());
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestSettings {
    pub train_start: i32,
    pub first_test_year: i32,
    pub last_test_year: i32,
    pub validation_fraction: f64,
    /// Cost per unit of turnover.
    pub tau: f64,
    pub vol: VolTargetConfig,
    pub cta: CtaParams,
    pub features: FeatureSpec,
    /// Base config; grid axes override its fields.
    pub model: ModelConfig,
    pub grid: GridSpace,
    pub budget: GridBudget,
    pub train: TrainSettings,
    pub master_seed: u64,
    pub workers: usize,
}

impl Default for BacktestSettings {
    fn default() -> Self {
        Self {
            train_start: 1990,
            first_test_year: 2000,
            last_test_year: 2020,
            validation_fraction: 0.2,
            tau: 0.0003,
            vol: VolTargetConfig::default(),
            cta: CtaParams::default(),
            features: FeatureSpec::default(),
            model: ModelConfig::default(),
            grid: GridSpace::default(),
            budget: GridBudget::default(),
            train: TrainSettings::default(),
            master_seed: 0,
            workers: 1,
        }
    }
}

impl BacktestSettings {
    pub fn validate(&self) -> Result<(), BacktestError> {
        let bad = |m: &str| Err(BacktestError::InvalidSettings(m.into()));
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return bad("tau must be a nonnegative number");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.train.batch_dates < 2 {
            return bad("batch_dates must be at least 2");
        }
        if self.train.patience == 0 {
            return bad("patience must be at least 1");
        }
        self.vol.validate()?;
        self.features.validate()?;
        self.model.validate()?;
        if self.grid.is_empty() {
            return bad("grid has an empty axis");
        }
        Ok(())
    }

    /// Grid positions trained per fold.
    pub fn grid_points(&self) -> Result<Vec<usize>, BacktestError> {
        select_points(&self.grid, &self.budget, self.master_seed)
    }
}

/// Search and training record of one neural fold.
#[derive(Debug, Clone)]
pub struct FoldTraining {
    pub points: Vec<GridPoint>,
    /// Index into `points` of the selected config.
    pub chosen: usize,
    pub result: TrainRunResult,
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub plan: FoldPlan,
    pub training: Option<FoldTraining>,
}

/// Stitched out-of-sample record of one strategy.
#[derive(Debug, Clone)]
pub struct BacktestRun {
    pub tag: String,
    pub asset_ids: Vec<String>,
    pub folds: Vec<FoldOutcome>,
    /// Dates on which `returns` are realized: the union of the test spans.
    pub dates: Vec<NaiveDate>,
    /// Net daily returns.
    pub returns: Vec<f64>,
    /// Decision date of each weight row; the row earns the next date's return.
    pub decision_dates: Vec<NaiveDate>,
    /// `weights[row][asset]`: network output for neural strategies, the
    /// vol-scaled position for baselines.
    pub weights: Vec<Vec<Option<f64>>>,
    pub tau: f64,
    pub master_seed: u64,
    pub fold_plan_hash: u64,
    /// Set when a cancellation cut the run short; folds hold what completed.
    pub interrupted: bool,
}

/// Net returns realized on `first_decision + 1 ..`, given weights decided
/// at `first_decision ..`, starting flat. Each weight is multiplied by
/// `scale` before accounting.
pub fn account(
    next_returns: &[Vec<Option<f64>>],
    first_decision: usize,
    weights: &[Vec<Option<f64>>],
    scale: f64,
    tau: f64,
) -> Result<Vec<f64>, BacktestError> {
    let returns: Vec<Vec<Option<f64>>> =
        (0..weights.len()).map(|i| next_returns.iter().map(|r| r[first_decision + i]).collect()).collect();
    let flat = vec![0.0; next_returns.len()];
    Ok(portfolio_return_net(weights, &flat, &returns, scale, tau)?)
}

/// Universe-level state shared by every strategy of a run.
pub struct BacktestContext<'a> {
    pub universe: &'a Universe<f64>,
    pub data: PanelData,
    pub folds: Vec<FoldPlan>,
    pub settings: BacktestSettings,
    pool: rayon::ThreadPool,
}

impl<'a> BacktestContext<'a> {
    pub fn new(universe: &'a Universe<f64>, settings: BacktestSettings) -> Result<Self, BacktestError> {
        settings.validate()?;
        let folds = plan_folds(
            universe.calendar(),
            settings.first_test_year,
            settings.last_test_year,
            settings.train_start,
            settings.validation_fraction,
        )?;
        if folds[0].test.start == 0 {
            return Err(BacktestError::InvalidSpan("first test day has no preceding decision date".into()));
        }
        let panel = build_panel(universe, &settings.features)?;
        let data = PanelData::new(universe, panel, settings.features.target_horizon);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(settings.workers)
            .build()
            .map_err(|e| BacktestError::InvalidSettings(format!("worker pool: {e}")))?;
        Ok(Self { universe, data, folds, settings, pool })
    }

    fn decisions(&self) -> std::ops::Range<usize> {
        self.folds[0].test.start - 1..self.folds.last().expect("folds").test.end - 1
    }

    pub fn run(&self, strategy: &Strategy, cancel: Option<&AtomicBool>) -> Result<BacktestRun, BacktestError> {
        match strategy {
            Strategy::Tsmom | Strategy::CtaMom => {
                let out = if *strategy == Strategy::Tsmom {
                    tsmom_portfolio(self.universe, &self.settings.vol)?
                } else {
                    cta_mom_portfolio(self.universe, &self.settings.vol, &self.settings.cta)?
                };
                let weights = self
                    .decisions()
                    .map(|t| out.positions.iter().map(|p| p[t]).collect())
                    .collect();
                let folds = self.folds.iter().map(|f| FoldOutcome { plan: f.clone(), training: None }).collect();
                self.stitch(strategy, folds, weights, 1.0, false)
            }
            Strategy::MtlTsmom => self.run_neural(strategy, &self.settings.model, cancel),
            Strategy::MtlAblation(tasks) => {
                let model = ModelConfig { active_aux_tasks: tasks.clone(), ..self.settings.model.clone() };
                self.run_neural(strategy, &model, cancel)
            }
        }
    }

    fn stitch(
        &self,
        strategy: &Strategy,
        folds: Vec<FoldOutcome>,
        weights: Vec<Vec<Option<f64>>>,
        scale: f64,
        interrupted: bool,
    ) -> Result<BacktestRun, BacktestError> {
        let cal = self.universe.calendar();
        let first = self.folds[0].test.start - 1;
        let returns = account(&self.data.next_returns, first, &weights, scale, self.settings.tau)?;
        Ok(BacktestRun {
            tag: strategy.tag(),
            asset_ids: self.universe.asset_ids(),
            dates: cal[first + 1..first + 1 + weights.len()].to_vec(),
            returns,
            decision_dates: cal[first..first + weights.len()].to_vec(),
            weights,
            tau: self.settings.tau,
            master_seed: self.settings.master_seed,
            fold_plan_hash: fold_plan_hash(&self.folds),
            folds,
            interrupted,
        })
    }

    fn run_neural(&self, strategy: &Strategy, base: &ModelConfig, cancel: Option<&AtomicBool>) -> Result<BacktestRun, BacktestError> {
        base.validate()?;
        let s = &self.settings;
        let points = s.grid_points()?;
        let configs: Vec<ModelConfig> = points.iter().map(|&i| s.grid.point(i, base)).collect();
        for c in &configs {
            c.validate()?;
        }
        let sigma = s.vol.sigma_target;
        let jobs: Vec<TrainJob> = self
            .folds
            .iter()
            .flat_map(|fold| {
                points.iter().zip(&configs).map(move |(&gi, config)| TrainJob {
                    data: &self.data,
                    fold,
                    config,
                    settings: &s.train,
                    tau: s.tau,
                    sigma_target: sigma,
                    seed: derive_seed(s.master_seed, &[fold.fold_index as u64, gi as u64]),
                    grid_index: gi,
                    cancel,
                })
            })
            .collect();
        let mut results = self.pool.install(|| {
            jobs.par_iter()
                .map(|job| {
                    if cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
                        Err(BacktestError::Cancelled)
                    } else {
                        train_fold(job)
                    }
                })
                .collect::<Vec<_>>()
        })
        .into_iter();

        let n_features = self.data.panel.n_features();
        let mut outcomes = Vec::new();
        let mut weights = Vec::new();
        let mut interrupted = false;
        for fold in &self.folds {
            let group: Vec<_> = results.by_ref().take(points.len()).collect();
            if group.iter().any(|r| matches!(r, Err(BacktestError::Cancelled))) {
                interrupted = true;
                break;
            }
            let mut runs = Vec::with_capacity(group.len());
            for r in group {
                runs.push(r?);
            }
            let summary: Vec<GridPoint> = points
                .iter()
                .zip(&runs)
                .map(|(&gi, r)| GridPoint {
                    grid_index: gi,
                    config: r.config.clone(),
                    n_params: r.config.n_params(n_features),
                    validation_loss: r.validation_loss,
                })
                .collect();
            let chosen = pick_best(&summary).expect("nonempty grid");
            let result = runs.swap_remove(chosen);
            weights.extend(self.predict_test(fold, &result.model)?);
            outcomes.push(FoldOutcome { plan: fold.clone(), training: Some(FoldTraining { points: summary, chosen, result }) });
        }
        self.stitch(strategy, outcomes, weights, sigma, interrupted)
    }

    /// Weights decided on `[test.start - 1, test.end - 1)` with dropout off.
    fn predict_test(&self, fold: &FoldPlan, model: &MtlModel<f64>) -> Result<Vec<Vec<Option<f64>>>, BacktestError> {
        let lookback = model.config.lookback_len;
        let decisions = fold.test.start - 1..fold.test.end - 1;
        let n_assets = self.data.n_assets();
        let mut out = vec![vec![None; n_assets]; decisions.len()];
        let cells: Vec<(usize, usize)> = decisions
            .clone()
            .flat_map(|t| (0..n_assets).map(move |a| (a, t)))
            .filter(|&(a, t)| self.data.panel.window_valid(a, t, lookback))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for chunk in cells.chunks(512) {
            let x = self.data.windows(chunk, lookback);
            let (w, _) = model.predict_batch(x, chunk.len(), false, &mut rng)?;
            for (&(a, t), wi) in chunk.iter().zip(w) {
                out[t - decisions.start][a] = Some(wi);
            }
        }
        Ok(out)
    }

    /// One run per auxiliary-task subset, sharing folds and seeds.
    pub fn run_ablation(
        &self,
        subsets: &[Vec<VolEstimatorKind>],
        cancel: Option<&AtomicBool>,
    ) -> Result<Vec<(Vec<VolEstimatorKind>, BacktestRun)>, BacktestError> {
        if subsets.is_empty() {
            return Err(BacktestError::InvalidSettings("ablation needs at least one subset".into()));
        }
        let mut out = Vec::with_capacity(subsets.len());
        for subset in subsets {
            let run = self.run(&Strategy::MtlAblation(subset.clone()), cancel)?;
            let stop = run.interrupted;
            out.push((subset.clone(), run));
            if stop {
                break;
            }
        }
        Ok(out)
    }
}

/// Prepares the universe and runs one strategy.
pub fn run_backtest(universe: &Universe<f64>, strategy: &Strategy, settings: &BacktestSettings) -> Result<BacktestRun, BacktestError> {
    BacktestContext::new(universe, settings.clone())?.run(strategy, None)
}

/// Prepares the universe once and runs every subset.
pub fn run_ablation(
    universe: &Universe<f64>,
    subsets: &[Vec<VolEstimatorKind>],
    settings: &BacktestSettings,
) -> Result<Vec<(Vec<VolEstimatorKind>, BacktestRun)>, BacktestError> {
    BacktestContext::new(universe, settings.clone())?.run_ablation(subsets, None)
}
