use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use log::{info, warn};
use tsmom_core::analytics::{emit_report, format_metrics_table, AnalyticsError, IndexSeries, ReportSeries};
use tsmom_core::backtest::{plan_folds, read_returns_csv, write_run, BacktestContext, BacktestError, GridBudget, Strategy};
use tsmom_core::market_data::{build_universe, generate_synthetic, load_csv, write_csv, DataError};
use tsmom_core::Universe;

use crate::config::RunConfig;

pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Training(String),
    Io(String),
    Interrupted,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Training(_) => 4,
            CliError::Io(_) => 5,
            CliError::Interrupted => 130,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Training(m) => write!(f, "training error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
            CliError::Interrupted => write!(f, "interrupted; completed folds were written"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(e) => CliError::Io(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<BacktestError> for CliError {
    fn from(e: BacktestError) -> Self {
        let m = e.to_string();
        match e {
            BacktestError::InvalidSpan(_) | BacktestError::InvalidSettings(_) => CliError::Config(m),
            BacktestError::NoValidData(_) | BacktestError::Feature(_) | BacktestError::Baseline(_) => CliError::Data(m),
            BacktestError::Model(_) | BacktestError::Neural(_) => CliError::Training(m),
            BacktestError::Cancelled => CliError::Interrupted,
            BacktestError::Io(_) => CliError::Io(m),
        }
    }
}

impl From<AnalyticsError> for CliError {
    fn from(e: AnalyticsError) -> Self {
        match e {
            AnalyticsError::Io(e) => CliError::Io(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    RunConfig::load(path).map_err(CliError::Config)
}

pub fn load_universe(cfg: &RunConfig) -> Result<Universe, CliError> {
    if let Some(csv) = &cfg.data.csv {
        let mut series = Vec::with_capacity(csv.paths.len());
        for p in &csv.paths {
            if !p.exists() {
                return Err(CliError::Data(format!("{}: no such file", p.display())));
            }
            series.push(load_csv::<f64>(p, &csv.schema).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?);
        }
        Ok(build_universe(series, csv.fill)?)
    } else if let Some(s) = &cfg.data.synthetic {
        Ok(generate_synthetic::<f64>(&s.spec, s.seed)?)
    } else {
        Err(CliError::Config("no data source".into()))
    }
}

/// Writes one CSV per synthetic asset into `dir`.
pub fn synth(cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if cfg.data.synthetic.is_none() {
        return Err(CliError::Config("synth needs a [data.synthetic] section".into()));
    }
    let u = load_universe(cfg)?;
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for a in u.assets() {
        let path = dir.join(format!("{}.csv", a.id()));
        write_csv(&a.series, BufWriter::new(fs::File::create(&path)?))?;
        out.push(path);
    }
    Ok(out)
}

fn neural_runs(cfg: &RunConfig) -> usize {
    cfg.strategies().iter().filter(|s| s.is_neural()).count() + cfg.ablation_subsets().map_or(0, |s| s.len())
}

/// Fold table and run count; returns the text printed.
pub fn validate(cfg: &RunConfig) -> Result<String, CliError> {
    let universe = load_universe(cfg)?;
    let s = cfg.settings();
    let folds = plan_folds(universe.calendar(), s.first_test_year, s.last_test_year, s.train_start, s.validation_fraction)?;
    let points = s.grid_points()?;
    let cal = universe.calendar();
    let mut t = format!(
        "{} assets, {} dates ({} to {})\n\n",
        universe.n_assets(),
        cal.len(),
        cal[0],
        cal[cal.len() - 1]
    );
    t.push_str("fold  test_year  train_start  train_end   validation_from  test_start  test_end\n");
    for f in &folds {
        t.push_str(&format!(
            "{:>4}  {:>9}  {}   {}  {}       {}  {}\n",
            f.fold_index,
            f.test_year,
            f.train_span.0,
            f.train_span.1,
            cal[f.validation_start],
            f.test_span.0,
            f.test_span.1
        ));
    }
    let per_fold = points.len() * neural_runs(cfg);
    t.push_str(&format!(
        "\n{} folds, {} grid points of {}, {} neural strategies: {} training runs\n",
        folds.len(),
        points.len(),
        s.grid.len(),
        neural_runs(cfg),
        per_fold * folds.len()
    ));
    if s.budget == GridBudget::Exhaustive && points.len() > 1000 {
        let w = format!(
            "exhaustive grid budget: {} runs per fold per neural strategy, {} runs in total",
            points.len(),
            per_fold * folds.len()
        );
        warn!("{w}");
        t.push_str(&format!("warning: {w}\n"));
    }
    Ok(t)
}

/// Runs every configured strategy and the ablation, writing each run and
/// the reports under the output directory.
pub fn backtest(cfg: &RunConfig, cancel: &AtomicBool) -> Result<String, CliError> {
    let universe = load_universe(cfg)?;
    let out = cfg.output_dir();
    fs::create_dir_all(&out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_toml())?;
    let ctx = BacktestContext::new(&universe, cfg.settings())?;
    info!("{} folds, output {}", ctx.folds.len(), out.display());

    let mut interrupted = false;
    for s in cfg.strategies() {
        info!("running {}", s.tag());
        let run = ctx.run(&s, Some(cancel))?;
        write_run(&run, &out.join(run.tag.as_str()))?;
        if run.interrupted {
            interrupted = true;
            break;
        }
    }
    if let (Some(subsets), false) = (cfg.ablation_subsets(), interrupted) {
        for (_, run) in ctx.run_ablation(&subsets, Some(cancel))? {
            write_run(&run, &out.join("ablation").join(run.tag.as_str()))?;
            interrupted |= run.interrupted;
        }
    }
    let text = match report(&out, cfg) {
        Ok(t) => t,
        Err(_) if interrupted => String::new(),
        Err(e) => return Err(e),
    };
    if interrupted {
        eprint!("{text}");
        return Err(CliError::Interrupted);
    }
    Ok(text)
}

fn load_series(dir: &Path, tags: &[String]) -> Result<Vec<ReportSeries>, CliError> {
    let mut out = Vec::new();
    for tag in tags {
        let path = dir.join(tag).join("returns.csv");
        if !path.exists() {
            continue;
        }
        let (dates, returns) = read_returns_csv(&path)?;
        if returns.len() >= 2 {
            out.push(ReportSeries { tag: tag.clone(), dates, returns });
        }
    }
    // interrupted runs may stop short; report over the common dates
    if let Some(first) = out.first() {
        let mut common: BTreeSet<_> = first.dates.iter().copied().collect();
        for s in &out[1..] {
            let d: BTreeSet<_> = s.dates.iter().copied().collect();
            common = common.intersection(&d).copied().collect();
        }
        for s in &mut out {
            if s.dates.len() != common.len() {
                let (d, r) = s.dates.iter().zip(&s.returns).filter(|(d, _)| common.contains(d)).map(|(d, r)| (*d, *r)).unzip();
                s.dates = d;
                s.returns = r;
            }
        }
    }
    Ok(out)
}

/// Re-emits the reports of a run directory from its written returns;
/// returns the printed tables.
pub fn report(dir: &Path, cfg: &RunConfig) -> Result<String, CliError> {
    let opts = cfg.report.options();
    let index = match cfg.report.index.as_deref() {
        Some(p) => {
            if !p.exists() {
                return Err(CliError::Data(format!("{}: no such index file", p.display())));
            }
            Some(IndexSeries::load_csv(p)?)
        }
        None => None,
    };
    let mut text = String::new();
    let tags: Vec<String> = cfg.strategies().iter().map(Strategy::tag).collect();
    let main = load_series(dir, &tags)?;
    if !main.is_empty() {
        let m = emit_report(&main, index.as_ref(), &dir.join("report"), &opts)?;
        text.push_str(&format_metrics_table(&m));
    }
    if let Some(subsets) = cfg.ablation_subsets() {
        let tags: Vec<String> = subsets.iter().map(|s| Strategy::MtlAblation(s.clone()).tag()).collect();
        let ab = load_series(&dir.join("ablation"), &tags)?;
        if !ab.is_empty() {
            let m = emit_report(&ab, index.as_ref(), &dir.join("ablation").join("report"), &opts)?;
            let rows: Vec<_> = m
                .into_iter()
                .map(|(tag, r)| (tag.strip_prefix("MTL-ablation-").map(str::to_string).unwrap_or(tag), r))
                .collect();
            text.push_str("\nAuxiliary-task ablation\n");
            text.push_str(&format_metrics_table(&rows));
        }
    }
    if text.is_empty() {
        return Err(CliError::Data(format!("{}: no returns to report", dir.display())));
    }
    Ok(text)
}

pub fn load_run_config(dir: &Path) -> Result<RunConfig, CliError> {
    let path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    RunConfig::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
