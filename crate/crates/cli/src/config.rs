//! Run configuration file.
//!
//! ```toml
//! [data.synthetic]            # or [data.csv] with `paths = [...]`
//! seed = 7
//! [data.synthetic.spec]
//! n_assets = 6
//!
//! [strategy]
//! tags = ["TSMOM", "CTA-MOM", "MTL-TSMOM"]
//! ablation = "default"        # or a list of task lists
//!
//! [backtest]
//! train_start = 2001
//! first_test_year = 2003
//! last_test_year = 2007
//! master_seed = 1
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tsmom_core::analytics::{Annualization, ReportOptions};
use tsmom_core::backtest::{default_ablation_subsets, BacktestSettings, GridBudget, GridSpace, Strategy, TrainSettings};
use tsmom_core::baselines::{CtaParams, VolTargetConfig};
use tsmom_core::features::FeatureSpec;
use tsmom_core::market_data::{CsvSchema, FillPolicy, SyntheticSpec};
use tsmom_core::mtl_model::ModelConfig;
use tsmom_core::vol_estimators::VolEstimatorKind;

pub const OUTPUT_ROOT_ENV: &str = "TSMOM_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default)]
    pub strategy: StrategySection,
    pub backtest: BacktestSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub report: ReportSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub csv: Option<CsvSource>,
    pub synthetic: Option<SyntheticSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub paths: Vec<PathBuf>,
    #[serde(default)]
    pub schema: CsvSchema,
    #[serde(default)]
    pub fill: FillPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub seed: u64,
    #[serde(default)]
    pub spec: SyntheticSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AblationSpec {
    /// `"default"`: no task, each single task, all tasks.
    Preset(String),
    Subsets(Vec<Vec<VolEstimatorKind>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategySection {
    pub tags: Vec<String>,
    pub vol: VolTargetConfig,
    pub cta: CtaParams,
    pub features: FeatureSpec,
    pub model: ModelConfig,
    pub grid: Option<GridSpace>,
    pub ablation: Option<AblationSpec>,
}

impl Default for StrategySection {
    fn default() -> Self {
        Self {
            tags: vec!["TSMOM".into(), "CTA-MOM".into(), "MTL-TSMOM".into()],
            vol: VolTargetConfig::default(),
            cta: CtaParams::default(),
            features: FeatureSpec::default(),
            model: ModelConfig::default(),
            grid: None,
            ablation: None,
        }
    }
}

fn default_validation_fraction() -> f64 {
    0.2
}
fn default_tau() -> f64 {
    0.0003
}
fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestSection {
    pub train_start: i32,
    pub first_test_year: i32,
    pub last_test_year: i32,
    pub master_seed: u64,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub budget: GridBudget,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub training: TrainSettings,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// `date,level` CSV of an external total-return index.
    pub index: Option<PathBuf>,
    pub rescale_to: Option<f64>,
    pub annualization: Annualization,
    pub correlation_window: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        let o = ReportOptions::default();
        Self { index: None, rescale_to: o.rescale_to, annualization: o.annualization, correlation_window: o.correlation_window }
    }
}

impl ReportSection {
    pub fn options(&self) -> ReportOptions {
        ReportOptions { rescale_to: self.rescale_to, annualization: self.annualization, correlation_window: self.correlation_window }
    }
}

fn absolutize(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Reads, checks and resolves a config file: relative paths are taken
    /// from the file's directory and defaults are filled in.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let mut cfg = Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        let base = std::path::absolute(&base).unwrap_or(base);
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
        cfg.resolve(&base, &stem);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path, stem: &str) {
        if let Some(csv) = &mut self.data.csv {
            csv.paths = csv.paths.iter().map(|p| absolutize(base, p)).collect();
        }
        if let Some(ix) = &mut self.report.index {
            *ix = absolutize(base, ix);
        }
        self.output.dir = Some(match &self.output.dir {
            Some(d) => absolutize(base, d),
            None => {
                let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| base.join("runs"));
                root.join(stem)
            }
        });
        if self.strategy.grid.is_none() {
            self.strategy.grid = Some(GridSpace::default());
        }
        if let Some(AblationSpec::Preset(p)) = &self.strategy.ablation {
            if p == "default" {
                self.strategy.ablation = Some(AblationSpec::Subsets(default_ablation_subsets()));
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match (&self.data.csv, &self.data.synthetic) {
            (Some(_), Some(_)) => return Err("data: give exactly one of [data.csv] or [data.synthetic], not both".into()),
            (None, None) => return Err("data: one of [data.csv] or [data.synthetic] is required".into()),
            (Some(c), None) if c.paths.is_empty() => return Err("data.csv.paths: at least one file is required".into()),
            _ => {}
        }
        if let Some(s) = &self.data.synthetic {
            s.spec.validate().map_err(|e| format!("data.synthetic.spec: {e}"))?;
        }
        let b = &self.backtest;
        if b.first_test_year <= b.train_start {
            return Err(format!(
                "backtest: first_test_year ({}) must be after train_start ({})",
                b.first_test_year, b.train_start
            ));
        }
        if b.last_test_year < b.first_test_year {
            return Err(format!(
                "backtest: last_test_year ({}) must not precede first_test_year ({})",
                b.last_test_year, b.first_test_year
            ));
        }
        if !(b.tau.is_finite() && b.tau >= 0.0) {
            return Err(format!("backtest.tau must be >= 0, got {}", b.tau));
        }
        if self.strategy.tags.is_empty() && self.ablation_subsets().is_none() {
            return Err("strategy.tags: nothing to run".into());
        }
        for t in &self.strategy.tags {
            if Strategy::from_tag(t).is_none() {
                return Err(format!("strategy.tags: unknown tag {t:?} (expected TSMOM, CTA-MOM, MTL-TSMOM or MTL-ablation-<tasks>)"));
            }
        }
        match &self.strategy.ablation {
            Some(AblationSpec::Preset(p)) if p != "default" => {
                return Err(format!("strategy.ablation: unknown preset {p:?}"));
            }
            Some(AblationSpec::Subsets(s)) if s.is_empty() => return Err("strategy.ablation: empty subset list".into()),
            _ => {}
        }
        self.settings().validate().map_err(|e| e.to_string())
    }

    pub fn strategies(&self) -> Vec<Strategy> {
        self.strategy.tags.iter().filter_map(|t| Strategy::from_tag(t)).collect()
    }

    pub fn ablation_subsets(&self) -> Option<Vec<Vec<VolEstimatorKind>>> {
        match &self.strategy.ablation {
            None => None,
            Some(AblationSpec::Preset(_)) => Some(default_ablation_subsets()),
            Some(AblationSpec::Subsets(s)) => Some(s.clone()),
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.dir.clone().unwrap_or_else(|| PathBuf::from("runs/run"))
    }

    pub fn settings(&self) -> BacktestSettings {
        let b = &self.backtest;
        let s = &self.strategy;
        BacktestSettings {
            train_start: b.train_start,
            first_test_year: b.first_test_year,
            last_test_year: b.last_test_year,
            validation_fraction: b.validation_fraction,
            tau: b.tau,
            vol: s.vol.clone(),
            cta: s.cta.clone(),
            features: s.features.clone(),
            model: s.model.clone(),
            grid: s.grid.clone().unwrap_or_default(),
            budget: b.budget.clone(),
            train: b.training.clone(),
            master_seed: b.master_seed,
            workers: b.workers,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[data.synthetic]
seed = 3
[backtest]
train_start = 2001
first_test_year = 2003
last_test_year = 2004
master_seed = 9
"#;

    #[test]
    fn minimal_config_resolves() {
        let mut c = RunConfig::parse(MINIMAL).unwrap();
        c.resolve(Path::new("/tmp/x"), "demo");
        c.validate().unwrap();
        assert_eq!(c.strategy.grid, Some(GridSpace::default()));
        assert_eq!(c.backtest.tau, 0.0003);
        assert!(c.output.dir.as_ref().unwrap().ends_with("demo"));
        let again = RunConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn seed_is_required() {
        let text = MINIMAL.replace("master_seed = 9\n", "");
        assert!(RunConfig::parse(&text).unwrap_err().contains("master_seed"));
    }

    #[test]
    fn constraint_messages() {
        let mut c = RunConfig::parse(&MINIMAL.replace("first_test_year = 2003", "first_test_year = 2000")).unwrap();
        c.resolve(Path::new("."), "x");
        assert!(c.validate().unwrap_err().contains("first_test_year"));
        let mut c = RunConfig::parse(MINIMAL).unwrap();
        c.data.csv = Some(CsvSource { paths: vec!["a.csv".into()], schema: CsvSchema::default(), fill: FillPolicy::default() });
        assert!(c.validate().unwrap_err().contains("exactly one"));
        let mut c = RunConfig::parse(MINIMAL).unwrap();
        c.strategy.tags = vec!["BUY-HOLD".into()];
        assert!(c.validate().unwrap_err().contains("BUY-HOLD"));
    }

    #[test]
    fn ablation_preset_expands() {
        let mut c = RunConfig::parse(&format!("{MINIMAL}\n")).unwrap();
        c.strategy.ablation = Some(AblationSpec::Preset("default".into()));
        c.resolve(Path::new("."), "x");
        assert_eq!(c.ablation_subsets().unwrap().len(), 7);
        assert!(matches!(c.strategy.ablation, Some(AblationSpec::Subsets(_))));
    }
}
