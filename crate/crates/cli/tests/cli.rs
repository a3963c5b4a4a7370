use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_tsmom");

const SMALL: &str = r#"
[data.synthetic]
seed = 11
[data.synthetic.spec]
n_assets = 3
n_days = 1100
drift = [0.15]
vol = [0.15]
persistence = 0.995

[strategy]
tags = ["TSMOM", "CTA-MOM"]

[strategy.model]
lookback_len = 5
lstm_hidden = 3
mlp_hidden = 3
learning_rate = 0.001
[strategy.grid]
n_lstm_layers = [1]
lstm_hidden = [3]
lstm_dropout = [0.1]
n_mlp_layers = [1]
mlp_hidden = [3]
mlp_dropout = [0.1]
learning_rate = [0.001]
max_grad_norm = [1.0]

[backtest]
train_start = 2001
first_test_year = 2003
last_test_year = 2003
master_seed = 4
[backtest.training]
max_epochs = 2
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn tsmom(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).args(["-q"]).args(args).current_dir(dir).env_remove("TSMOM_OUTPUT_ROOT").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "s.toml", SMALL);
    let o = tsmom(tmp.path(), &["synth", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = tmp.path().join("runs/s/data");
    let mut files: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    assert_eq!(files.len(), 3);
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(f).unwrap()).collect();
    assert!(tsmom(tmp.path(), &["synth", cfg.to_str().unwrap()]).status.success());
    let second: Vec<Vec<u8>> = files.iter().map(|f| fs::read(f).unwrap()).collect();
    assert_eq!(first, second);
}

#[test]
fn invalid_spec_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &SMALL.replace("n_assets = 3", "n_assets = 0"));
    let o = tsmom(tmp.path(), &["synth", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_assets"), "{}", stderr(&o));
}

#[test]
fn validate_prints_fold_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "v.toml", SMALL);
    let o = tsmom(tmp.path(), &["validate", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("test_year"));
    assert!(out.contains("2003-01-01"));
    assert!(out.contains("1 folds"));
}

#[test]
fn validate_rejects_test_year_before_train_start() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "v.toml", &SMALL.replace("first_test_year = 2003", "first_test_year = 1999"));
    let o = tsmom(tmp.path(), &["validate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("first_test_year"), "{}", stderr(&o));
}

#[test]
fn validate_warns_about_exhaustive_default_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.split("[strategy.model]").next().unwrap().replace("tags = [\"TSMOM\", \"CTA-MOM\"]", "tags = [\"MTL-TSMOM\"]")
        + "[backtest]\ntrain_start = 2001\nfirst_test_year = 2003\nlast_test_year = 2003\nmaster_seed = 4\n[backtest.budget]\nmode = \"exhaustive\"\n";
    let cfg = write_config(tmp.path(), "x.toml", &text);
    let o = tsmom(tmp.path(), &["validate", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("49152 runs"), "{}", stdout(&o));
}

#[test]
fn unknown_keys_and_missing_seed_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "u.toml", &SMALL.replace("[backtest]\n", "[backtest]\nlearning_rat = 3\n"));
    assert_eq!(tsmom(tmp.path(), &["validate", cfg.to_str().unwrap()]).status.code(), Some(2));
    let cfg = write_config(tmp.path(), "m.toml", &SMALL.replace("master_seed = 4\n", ""));
    let o = tsmom(tmp.path(), &["validate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("master_seed"));
}

#[test]
fn missing_data_file_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let head = "[data.csv]\npaths = [\"nowhere/ES.csv\"]\n";
    let rest = SMALL.split("[strategy]").nth(1).unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &format!("{head}\n[strategy]{rest}"));
    let o = tsmom(tmp.path(), &["backtest", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn baseline_backtest_and_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "b.toml", SMALL);
    let o = tsmom(tmp.path(), &["backtest", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("Sharpe Ratio"));
    let run = tmp.path().join("runs/b");
    for f in ["config.toml", "TSMOM/returns.csv", "CTA-MOM/weights.csv", "report/metrics.csv", "report/equity.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert!(!run.join("TSMOM/epochs.csv").exists());
    let metrics = fs::read_to_string(run.join("report/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);

    let before = fs::read(run.join("report/metrics.csv")).unwrap();
    let eq = fs::read(run.join("report/equity.csv")).unwrap();
    let o = tsmom(tmp.path(), &["report", run.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(run.join("report/metrics.csv")).unwrap(), before);
    assert_eq!(fs::read(run.join("report/equity.csv")).unwrap(), eq);

    // the resolved config reproduces the run
    let again = tempfile::tempdir().unwrap();
    let resolved = fs::read_to_string(run.join("config.toml")).unwrap();
    let moved = resolved.replace(run.to_str().unwrap(), again.path().join("out").to_str().unwrap());
    let cfg2 = write_config(again.path(), "r.toml", &moved);
    assert!(tsmom(again.path(), &["backtest", cfg2.to_str().unwrap()]).status.success());
    assert_eq!(
        fs::read(run.join("TSMOM/returns.csv")).unwrap(),
        fs::read(again.path().join("out/TSMOM/returns.csv")).unwrap()
    );
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "e.toml", SMALL);
    let root = tmp.path().join("elsewhere");
    let o = Command::new(BIN)
        .args(["-q", "synth", cfg.to_str().unwrap()])
        .env("TSMOM_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(root.join("e/data").is_dir());
}

#[test]
fn ablation_writes_one_row_per_subset() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replace("tags = [\"TSMOM\", \"CTA-MOM\"]", "tags = [\"TSMOM\"]\nablation = \"default\"");
    let cfg = write_config(tmp.path(), "a.toml", &text);
    let o = tsmom(tmp.path(), &["backtest", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = tmp.path().join("runs/a");
    let metrics = fs::read_to_string(run.join("ablation/report/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 8);
    assert!(metrics.contains("MTL-ablation-none"));
    assert!(metrics.contains("MTL-ablation-ctc+p+gk+rs+yz"));
    assert!(stdout(&o).contains("ablation"));
}
