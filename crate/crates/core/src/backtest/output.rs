//! Run directory layout:
//!
//! ```text
//! returns.csv      date,return
//! weights.csv      date,asset,weight        (date = decision date)
//! folds.csv        one row per fold: spans, chosen config, seed, best epoch
//! grid.csv         fold,grid_index,n_params,validation_loss,<config fields>
//! epochs.csv       per-epoch losses of each chosen run
//! checkpoints/     fold_<k>.ckpt, best-epoch parameters of each fold
//! ```

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use chrono::NaiveDate;

use crate::mtl_model::ModelConfig;
use crate::numfmt::fmt10;
use crate::vol_estimators::VolEstimatorKind;

use super::{BacktestError, BacktestRun};

fn ymd(d: NaiveDate) -> String {
    d.format("%Y-%m-%d").to_string()
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<fs::File>>, BacktestError> {
    Ok(csv::Writer::from_writer(BufWriter::new(fs::File::create(path)?)))
}

fn io(e: csv::Error) -> BacktestError {
    BacktestError::Io(std::io::Error::other(e))
}

const CONFIG_COLUMNS: [&str; 8] = [
    "n_lstm_layers",
    "lstm_hidden",
    "lstm_dropout",
    "n_mlp_layers",
    "mlp_hidden",
    "mlp_dropout",
    "learning_rate",
    "max_grad_norm",
];

fn config_fields(c: &ModelConfig) -> Vec<String> {
    vec![
        c.n_lstm_layers.to_string(),
        c.lstm_hidden.to_string(),
        fmt10(c.lstm_dropout),
        c.n_mlp_layers.to_string(),
        c.mlp_hidden.to_string(),
        fmt10(c.mlp_dropout),
        fmt10(c.learning_rate),
        fmt10(c.max_grad_norm),
    ]
}

/// Writes the run's files into `dir`, creating it if needed.
pub fn write_run(run: &BacktestRun, dir: &Path) -> Result<(), BacktestError> {
    fs::create_dir_all(dir)?;
    let mut w = writer(&dir.join("returns.csv"))?;
    w.write_record(["date", "return"]).map_err(io)?;
    for (d, r) in run.dates.iter().zip(&run.returns) {
        w.write_record([ymd(*d), fmt10(*r)]).map_err(io)?;
    }
    w.flush()?;

    let mut w = writer(&dir.join("weights.csv"))?;
    w.write_record(["date", "asset", "weight"]).map_err(io)?;
    for (d, row) in run.decision_dates.iter().zip(&run.weights) {
        for (id, x) in run.asset_ids.iter().zip(row) {
            if let Some(x) = x {
                w.write_record([ymd(*d), id.clone(), fmt10(*x)]).map_err(io)?;
            }
        }
    }
    w.flush()?;

    let mut w = writer(&dir.join("folds.csv"))?;
    let mut header: Vec<String> = [
        "fold", "test_year", "train_start", "train_end", "validation_start", "test_start", "test_end", "grid_index",
        "seed", "best_epoch", "epochs_run", "stopped_early", "diverged", "initial_validation_loss",
        "validation_loss", "n_params", "last_train_bar", "checkpoint",
    ]
    .map(String::from)
    .to_vec();
    header.extend(CONFIG_COLUMNS.map(String::from));
    w.write_record(&header).map_err(io)?;
    if run.folds.iter().any(|f| f.training.is_some()) {
        fs::create_dir_all(dir.join("checkpoints"))?;
    }
    for f in &run.folds {
        let p = &f.plan;
        let mut row = vec![
            p.fold_index.to_string(),
            p.test_year.to_string(),
            ymd(p.train_span.0),
            ymd(p.train_span.1),
            p.validation_start.to_string(),
            ymd(p.test_span.0),
            ymd(p.test_span.1),
        ];
        match &f.training {
            Some(t) => {
                let r = &t.result;
                let ck = format!("checkpoints/fold_{}.ckpt", p.fold_index);
                let mut c = r.model.to_checkpoint(r.seed);
                c.meta.push(("fold".into(), p.fold_index.to_string()));
                c.meta.push(("grid_index".into(), t.points[t.chosen].grid_index.to_string()));
                c.save(&dir.join(&ck))?;
                row.extend([
                    t.points[t.chosen].grid_index.to_string(),
                    r.seed.to_string(),
                    r.best_epoch.to_string(),
                    r.epochs.len().to_string(),
                    r.stopped_early.to_string(),
                    r.diverged.to_string(),
                    fmt10(r.initial_validation_loss),
                    fmt10(r.validation_loss),
                    t.points[t.chosen].n_params.to_string(),
                    r.reach.max().map(|m| m.to_string()).unwrap_or_default(),
                    ck,
                ]);
                row.extend(config_fields(&r.config));
            }
            None => row.extend(std::iter::repeat_n(String::new(), 11 + CONFIG_COLUMNS.len())),
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;

    if run.folds.iter().all(|f| f.training.is_none()) {
        return Ok(());
    }
    let mut w = writer(&dir.join("grid.csv"))?;
    let mut header: Vec<String> = ["fold", "grid_index", "n_params", "validation_loss", "chosen"].map(String::from).to_vec();
    header.extend(CONFIG_COLUMNS.map(String::from));
    w.write_record(&header).map_err(io)?;
    for f in &run.folds {
        let Some(t) = &f.training else { continue };
        for (i, g) in t.points.iter().enumerate() {
            let mut row = vec![
                f.plan.fold_index.to_string(),
                g.grid_index.to_string(),
                g.n_params.to_string(),
                fmt10(g.validation_loss),
                (i == t.chosen).to_string(),
            ];
            row.extend(config_fields(&g.config));
            w.write_record(&row).map_err(io)?;
        }
    }
    w.flush()?;

    let mut w = writer(&dir.join("epochs.csv"))?;
    let mut header: Vec<String> = ["fold", "epoch", "train_loss", "train_sharpe"].map(String::from).to_vec();
    header.extend(VolEstimatorKind::AUXILIARY.iter().map(|k| format!("train_aux_{}", k.tag())));
    header.push("val_loss".into());
    w.write_record(&header).map_err(io)?;
    for f in &run.folds {
        let Some(t) = &f.training else { continue };
        let r = &t.result;
        let mut row0 = vec![f.plan.fold_index.to_string(), "0".into(), String::new(), String::new()];
        row0.extend(std::iter::repeat_n(String::new(), 5));
        row0.push(fmt10(r.initial_validation_loss));
        w.write_record(&row0).map_err(io)?;
        for e in &r.epochs {
            let mut row = vec![f.plan.fold_index.to_string(), e.epoch.to_string(), fmt10(e.train_loss), fmt10(e.train_sharpe)];
            for k in VolEstimatorKind::AUXILIARY {
                row.push(e.train_aux.iter().find(|(x, _)| *x == k).map(|(_, v)| fmt10(*v)).unwrap_or_default());
            }
            row.push(fmt10(e.val_loss));
            w.write_record(&row).map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a `date,return` file written by [`write_run`].
pub fn read_returns_csv(path: &Path) -> Result<(Vec<NaiveDate>, Vec<f64>), BacktestError> {
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    let (mut dates, mut returns) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(io)?;
        let bad = || BacktestError::Io(std::io::Error::other(format!("{}: bad row {}", path.display(), i + 2)));
        let d = NaiveDate::parse_from_str(rec.get(0).ok_or_else(bad)?, "%Y-%m-%d").map_err(|_| bad())?;
        let x: f64 = rec.get(1).ok_or_else(bad)?.parse().map_err(|_| bad())?;
        dates.push(d);
        returns.push(x);
    }
    Ok((dates, returns))
}
