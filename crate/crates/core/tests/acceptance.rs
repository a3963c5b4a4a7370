//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). The process exits 0 after
//! printing every line so the full list is always visible; set
//! `ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.

use std::time::Instant;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tsmom_core::analytics::{
    annualized_return, annualized_vol, drawdown_stats, emit_report, equity_curve, format_metrics_table,
    rescale_to_target_vol, sharpe_ratio, ReportOptions, ReportSeries,
};
use tsmom_core::backtest::{
    default_ablation_subsets, plan_folds, train_fold, BacktestContext, BacktestSettings, EarlyStopping, GridBudget,
    GridSpace, PanelData, Strategy, StopDecision, TrainJob, TrainSettings,
};
use tsmom_core::baselines::{tsmom_portfolio, VolTargetConfig};
use tsmom_core::features::build_panel;
use tsmom_core::market_data::{build_universe, generate_synthetic, AssetSeries, Bar, FillPolicy, SyntheticSpec};
use tsmom_core::mtl_model::{
    corr_loss, portfolio_return_net, sharpe_loss, total_loss, Batch, ModelConfig, MtlModel,
};
use tsmom_core::neural::gradcheck::{check_gradients, relative_error};
use tsmom_core::neural::{NeuralError, Tape, Tensor};
use tsmom_core::vol_estimators::{backward, yang_zhang_k, VolEstimatorKind};
use tsmom_core::Universe;

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn line(id: &'static str, pass: bool, detail: String) -> Outcome {
    println!("{} {id} {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { id, pass, detail }
}

fn randn(rng: &mut ChaCha8Rng, shape: [usize; 2], scale: f64) -> Tensor<f64> {
    let n = shape[0] * shape[1];
    Tensor::new(shape, (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

// ---- gradients

const FD_EPS: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-6;

fn toy_batch(rng: &mut ChaCha8Rng, n_dates: usize, n_assets: usize, lookback: usize, n_features: usize) -> Batch<f64> {
    let n_samples = (n_dates + 1) * n_assets;
    let aux_targets = VolEstimatorKind::AUXILIARY
        .into_iter()
        .map(|k| (k, (n_assets..n_samples).map(|s| (s, rng.random_range(0.05..0.4))).collect()))
        .collect();
    Batch {
        n_dates,
        n_assets,
        inputs: randn(rng, [lookback * n_samples, n_features], 1.0),
        n_samples,
        weight_index: (0..n_samples).collect(),
        next_returns: randn(rng, [n_dates, n_assets], 0.01),
        active: Tensor::new([n_dates, n_assets], vec![1.0; n_dates * n_assets]).unwrap(),
        scale: Tensor::column(vec![0.1 / n_assets as f64; n_dates]),
        aux_targets,
    }
}

fn loss_value(model: &MtlModel<f64>, batch: &Batch<f64>) -> f64 {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    total_loss(&mut tape, model, &bound, batch, 3e-4, false, &mut rng).unwrap().total_value
}

/// Worst relative error of the model gradient over every parameter element.
fn model_fd(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ModelConfig { lstm_hidden: 8, mlp_hidden: 8, lookback_len: 4, ..Default::default() };
    let n_features = 4;
    let mut model = MtlModel::<f64>::new(config, n_features, &mut rng).unwrap();
    let batch = toy_batch(&mut rng, 30, 2, 4, n_features);

    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let mut drng = ChaCha8Rng::seed_from_u64(0);
    let terms = total_loss(&mut tape, &model, &bound, &batch, 3e-4, false, &mut drng).unwrap();
    tape.backward(terms.total).unwrap();
    let analytic: Vec<Vec<f64>> = bound
        .vars
        .iter()
        .zip(model.named_params())
        .map(|(&v, (_, t))| tape.grad(v).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let mut worst: f64 = 0.0;
    for (p, grads) in analytic.iter().enumerate() {
        for (k, &a) in grads.iter().enumerate() {
            let x0 = model.params_mut()[p].data()[k];
            model.params_mut()[p].data_mut()[k] = x0 + FD_EPS;
            let up = loss_value(&model, &batch);
            model.params_mut()[p].data_mut()[k] = x0 - FD_EPS;
            let down = loss_value(&model, &batch);
            model.params_mut()[p].data_mut()[k] = x0;
            let e = relative_error(a, (up - down) / (2.0 * FD_EPS), FD_FLOOR);
            worst = if e.is_finite() { worst.max(e) } else { f64::INFINITY };
        }
    }
    worst
}

fn as_neural(e: tsmom_core::mtl_model::ModelError) -> NeuralError {
    NeuralError::InvalidArgument(e.to_string())
}

fn gradients() -> Outcome {
    let t0 = Instant::now();
    let (mut sharpe_worst, mut corr_worst, mut model_worst) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let r = randn(&mut rng, [30, 1], 0.01);
        let g = check_gradients(&[r], FD_EPS, FD_FLOOR, |t, v| sharpe_loss(t, v[0]).map_err(as_neural)).unwrap();
        sharpe_worst = sharpe_worst.max(g.max_rel_error);

        let y = randn(&mut rng, [30, 1], 1.0);
        let targets: Vec<Option<f64>> =
            (0..30).map(|i| (i % 7 != 3).then(|| rng.random_range(0.05..0.4))).collect();
        let g = check_gradients(&[y], FD_EPS, FD_FLOOR, |t, v| corr_loss(t, v[0], &targets).map_err(as_neural)).unwrap();
        corr_worst = corr_worst.max(g.max_rel_error);

        model_worst = model_worst.max(model_fd(seed));
    }
    let secs = t0.elapsed().as_secs_f64();
    let worst = sharpe_worst.max(corr_worst).max(model_worst);
    line(
        "gradients",
        worst < 1e-4 && secs < 120.0,
        format!(
            "gradient suite: max rel err sharpe {sharpe_worst:.2e}, corr {corr_worst:.2e}, total/LSTM/FNN {model_worst:.2e} \
             over 100 seeds (tol 1e-4, eps 1e-5); {secs:.1} s (limit 120 s)"
        ),
    )
}

// ---- estimators

fn series_of(bars: &[(f64, f64, f64, f64)]) -> AssetSeries<f64> {
    let mut d = ymd(2001, 1, 1);
    let out = bars
        .iter()
        .map(|&(o, h, l, c)| {
            let b = Bar::new(d, o, h, l, c, c);
            d = d.succ_opt().unwrap();
            b
        })
        .collect();
    AssetSeries::new("X", out).unwrap()
}

fn last_value(kind: VolEstimatorKind, s: &AssetSeries<f64>, n: usize) -> f64 {
    backward(kind, s, n).unwrap().values.last().unwrap().unwrap()
}

fn sample_var(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

fn estimators() -> Outcome {
    let t0 = Instant::now();
    let mut fails = Vec::new();
    let kinds = VolEstimatorKind::AUXILIARY;

    // degenerate bars
    let flat = series_of(&[(100.0, 100.0, 100.0, 100.0); 30]);
    for k in kinds {
        if backward(k, &flat, 5).unwrap().values.iter().flatten().any(|&v| v != 0.0) {
            fails.push(format!("{} nonzero on flat bars", k.tag()));
        }
    }
    let no_range = series_of(&(0..30).map(|i| {
        let p = 100.0 * (1.0 + 0.01 * (i % 3) as f64);
        (p, p, p, p)
    }).collect::<Vec<_>>());
    for k in [VolEstimatorKind::Parkinson, VolEstimatorKind::GarmanKlass, VolEstimatorKind::RogersSatchell] {
        if backward(k, &no_range, 5).unwrap().values.iter().flatten().any(|&v| v != 0.0) {
            fails.push(format!("{} nonzero on zero-range bars", k.tag()));
        }
    }

    // single-bar values, written from the formulas
    let e2 = 0.02f64.exp();
    let mut single = Vec::new();
    let p = last_value(VolEstimatorKind::Parkinson, &series_of(&[(100.0, 100.0 * e2, 100.0, 100.0)]), 1);
    single.push(("p", p, (252.0 * 0.0004 / (4.0 * 2f64.ln())).sqrt()));
    let gk = last_value(VolEstimatorKind::GarmanKlass, &series_of(&[(100.0, 100.0 * e2, 100.0, 100.0)]), 1);
    single.push(("gk", gk, (252.0 * 0.5 * 0.0004f64).sqrt()));
    let rs = last_value(
        VolEstimatorKind::RogersSatchell,
        &series_of(&[(100.0, 100.0 * e2, 100.0 / e2, 100.0)]),
        1,
    );
    single.push(("rs", rs, (252.0 * 8e-4f64).sqrt()));
    let up = 1.01f64.ln().exp();
    let ctc = last_value(
        VolEstimatorKind::CloseToClose,
        &series_of(&[(100.0, 100.0, 100.0, 100.0), (100.0, 101.0, 100.0, 100.0 * up), (100.0, 101.0, 100.0, 100.0)]),
        2,
    );
    let (ra, rb) = (up.ln(), (1.0 / up).ln());
    single.push(("ctc", ctc, (252.0 * sample_var(&[ra, rb])).sqrt()));
    let yz_bars = [
        (100.0, 101.0, 99.0, 100.5),
        (100.8, 102.0, 100.1, 101.5),
        (101.0, 101.9, 99.8, 100.2),
        (100.4, 101.1, 99.5, 100.9),
    ];
    let yz = last_value(VolEstimatorKind::YangZhang, &series_of(&yz_bars), 3);
    let w = &yz_bars[1..];
    let overnight: Vec<f64> = (1..4).map(|i| (yz_bars[i].0 / yz_bars[i - 1].3).ln()).collect();
    let oc: Vec<f64> = w.iter().map(|b| (b.3 / b.0).ln()).collect();
    let rs_mean = w
        .iter()
        .map(|b| {
            let (u, d, c) = ((b.1 / b.0).ln(), (b.2 / b.0).ln(), (b.3 / b.0).ln());
            u * (u - c) + d * (d - c)
        })
        .sum::<f64>()
        / 3.0;
    let k = 0.34 / (1.34 + 4.0 / 2.0);
    single.push(("yz", yz, (252.0 * (sample_var(&overnight) + k * sample_var(&oc) + (1.0 - k) * rs_mean)).sqrt()));
    let mut single_err = 0.0f64;
    for (tag, got, want) in &single {
        let e = (got - want).abs();
        single_err = single_err.max(e);
        if e > 1e-9 {
            fails.push(format!("{tag} single-bar {got} vs {want}"));
        }
    }
    if (yang_zhang_k(21) - 0.34 / (1.34 + 22.0 / 20.0)).abs() > 1e-15 {
        fails.push("yang-zhang k".into());
    }

    // scale invariance
    let spec = SyntheticSpec { n_assets: 1, n_days: 400, overnight_fraction: 0.2, ..Default::default() };
    let u = generate_synthetic::<f64>(&spec, 5).unwrap();
    let s = &u.assets()[0].series;
    let scaled = s.scaled(37.0);
    let mut scale_err = 0.0f64;
    for k in kinds {
        let (a, b) = (backward(k, s, 21).unwrap(), backward(k, &scaled, 21).unwrap());
        for (x, y) in a.values.iter().flatten().zip(b.values.iter().flatten()) {
            scale_err = scale_err.max((x - y).abs() / x.abs().max(1e-300));
        }
    }
    if scale_err > 1e-12 {
        fails.push(format!("scale invariance {scale_err:.1e}"));
    }

    // large-sample means
    let spec = SyntheticSpec { n_assets: 1, n_days: 50_000, vol: vec![0.2], overnight_fraction: 0.2, ..Default::default() };
    let u = generate_synthetic::<f64>(&spec, 20240601).unwrap();
    let s = &u.assets()[0].series;
    let mut means = Vec::new();
    for k in kinds {
        let m = backward(k, s, 21).unwrap().mean().unwrap();
        means.push(format!("{}={m:.4}", k.tag()));
        if (m - 0.2).abs() > 0.15 * 0.2 {
            fails.push(format!("{} mean {m:.4}", k.tag()));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    line(
        "estimators",
        fails.is_empty() && secs < 60.0,
        format!(
            "estimator oracles: degenerate bars 0, single-bar max err {single_err:.1e} (tol 1e-9), scale err {scale_err:.1e} \
             (tol 1e-12), 50000-bar means [{}] within 15% of 0.20; {secs:.1} s (limit 60 s){}",
            means.join(" "),
            if fails.is_empty() { String::new() } else { format!("; failures: {}", fails.join(", ")) }
        ),
    )
}

// ---- tsmom oracle

/// Annualized EW volatility at each index from explicit weights.
fn ew_vol_direct(prices: &[f64], span: usize) -> Vec<Option<f64>> {
    let a = 2.0 / (span as f64 + 1.0);
    let r: Vec<f64> = (1..prices.len()).map(|k| (prices[k] / prices[k - 1]).ln()).collect();
    let mut out = vec![None];
    for t in 0..r.len() {
        let w: Vec<f64> = (0..=t).map(|j| if j == 0 { (1.0 - a).powi(t as i32) } else { a * (1.0 - a).powi((t - j) as i32) }).collect();
        let m: f64 = (0..=t).map(|j| w[j] * r[j]).sum();
        let v: f64 = (0..=t).map(|j| w[j] * (r[j] - m).powi(2)).sum();
        out.push(Some((252.0 * v).sqrt()));
    }
    out
}

fn tsmom_oracle() -> Outcome {
    let t0 = Instant::now();
    let spec = SyntheticSpec {
        n_assets: 5,
        n_days: 600,
        drift: vec![0.1, -0.1, 0.0, 0.2, -0.05],
        vol: vec![0.1, 0.2, 0.3, 0.15, 0.25],
        persistence: Some(0.99),
        ..Default::default()
    };
    let base = generate_synthetic::<f64>(&spec, 77).unwrap();
    let series: Vec<AssetSeries<f64>> = base
        .assets()
        .iter()
        .enumerate()
        .map(|(i, a)| AssetSeries::new(a.id(), a.series.bars()[i * 20..].to_vec()).unwrap())
        .collect();
    let u = build_universe(series.clone(), FillPolicy::ForwardFill).unwrap();
    let cfg = VolTargetConfig::default();
    let got = tsmom_portfolio(&u, &cfg).unwrap().daily_returns;

    let cal = u.calendar();
    // per asset: date -> (return realized that day from yesterday's position)
    let mut per_date: Vec<Vec<f64>> = vec![Vec::new(); cal.len()];
    for s in &series {
        let p: Vec<f64> = s.bars().iter().map(|b| b.settle).collect();
        let vol = ew_vol_direct(&p, 60);
        for k in 253..p.len() {
            let j = k - 1;
            let x = (p[j] / p[j - 252]).ln();
            let sig = if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 };
            let sv = vol[j].unwrap();
            let pos = if sv < 1e-8 { 0.0 } else { sig * 0.10 / sv };
            let t = cal.binary_search(&s.bars()[k].date).unwrap();
            per_date[t].push(pos * (p[k] / p[j]).ln());
        }
    }
    let mut worst = 0.0f64;
    for t in 0..cal.len() {
        let want = if per_date[t].is_empty() { 0.0 } else { per_date[t].iter().sum::<f64>() / per_date[t].len() as f64 };
        worst = worst.max((got[t] - want).abs());
    }
    let secs = t0.elapsed().as_secs_f64();
    line(
        "tsmom-oracle",
        worst < 1e-10 && secs < 30.0,
        format!("TSMOM brute-force: max |diff| {worst:.2e} over {} dates (tol 1e-10); {secs:.2} s (limit 30 s)", cal.len()),
    )
}

// ---- accounting

fn accounting() -> Outcome {
    let tau = 3e-4;
    let sigma = 0.10;
    let prev = [0.0, 0.0];
    let w = [[0.5, -0.25], [0.75, 0.25], [-0.5, 0.25]];
    let r = [[0.01, -0.02], [0.03, 0.01], [-0.02, 0.005]];
    let weights: Vec<Vec<Option<f64>>> = w.iter().map(|x| x.iter().map(|&v| Some(v)).collect()).collect();
    let rets: Vec<Vec<Option<f64>>> = r.iter().map(|x| x.iter().map(|&v| Some(v)).collect()).collect();
    let got = portfolio_return_net(&weights, &prev, &rets, sigma, tau).unwrap();
    // 0.1/2 * [w.r - tau * |dw|]
    let hand = [
        0.05 * ((0.5 * 0.01 + -0.25 * -0.02) - tau * (0.5 + 0.25)),
        0.05 * ((0.75 * 0.03 + 0.25 * 0.01) - tau * (0.25 + 0.5)),
        0.05 * ((-0.5 * -0.02 + 0.25 * 0.005) - tau * (1.25 + 0.0)),
    ];
    let err = got.iter().zip(&hand).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let gross = portfolio_return_net(&weights, &prev, &rets, sigma, 0.0).unwrap();
    let eq4: Vec<f64> = (0..3).map(|t| sigma / 2.0 * (w[t][0] * r[t][0] + w[t][1] * r[t][1])).collect();
    let exact = gross == eq4;
    line(
        "accounting",
        err < 1e-12 && exact,
        format!("accounting: 3-day scripted path max err {err:.2e} (tol 1e-12); tau=0 equals gross form exactly: {exact}"),
    )
}

// ---- protocol

fn weekday_calendar(from: NaiveDate, to: NaiveDate) -> Vec<NaiveDate> {
    from.iter_days()
        .take_while(|d| *d <= to)
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .collect()
}

fn leakage_scan() -> Result<usize, String> {
    let spec = SyntheticSpec { n_assets: 2, n_days: 1400, drift: vec![0.15], vol: vec![0.15], persistence: Some(0.995), ..Default::default() };
    let u = generate_synthetic::<f64>(&spec, 41).unwrap();
    let model = ModelConfig { lookback_len: 5, lstm_hidden: 4, mlp_hidden: 4, learning_rate: 1e-2, ..Default::default() };
    let train = TrainSettings { max_epochs: 3, ..Default::default() };
    let folds = plan_folds(u.calendar(), 2003, 2005, 2001, 0.2).map_err(|e| e.to_string())?;
    let features = tsmom_core::features::FeatureSpec::default();
    let data = PanelData::new(&u, build_panel(&u, &features).unwrap(), features.target_horizon);
    for fold in &folds {
        let cut = fold.test_span.0;
        let moved: Vec<AssetSeries<f64>> = u
            .assets()
            .iter()
            .map(|a| {
                let bars = a.series.bars().iter().map(|b| {
                    let mut b = *b;
                    if b.date >= cut {
                        b.open *= 3.0;
                        b.high *= 3.5;
                        b.low *= 2.0;
                        b.close *= 3.0;
                        b.settle *= 3.0;
                    }
                    b
                });
                AssetSeries::new(a.id(), bars.collect()).unwrap()
            })
            .collect();
        let v = build_universe(moved, FillPolicy::ForwardFill).unwrap();
        let vdata = PanelData::new(&v, build_panel(&v, &features).unwrap(), features.target_horizon);
        let mut ck = Vec::new();
        for d in [&data, &vdata] {
            let job = TrainJob {
                data: d,
                fold,
                config: &model,
                settings: &train,
                tau: 3e-4,
                sigma_target: 0.1,
                seed: 5,
                grid_index: 0,
                cancel: None,
            };
            let r = train_fold(&job).map_err(|e| e.to_string())?;
            let reach = r.reach.max().unwrap_or(0);
            if reach >= fold.test.start || reach > fold.fit_bar_limit() {
                return Err(format!("fold {} reads bar {reach}, test starts at {}", fold.fold_index, fold.test.start));
            }
            ck.push((r.model.to_checkpoint(0), r.validation_loss_curve));
        }
        if ck[0] != ck[1] {
            return Err(format!("fold {}: training changed when test-span bars changed", fold.fold_index));
        }
    }
    Ok(folds.len())
}

fn protocol() -> Outcome {
    let mut fails = Vec::new();
    let cal = weekday_calendar(ymd(1990, 1, 1), ymd(2020, 12, 31));
    let folds = plan_folds(&cal, 2000, 2020, 1990, 0.2).unwrap();
    if folds.len() != 21 {
        fails.push(format!("{} folds", folds.len()));
    }
    for (k, f) in folds.iter().enumerate() {
        let y = 2000 + k as i32;
        let ok = f.test_year == y
            && f.train_span.0 == ymd(1990, 1, 1)
            && f.train_span.1 == ymd(y - 1, 12, 31).min(*cal.iter().rfind(|d| d.year() == y - 1).unwrap())
            && f.test_span.0 == *cal.iter().find(|d| d.year() == y).unwrap()
            && f.test_span.1 == *cal.iter().rfind(|d| d.year() == y).unwrap()
            && f.test.start == f.train.end
            && f.validation_start == f.train.end - ((f.train.len() as f64) * 0.2).round() as usize;
        if !ok {
            fails.push(format!("fold {k} spans"));
        }
    }

    let mut stop_at = Vec::new();
    for best in [1usize, 7, 40] {
        let mut es = EarlyStopping::new(25);
        let mut fired = None;
        for epoch in 1..=200 {
            let loss = if epoch <= best { 1.0 / epoch as f64 } else { 1.0 / best as f64 + 1e-3 * (epoch % 3) as f64 };
            if es.update(epoch, loss) == StopDecision::Stop {
                fired = Some(epoch);
                break;
            }
        }
        stop_at.push(format!("{best}->{}", fired.map_or("none".into(), |e| e.to_string())));
        if fired != Some(best + 25) || es.best_epoch() != best {
            fails.push(format!("early stop best {best} fired {fired:?}"));
        }
    }

    let leak = leakage_scan();
    if let Err(e) = &leak {
        fails.push(e.clone());
    }
    line(
        "protocol",
        fails.is_empty(),
        format!(
            "protocol: {} folds 2000..2020 from 1990 with annual spans; early stopping fired at [{}] (best+25); \
             leakage scan over {} folds: {}",
            folds.len(),
            stop_at.join(" "),
            leak.as_ref().map_or(0, |n| *n),
            if fails.is_empty() { "clean".to_string() } else { fails.join(", ") }
        ),
    )
}

// ---- metrics

fn brute_max_drawdown(r: &[f64]) -> (f64, usize, Option<usize>) {
    let e = equity_curve(r);
    let (mut worst, mut trough) = (0.0, 0);
    for j in 0..e.len() {
        for i in 0..=j {
            let d = e[j] / e[i] - 1.0;
            if d < worst {
                worst = d;
                trough = j;
            }
        }
    }
    if worst == 0.0 {
        return (0.0, 0, Some(0));
    }
    let m = e[..=trough].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let peak = (0..trough).filter(|&i| e[i] == m).max().unwrap();
    (worst, trough - peak, (trough + 1..e.len()).find(|&k| e[k] >= m).map(|k| k - trough))
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut mismatches = 0;
    let mut dd_err = 0.0f64;
    let mut vol_err = 0.0f64;
    for _ in 0..200 {
        let drift = rng.random_range(-0.001..0.001);
        let r: Vec<f64> = (0..500).map(|_| drift + 0.01 * rng.sample::<f64, _>(StandardNormal)).collect();
        let got = drawdown_stats(&r).unwrap();
        let (mdd, period, rec) = brute_max_drawdown(&r);
        dd_err = dd_err.max((got.max_drawdown - mdd).abs());
        if got.max_drawdown_period != period || got.recovery_period != rec || (got.max_drawdown - mdd).abs() > 1e-12 {
            mismatches += 1;
        }
        let s = rescale_to_target_vol(&r, 0.10).unwrap();
        vol_err = vol_err.max((annualized_vol(&s).unwrap() - 0.10).abs());
    }
    let daily = 1.10f64.powf(1.0 / 252.0) - 1.0;
    let ar_err = (annualized_return(&vec![daily; 252]).unwrap() - 0.10).abs();
    line(
        "metrics",
        mismatches == 0 && vol_err < 1e-12 && ar_err < 1e-10,
        format!(
            "metric oracles: drawdown vs O(T^2) scan on 200x500 series, {mismatches} mismatches (max |dd diff| {dd_err:.1e}); \
             rescale vol err {vol_err:.1e} (tol 1e-12); annualized return inversion err {ar_err:.1e} (tol 1e-10)"
        ),
    )
}

// ---- regime scenario

fn regime_universe() -> Universe {
    let spec = SyntheticSpec {
        n_assets: 6,
        n_days: 2088,
        start_date: ymd(2000, 1, 3),
        drift: vec![0.15],
        vol: vec![0.15],
        persistence: Some(0.995),
        ..Default::default()
    };
    generate_synthetic::<f64>(&spec, 1).unwrap()
}

fn regime_settings() -> BacktestSettings {
    let base = ModelConfig { lookback_len: 21, lstm_hidden: 8, mlp_hidden: 8, ..Default::default() };
    BacktestSettings {
        train_start: 2001,
        first_test_year: 2003,
        last_test_year: 2007,
        grid: GridSpace {
            lstm_hidden: vec![8, 16],
            mlp_hidden: vec![8, 16],
            learning_rate: vec![1e-3, 1e-2],
            max_grad_norm: vec![0.1, 1.0],
            ..GridSpace::single(&base)
        },
        model: base,
        budget: GridBudget::Random { k: 8, seed: None },
        master_seed: 1,
        ..Default::default()
    }
}

fn regime() -> Vec<Outcome> {
    let t0 = Instant::now();
    let u = regime_universe();
    let ctx = BacktestContext::new(&u, regime_settings()).unwrap();
    let ts = ctx.run(&Strategy::Tsmom, None).unwrap();
    let ts_sharpe = sharpe_ratio(&ts.returns).unwrap();
    let out_a = line(
        "regime-tsmom",
        ts_sharpe > 0.3,
        format!("TSMOM net Sharpe {ts_sharpe:.3} after 3 bps (need > 0.3), {} test days, 5 folds", ts.returns.len()),
    );

    let m = ctx.run(&Strategy::MtlTsmom, None).unwrap();
    let m_sharpe = sharpe_ratio(&m.returns).unwrap();
    let mut per_fold = Vec::new();
    let mut all_below = true;
    for f in &m.folds {
        let r = &f.training.as_ref().unwrap().result;
        let below = r.validation_loss < r.initial_validation_loss;
        all_below &= below;
        per_fold.push(format!(
            "{}:{:.4}{}{:.4}",
            f.plan.test_year,
            r.validation_loss,
            if below { "<" } else { ">=" },
            r.initial_validation_loss
        ));
    }
    let out_b = line(
        "regime-mtl",
        m_sharpe > 0.0 && all_below,
        format!(
            "MTL-TSMOM (5 aux tasks, random-8 of a 16-point grid, hidden <= 16) net Sharpe {m_sharpe:.3} (need > 0); \
             best vs epoch-0 validation loss per fold [{}]",
            per_fold.join(" ")
        ),
    );
    let first_secs = t0.elapsed().as_secs_f64();

    let again = BacktestContext::new(&u, regime_settings()).unwrap().run(&Strategy::MtlTsmom, None).unwrap();
    let same = again.returns.iter().map(|x| x.to_bits()).eq(m.returns.iter().map(|x| x.to_bits()))
        && again.weights == m.weights
        && again.folds.iter().zip(&m.folds).all(|(a, b)| {
            let (a, b) = (a.training.as_ref().unwrap(), b.training.as_ref().unwrap());
            a.result.model.to_checkpoint(0) == b.result.model.to_checkpoint(0) && a.chosen == b.chosen
        });
    let secs = t0.elapsed().as_secs_f64();
    let out_c = line(
        "reproducible",
        same && first_secs < 1800.0,
        format!("re-run under master seed 1 bit-identical: {same}; one run {first_secs:.0} s (target < 1800 s), with re-run {secs:.0} s"),
    );
    vec![out_a, out_b, out_c]
}

// ---- ablation

fn ablation() -> Outcome {
    let t0 = Instant::now();
    let u = regime_universe();
    let base = ModelConfig { lookback_len: 21, lstm_hidden: 8, mlp_hidden: 8, learning_rate: 1e-3, ..Default::default() };
    let settings = BacktestSettings {
        train_start: 2001,
        first_test_year: 2003,
        last_test_year: 2004,
        grid: GridSpace::single(&base),
        model: base,
        budget: GridBudget::Exhaustive,
        train: TrainSettings { max_epochs: 8, ..Default::default() },
        master_seed: 3,
        ..Default::default()
    };
    let subsets = default_ablation_subsets();
    let ctx = BacktestContext::new(&u, settings).unwrap();
    let runs = ctx.run_ablation(&subsets, None).unwrap();
    let series: Vec<ReportSeries> = runs
        .iter()
        .map(|(_, r)| ReportSeries { tag: r.tag.clone(), dates: r.dates.clone(), returns: r.returns.clone() })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let metrics = emit_report(&series, None, dir.path(), &ReportOptions::default()).unwrap();
    let table = format_metrics_table(&metrics);
    let csv_rows = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap().lines().count() - 1;

    let mut empty_err = 0.0f64;
    let mut epochs = 0;
    let none = runs.iter().find(|(s, _)| s.is_empty()).map(|(_, r)| r);
    if let Some(run) = none {
        for f in &run.folds {
            for e in &f.training.as_ref().unwrap().result.epochs {
                empty_err = empty_err.max((e.train_loss - 0.5 * e.train_sharpe).abs());
                epochs += 1;
            }
        }
    }
    println!("{table}");
    let secs = t0.elapsed().as_secs_f64();
    line(
        "ablation",
        runs.len() == 7 && csv_rows == 7 && none.is_some() && epochs > 0 && empty_err <= 1e-12,
        format!(
            "ablation: {} subsets run, comparison table with {csv_rows} rows; empty-set training loss vs 0.5 x Sharpe loss \
             max |diff| {empty_err:.1e} over {epochs} epochs (tol 1e-12); {secs:.0} s",
            runs.len()
        ),
    )
}

fn main() {
    let mut outcomes = vec![gradients(), estimators(), tsmom_oracle(), accounting(), protocol(), metrics()];
    outcomes.push(ablation());
    outcomes.extend(regime());
    let failed: Vec<&Outcome> = outcomes.iter().filter(|o| !o.pass).collect();
    println!("acceptance: {} of {} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    for o in &failed {
        println!("  failed {}: {}", o.id, o.detail);
    }
    if !failed.is_empty() && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
