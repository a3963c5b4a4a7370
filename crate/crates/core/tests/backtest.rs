use chrono::NaiveDate;
use tsmom_core::backtest::{
    account, plan_folds, train_fold, BacktestContext, BacktestSettings, GridBudget, GridSpace, PanelData, Strategy,
    TrainJob, TrainSettings,
};
use tsmom_core::features::build_panel;
use tsmom_core::market_data::{build_universe, generate_synthetic, AssetSeries, FillPolicy, SyntheticSpec};
use tsmom_core::mtl_model::ModelConfig;
use tsmom_core::{baselines, Universe};

fn universe(n_assets: usize, seed: u64) -> Universe {
    let spec = SyntheticSpec {
        n_assets,
        n_days: 1150,
        drift: vec![0.15],
        vol: vec![0.15],
        persistence: Some(0.995),
        ..Default::default()
    };
    generate_synthetic::<f64>(&spec, seed).unwrap()
}

fn tiny_model() -> ModelConfig {
    ModelConfig { lookback_len: 5, lstm_hidden: 3, mlp_hidden: 3, learning_rate: 1e-2, ..Default::default() }
}

fn settings(model: ModelConfig) -> BacktestSettings {
    BacktestSettings {
        train_start: 2001,
        first_test_year: 2003,
        last_test_year: 2004,
        grid: GridSpace { lstm_hidden: vec![3, 4], ..GridSpace::single(&model) },
        model,
        budget: GridBudget::Exhaustive,
        train: TrainSettings { max_epochs: 4, patience: 25, batch_dates: 126 },
        master_seed: 17,
        ..Default::default()
    }
}

/// Same universe with every bar from `from` onward moved by a factor.
fn perturbed_after(u: &Universe, from: NaiveDate) -> Universe {
    let series = u
        .assets()
        .iter()
        .map(|a| {
            let bars = a
                .series
                .bars()
                .iter()
                .map(|b| {
                    let mut b = *b;
                    if b.date >= from {
                        let k = if b.date.to_string().ends_with('5') { 1.3 } else { 0.8 };
                        b.open *= k;
                        b.high *= k * 1.01;
                        b.low *= k;
                        b.close *= k;
                        b.settle *= k;
                    }
                    b
                })
                .collect();
            AssetSeries::new(a.id(), bars).unwrap()
        })
        .collect();
    build_universe(series, FillPolicy::ForwardFill).unwrap()
}

#[test]
fn training_never_reads_the_test_span() {
    let u = universe(2, 3);
    let s = settings(tiny_model());
    let folds = plan_folds(u.calendar(), 2003, 2004, 2001, 0.2).unwrap();
    let fold = &folds[0];
    let perturbed = perturbed_after(&u, fold.test_span.0);
    let mut models = Vec::new();
    for uu in [&u, &perturbed] {
        let data = PanelData::new(uu, build_panel(uu, &s.features).unwrap(), s.features.target_horizon);
        let job = TrainJob {
            data: &data,
            fold,
            config: &s.model,
            settings: &s.train,
            tau: s.tau,
            sigma_target: 0.1,
            seed: 99,
            grid_index: 0,
            cancel: None,
        };
        let r = train_fold(&job).unwrap();
        let reach = r.reach.max().unwrap();
        assert!(reach <= fold.fit_bar_limit());
        assert!(reach < fold.test.start);
        models.push((r.model.to_checkpoint(0), r.validation_loss_curve.clone()));
    }
    assert_eq!(models[0], models[1]);
}

#[test]
fn out_of_sample_tiles_the_test_years() {
    let u = universe(3, 4);
    let ctx = BacktestContext::new(&u, settings(tiny_model())).unwrap();
    let run = ctx.run(&Strategy::MtlTsmom, None).unwrap();
    let want: usize = ctx.folds.iter().map(|f| f.test.len()).sum();
    assert_eq!(run.returns.len(), want);
    assert_eq!(run.dates.len(), want);
    let cal = u.calendar();
    assert_eq!(run.dates[0], cal[ctx.folds[0].test.start]);
    assert_eq!(*run.dates.last().unwrap(), cal[ctx.folds[1].test.end - 1]);
    for w in run.dates.windows(2) {
        assert!(w[0] < w[1]);
    }
    for (d, next) in run.decision_dates.iter().zip(&run.dates) {
        assert!(d < next);
        assert_eq!(u.index_of(*d).unwrap() + 1, u.index_of(*next).unwrap());
    }
    for f in &run.folds {
        let t = f.training.as_ref().unwrap();
        assert_eq!(t.points.len(), 2);
        assert!(t.result.reach.max().unwrap() < f.plan.test.start);
        assert!(run.weights.iter().flatten().flatten().all(|w| (-1.0..=1.0).contains(w)));
    }
}

#[test]
fn constant_unit_weight_pays_one_entry_cost() {
    let r = [0.01, -0.02, 0.005, 0.0, 0.03];
    let next: Vec<Vec<Option<f64>>> = vec![r.iter().map(|&x| Some(x)).collect()];
    let weights = vec![vec![Some(1.0)]; 4];
    let tau = 3e-4;
    let out = account(&next, 1, &weights, 0.1, tau).unwrap();
    for (i, x) in out.iter().enumerate() {
        let cost = if i == 0 { tau * 0.1 } else { 0.0 };
        assert!((x - (0.1 * r[i + 1] - cost)).abs() < 1e-15);
    }
}

#[test]
fn zero_weights_earn_nothing() {
    let next: Vec<Vec<Option<f64>>> = vec![vec![Some(0.01); 6], vec![Some(-0.02); 6]];
    let weights = vec![vec![Some(0.0), Some(0.0)]; 5];
    assert!(account(&next, 0, &weights, 0.1, 0.0).unwrap().iter().all(|&x| x == 0.0));
}

#[test]
fn baselines_match_their_gross_returns_without_cost() {
    let u = universe(4, 5);
    let s = BacktestSettings { tau: 0.0, ..settings(tiny_model()) };
    let ctx = BacktestContext::new(&u, s.clone()).unwrap();
    let run = ctx.run(&Strategy::Tsmom, None).unwrap();
    let gross = baselines::tsmom_portfolio(&u, &s.vol).unwrap();
    for (d, x) in run.dates.iter().zip(&run.returns) {
        let t = u.index_of(*d).unwrap();
        assert!((x - gross.daily_returns[t]).abs() < 1e-15, "{d}");
    }
    let with_cost = BacktestContext::new(&u, settings(tiny_model())).unwrap().run(&Strategy::Tsmom, None).unwrap();
    let paid: f64 = run.returns.iter().zip(&with_cost.returns).map(|(a, b)| a - b).sum();
    assert!(paid > 0.0);
}

#[test]
fn neural_runs_repeat_bit_for_bit_across_worker_counts() {
    let u = universe(2, 6);
    let a = BacktestContext::new(&u, settings(tiny_model())).unwrap().run(&Strategy::MtlTsmom, None).unwrap();
    let s2 = BacktestSettings { workers: 2, ..settings(tiny_model()) };
    let b = BacktestContext::new(&u, s2).unwrap().run(&Strategy::MtlTsmom, None).unwrap();
    assert_eq!(a.returns, b.returns);
    assert_eq!(a.weights, b.weights);
    let s3 = BacktestSettings { master_seed: 18, ..settings(tiny_model()) };
    let c = BacktestContext::new(&u, s3).unwrap().run(&Strategy::MtlTsmom, None).unwrap();
    assert_ne!(a.returns, c.returns);
}

#[test]
fn empty_task_set_trains_on_half_the_sharpe_loss() {
    let u = universe(2, 7);
    let ctx = BacktestContext::new(&u, settings(tiny_model())).unwrap();
    let out = ctx.run_ablation(&[vec![]], None).unwrap();
    assert_eq!(out[0].1.tag, "MTL-ablation-none");
    for f in &out[0].1.folds {
        let r = &f.training.as_ref().unwrap().result;
        assert!(r.model.aux_heads.is_empty());
        for e in &r.epochs {
            assert!(e.train_aux.is_empty());
            assert!((e.train_loss - 0.5 * e.train_sharpe).abs() <= 1e-12);
        }
    }
}

#[test]
fn cancellation_returns_completed_folds_only() {
    use std::sync::atomic::AtomicBool;
    let u = universe(2, 8);
    let ctx = BacktestContext::new(&u, settings(tiny_model())).unwrap();
    let flag = AtomicBool::new(true);
    let run = ctx.run(&Strategy::MtlTsmom, Some(&flag)).unwrap();
    assert!(run.interrupted);
    assert!(run.folds.is_empty());
    assert!(run.returns.is_empty());
}
