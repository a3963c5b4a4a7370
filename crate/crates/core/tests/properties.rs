use proptest::prelude::*;
use tsmom_core::analytics::{
    annualized_vol, drawdown_series, drawdown_stats, equity_curve, rescale_to_target_vol, sharpe_ratio, DrawdownStats,
};
use tsmom_core::backtest::{account, GridSpace};
use tsmom_core::market_data::{generate_synthetic, SyntheticSpec};
use tsmom_core::mtl_model::{sharpe_loss_value, ModelConfig};
use tsmom_core::vol_estimators::{backward, VolEstimatorKind};

fn brute_drawdown(r: &[f64]) -> DrawdownStats {
    let e = equity_curve(r);
    let n = e.len();
    let mut worst = 0.0;
    let mut trough = 0;
    for j in 0..n {
        for i in 0..=j {
            let d = e[j] / e[i] - 1.0;
            if d < worst {
                worst = d;
                trough = j;
            }
        }
    }
    if worst == 0.0 {
        return DrawdownStats { max_drawdown: 0.0, max_drawdown_period: 0, recovery_period: Some(0) };
    }
    let m = e[..=trough].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let peak = (0..trough).filter(|&i| e[i] == m).max().unwrap();
    let recovery = (trough + 1..n).find(|&k| e[k] >= m).map(|k| k - trough);
    DrawdownStats { max_drawdown: worst, max_drawdown_period: trough - peak, recovery_period: recovery }
}

fn returns(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![4 => -0.05f64..0.05, 1 => Just(0.0)], 2..max_len)
}

proptest! {
    #[test]
    fn drawdown_matches_brute_force(r in returns(120)) {
        let got = drawdown_stats(&r).unwrap();
        let want = brute_drawdown(&r);
        prop_assert!((got.max_drawdown - want.max_drawdown).abs() < 1e-15);
        prop_assert_eq!(got.max_drawdown_period, want.max_drawdown_period);
        prop_assert_eq!(got.recovery_period, want.recovery_period);
    }

    #[test]
    fn drawdowns_are_nonpositive(r in returns(200)) {
        let dd = drawdown_series(&r);
        prop_assert_eq!(dd.len(), r.len() + 1);
        prop_assert!(dd.iter().all(|&d| d <= 0.0));
        prop_assert_eq!(dd[0], 0.0);
    }

    #[test]
    fn leading_flat_day_leaves_drawdown_unchanged(r in returns(150)) {
        let mut padded = vec![0.0];
        padded.extend(&r);
        prop_assert_eq!(drawdown_stats(&r).unwrap(), drawdown_stats(&padded).unwrap());
    }

    #[test]
    fn rescale_hits_the_target(r in returns(300), target in 0.01f64..0.5) {
        prop_assume!(annualized_vol(&r).unwrap() > 1e-6);
        let s = rescale_to_target_vol(&r, target).unwrap();
        prop_assert!((annualized_vol(&s).unwrap() - target).abs() < 1e-12);
        prop_assert!((sharpe_ratio(&s).unwrap() - sharpe_ratio(&r).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn sharpe_loss_ignores_positive_scale(r in returns(100), k in 0.01f64..100.0) {
        prop_assume!(annualized_vol(&r).unwrap() > 1e-6);
        let scaled: Vec<f64> = r.iter().map(|x| x * k).collect();
        let (a, b) = (sharpe_loss_value(&r).unwrap(), sharpe_loss_value(&scaled).unwrap());
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn estimators_are_scale_invariant(seed in 0u64..1000, k in 0.01f64..100.0, n in 2usize..30) {
        let spec = SyntheticSpec { n_assets: 1, n_days: 80, overnight_fraction: 0.2, ..Default::default() };
        let u = generate_synthetic::<f64>(&spec, seed).unwrap();
        let s = &u.assets()[0].series;
        let scaled = s.scaled(k);
        for kind in VolEstimatorKind::AUXILIARY.into_iter().chain([VolEstimatorKind::EwmaExAnte]) {
            let a = backward(kind, s, n).unwrap();
            let b = backward(kind, &scaled, n).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                match (x, y) {
                    (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{:?}", kind),
                    (None, None) => {}
                    _ => prop_assert!(false, "definedness differs for {:?}", kind),
                }
                if let Some(x) = x {
                    prop_assert!(*x >= 0.0);
                }
            }
        }
    }

    #[test]
    fn costless_accounting_is_linear_in_weights(
        w in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..20),
        r in prop::collection::vec(-0.05f64..0.05, 25),
        k in 0.1f64..5.0,
    ) {
        let next: Vec<Vec<Option<f64>>> = (0..3).map(|a| r.iter().map(|x| Some(x * (a as f64 + 1.0))).collect()).collect();
        let ws: Vec<Vec<Option<f64>>> = w.iter().map(|row| row.iter().map(|&x| Some(x)).collect()).collect();
        let ks: Vec<Vec<Option<f64>>> = w.iter().map(|row| row.iter().map(|&x| Some(k * x)).collect()).collect();
        let a = account(&next, 2, &ws, 0.1, 0.0).unwrap();
        let b = account(&next, 2, &ks, 0.1, 0.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((k * x - y).abs() < 1e-14);
        }
        let c = account(&next, 2, &ws, 0.1, 3e-4).unwrap();
        prop_assert!(a.iter().zip(&c).all(|(x, y)| y <= x));
    }

    #[test]
    fn grid_points_are_distinct(i in 0usize..49152, j in 0usize..49152) {
        let g = GridSpace::default();
        let base = ModelConfig::default();
        prop_assume!(i != j);
        prop_assert_ne!(g.point(i, &base), g.point(j, &base));
    }
}
