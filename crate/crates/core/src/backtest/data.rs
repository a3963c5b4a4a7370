//! Packing the feature panel into training batches.
//!
//! A split is described by the decision dates it trains on and the last bar
//! it may read. A decision at `t` earns the return into `t + 1`, so the
//! decisions of a split whose bars end at `E` stop at `E - 1`, and a
//! forward-vol target at `t` is kept only when `t + h <= E`.

use std::ops::Range;

use crate::baselines::next_log_return;
use crate::features::FeaturePanel;
use crate::market_data::Universe;
use crate::mtl_model::Batch;
use crate::neural::Tensor;
use crate::vol_estimators::VolEstimatorKind;

/// Panel plus next-day returns, shared by every fold and config.
#[derive(Debug, Clone)]
pub struct PanelData {
    pub panel: FeaturePanel<f64>,
    /// `next_returns[asset][t]`: settle log return from `t` to `t + 1`.
    pub next_returns: Vec<Vec<Option<f64>>>,
    pub target_horizon: usize,
}

impl PanelData {
    pub fn new(universe: &Universe<f64>, panel: FeaturePanel<f64>, target_horizon: usize) -> Self {
        let n = universe.len();
        let next_returns = universe.assets().iter().map(|a| (0..n).map(|t| next_log_return(a, t)).collect()).collect();
        Self { panel, next_returns, target_horizon }
    }

    pub fn n_assets(&self) -> usize {
        self.next_returns.len()
    }

    pub fn n_dates(&self) -> usize {
        self.panel.n_dates()
    }

    /// Whether asset `a` holds a position decided at `t` that earns a return.
    pub fn is_active(&self, a: usize, t: usize, lookback: usize) -> bool {
        self.next_returns[a][t].is_some() && self.panel.window_valid(a, t, lookback)
    }

    /// Time-major `[lookback * cells.len(), n_features]` windows ending at each cell.
    pub fn windows(&self, cells: &[(usize, usize)], lookback: usize) -> Tensor<f64> {
        let f = self.panel.n_features();
        let n = cells.len();
        let mut data = vec![0.0; lookback * n * f];
        for s in 0..lookback {
            for (b, &(a, t)) in cells.iter().enumerate() {
                let row = self.panel.row_unchecked(a, t + 1 + s - lookback);
                let at = (s * n + b) * f;
                data[at..at + f].copy_from_slice(row);
            }
        }
        Tensor::new([lookback * n, f], data).expect("window shape")
    }
}

/// Largest bar index read by anything packed into a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BarReach {
    pub features: Option<usize>,
    pub returns: Option<usize>,
    pub targets: Option<usize>,
}

impl BarReach {
    fn bump(slot: &mut Option<usize>, t: usize) {
        *slot = Some(slot.map_or(t, |m| m.max(t)));
    }

    pub fn merge(&mut self, other: &BarReach) {
        for (s, o) in [(&mut self.features, other.features), (&mut self.returns, other.returns), (&mut self.targets, other.targets)] {
            if let Some(o) = o {
                Self::bump(s, o);
            }
        }
    }

    pub fn max(&self) -> Option<usize> {
        [self.features, self.returns, self.targets].into_iter().flatten().max()
    }
}

/// Decision dates `[lo, hi)` of which at least one asset is active.
pub fn trim_decisions(data: &PanelData, decisions: Range<usize>, lookback: usize) -> Range<usize> {
    let any = |t: usize| (0..data.n_assets()).any(|a| data.is_active(a, t, lookback));
    let lo = decisions.clone().find(|&t| any(t)).unwrap_or(decisions.end);
    let hi = (lo..decisions.end).rev().find(|&t| any(t)).map_or(lo, |t| t + 1);
    lo..hi
}

/// Splits `decisions` into about `len / span` contiguous chunks of near-equal size.
pub fn chunk_decisions(decisions: Range<usize>, span: usize) -> Vec<Range<usize>> {
    let n = decisions.len();
    if n == 0 {
        return Vec::new();
    }
    let k = ((n as f64 / span.max(1) as f64).round() as usize).max(1);
    (0..k).map(|i| decisions.start + i * n / k..decisions.start + (i + 1) * n / k).collect()
}

/// Packs the decisions `dates` into a batch, reading no bar past `bar_limit`.
pub fn build_batch(
    data: &PanelData,
    dates: Range<usize>,
    bar_limit: usize,
    lookback: usize,
    aux: &[VolEstimatorKind],
    sigma_target: f64,
) -> (Batch<f64>, BarReach) {
    let n_assets = data.n_assets();
    let d = dates.len();
    let mut reach = BarReach::default();
    let mut cells = Vec::new();
    let mut weight_index = Vec::with_capacity((d + 1) * n_assets);
    let mut next_returns = vec![0.0; d * n_assets];
    let mut active = vec![0.0; d * n_assets];
    let mut scale = vec![0.0; d];
    let mut aux_targets: Vec<(VolEstimatorKind, Vec<(usize, f64)>)> = aux.iter().map(|&k| (k, Vec::new())).collect();

    // Row 0 holds the positions carried into the first date.
    for a in 0..n_assets {
        let prev = dates.start.checked_sub(1).filter(|&t| t < bar_limit && data.is_active(a, t, lookback));
        match prev {
            Some(t) => {
                weight_index.push(cells.len());
                cells.push((a, t));
                BarReach::bump(&mut reach.features, t);
            }
            None => weight_index.push(usize::MAX),
        }
    }
    for (row, t) in dates.clone().enumerate() {
        let mut n_active = 0;
        for a in 0..n_assets {
            if t >= bar_limit || !data.is_active(a, t, lookback) {
                weight_index.push(usize::MAX);
                continue;
            }
            let s = cells.len();
            weight_index.push(s);
            cells.push((a, t));
            n_active += 1;
            next_returns[row * n_assets + a] = data.next_returns[a][t].expect("active");
            active[row * n_assets + a] = 1.0;
            BarReach::bump(&mut reach.features, t);
            BarReach::bump(&mut reach.returns, t + 1);
            if t + data.target_horizon <= bar_limit {
                for (kind, list) in aux_targets.iter_mut() {
                    if let Some(v) = data.panel.target(a, t, *kind) {
                        list.push((s, v));
                        BarReach::bump(&mut reach.targets, t + data.target_horizon);
                    }
                }
            }
        }
        if n_active > 0 {
            scale[row] = sigma_target / n_active as f64;
        }
    }
    let n_samples = cells.len();
    for w in weight_index.iter_mut() {
        if *w == usize::MAX {
            *w = n_samples;
        }
    }
    let batch = Batch {
        n_dates: d,
        n_assets,
        inputs: data.windows(&cells, lookback),
        n_samples,
        weight_index,
        next_returns: Tensor::new([d, n_assets], next_returns).expect("shape"),
        active: Tensor::new([d, n_assets], active).expect("shape"),
        scale: Tensor::column(scale),
        aux_targets,
    };
    (batch, reach)
}
