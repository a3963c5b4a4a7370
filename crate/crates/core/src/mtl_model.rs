//! Multi-task network: a shared stacked LSTM whose last hidden state feeds
//! one weight head and one forward-volatility head per auxiliary task,
//! together with the net portfolio return and the three losses.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neural::fnn::fnn_forward;
use crate::neural::{Activation, Checkpoint, FnnParams, LstmCellParams, NeuralError, Tape, Tensor, Var};
use crate::scalar::{lit, Real};
use crate::vol_estimators::VolEstimatorKind;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("misaligned panels: {0}")]
    MisalignedPanels(String),
    #[error("need at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Standard deviations below this trigger the loss guards.
pub const LOSS_MIN_STD: f64 = 1e-12;
/// Bound on the guarded Sharpe loss.
pub const SHARPE_LOSS_CLAMP: f64 = 1e6;

/// Default search grid, used to flag configs outside it.
pub const GRID_LAYERS: [usize; 4] = [1, 2, 3, 4];
pub const GRID_HIDDEN: [usize; 4] = [32, 64, 126, 252];
pub const GRID_DROPOUT: [f64; 4] = [0.05, 0.10, 0.15, 0.20];
pub const GRID_LR: [f64; 4] = [0.0001, 0.001, 0.01, 0.1];
pub const GRID_MAX_GRAD_NORM: [f64; 3] = [0.01, 0.1, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_lstm_layers: usize,
    pub lstm_hidden: usize,
    pub lstm_dropout: f64,
    /// Hidden layers per head; each head ends in one extra output layer.
    pub n_mlp_layers: usize,
    pub mlp_hidden: usize,
    pub mlp_dropout: f64,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    pub lookback_len: usize,
    pub active_aux_tasks: Vec<VolEstimatorKind>,
    pub mu: f64,
    pub lambda: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_lstm_layers: 1,
            lstm_hidden: 32,
            lstm_dropout: 0.1,
            n_mlp_layers: 1,
            mlp_hidden: 32,
            mlp_dropout: 0.1,
            learning_rate: 1e-4,
            max_grad_norm: 1.0,
            lookback_len: 63,
            active_aux_tasks: VolEstimatorKind::AUXILIARY.to_vec(),
            mu: 0.5,
            lambda: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.n_lstm_layers < 1 || self.n_mlp_layers < 1 {
            return bad("layer counts must be at least 1".into());
        }
        if self.lstm_hidden < 1 || self.mlp_hidden < 1 {
            return bad("hidden sizes must be at least 1".into());
        }
        for (name, p) in [("lstm_dropout", self.lstm_dropout), ("mlp_dropout", self.mlp_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.max_grad_norm > 0.0 && self.max_grad_norm.is_finite()) {
            return bad(format!("max_grad_norm must be positive, got {}", self.max_grad_norm));
        }
        if self.lookback_len < 1 {
            return bad("lookback_len must be at least 1".into());
        }
        for (i, k) in self.active_aux_tasks.iter().enumerate() {
            if !VolEstimatorKind::AUXILIARY.contains(k) {
                return bad(format!("{} is not an auxiliary task", k.tag()));
            }
            if self.active_aux_tasks[..i].contains(k) {
                return bad(format!("auxiliary task {} listed twice", k.tag()));
            }
        }
        if !(0.0..=1.0).contains(&self.mu) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("mu and lambda must lie in [0, 1]".into());
        }
        if (self.mu + self.lambda - 1.0).abs() > 1e-12 {
            return bad(format!("mu + lambda must equal 1, got {}", self.mu + self.lambda));
        }
        Ok(())
    }

    /// Whether every searched hyperparameter lies on the default grid.
    pub fn on_default_grid(&self) -> bool {
        let close = |set: &[f64], x: f64| set.iter().any(|&v| (v - x).abs() < 1e-12);
        GRID_LAYERS.contains(&self.n_lstm_layers)
            && GRID_LAYERS.contains(&self.n_mlp_layers)
            && GRID_HIDDEN.contains(&self.lstm_hidden)
            && GRID_HIDDEN.contains(&self.mlp_hidden)
            && close(&GRID_DROPOUT, self.lstm_dropout)
            && close(&GRID_DROPOUT, self.mlp_dropout)
            && close(&GRID_LR, self.learning_rate)
            && close(&GRID_MAX_GRAD_NORM, self.max_grad_norm)
    }

    /// Active tasks in canonical order.
    pub fn aux_tasks(&self) -> Vec<VolEstimatorKind> {
        VolEstimatorKind::AUXILIARY.into_iter().filter(|k| self.active_aux_tasks.contains(k)).collect()
    }

    /// Learnable scalar count for `n_features` inputs.
    pub fn n_params(&self, n_features: usize) -> usize {
        let h = self.lstm_hidden;
        let lstm: usize = (0..self.n_lstm_layers).map(|k| 4 * h * (if k == 0 { n_features } else { h } + h + 1)).sum();
        let m = self.mlp_hidden;
        let head = h * m + m + (self.n_mlp_layers - 1) * (m * m + m) + m + 1;
        lstm + head * (1 + self.aux_tasks().len())
    }
}

/// Shared trunk plus task heads.
#[derive(Debug, Clone, PartialEq)]
pub struct MtlModel<T> {
    pub config: ModelConfig,
    pub n_features: usize,
    pub lstm: Vec<LstmCellParams<T>>,
    pub main_head: FnnParams<T>,
    /// One head per active task, in canonical order.
    pub aux_heads: Vec<(VolEstimatorKind, FnnParams<T>)>,
}

/// Model parameters registered on a tape, in [`MtlModel::named_params`] order.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub vars: Vec<Var>,
    lstm: Vec<[Var; 3]>,
    main: Vec<(Var, Var, Activation)>,
    aux: Vec<(VolEstimatorKind, Vec<(Var, Var, Activation)>)>,
}

/// Head outputs for a batch of windows, each `[B, 1]`.
#[derive(Debug, Clone)]
pub struct ModelOutputs {
    pub weight: Var,
    pub aux: Vec<(VolEstimatorKind, Var)>,
}

impl<T: Real> MtlModel<T> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, n_features: usize, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let h = config.lstm_hidden;
        let lstm = (0..config.n_lstm_layers)
            .map(|k| LstmCellParams::init(if k == 0 { n_features } else { h }, h, rng))
            .collect();
        let mut dims = vec![h];
        dims.extend(std::iter::repeat_n(config.mlp_hidden, config.n_mlp_layers));
        dims.push(1);
        let mut acts = vec![Activation::Tanh; config.n_mlp_layers + 1];
        let main_head = FnnParams::init(&dims, &acts, rng)?;
        *acts.last_mut().expect("nonempty") = Activation::Softplus;
        let aux_heads = config
            .aux_tasks()
            .into_iter()
            .map(|k| Ok((k, FnnParams::init(&dims, &acts, rng)?)))
            .collect::<Result<_, ModelError>>()?;
        Ok(Self { config, n_features, lstm, main_head, aux_heads })
    }

    /// Same architecture with every parameter (biases included) set to 0.
    pub fn zeros(config: ModelConfig, n_features: usize) -> Result<Self, ModelError> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::new(config, n_features, &mut rng)?;
        for p in model.params_mut() {
            p.data_mut().iter_mut().for_each(|x| *x = T::zero());
        }
        Ok(model)
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (k, l) in self.lstm.iter().enumerate() {
            out.push((format!("lstm{k}.w_ih"), &l.w_ih));
            out.push((format!("lstm{k}.w_hh"), &l.w_hh));
            out.push((format!("lstm{k}.bias"), &l.bias));
        }
        let heads = std::iter::once(("main".to_string(), &self.main_head))
            .chain(self.aux_heads.iter().map(|(k, f)| (format!("aux_{}", k.tag()), f)));
        for (prefix, f) in heads {
            for (j, l) in f.layers.iter().enumerate() {
                out.push((format!("{prefix}.l{j}.weight"), &l.weight));
                out.push((format!("{prefix}.l{j}.bias"), &l.bias));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in &mut self.lstm {
            out.extend([&mut l.w_ih, &mut l.w_hh, &mut l.bias]);
        }
        for l in &mut self.main_head.layers {
            out.extend([&mut l.weight, &mut l.bias]);
        }
        for (_, f) in &mut self.aux_heads {
            for l in &mut f.layers {
                out.extend([&mut l.weight, &mut l.bias]);
            }
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Registers every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundModel {
        self.bind_with(tape, true)
    }

    fn bind_with(&self, tape: &mut Tape<T>, differentiable: bool) -> BoundModel {
        let mut vars = Vec::new();
        let mut reg = |tape: &mut Tape<T>, t: &Tensor<T>| {
            let v = if differentiable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
            vars.push(v);
            v
        };
        let lstm = self.lstm.iter().map(|l| [reg(tape, &l.w_ih), reg(tape, &l.w_hh), reg(tape, &l.bias)]).collect();
        let mut head = |tape: &mut Tape<T>, f: &FnnParams<T>| {
            f.layers.iter().map(|l| (reg(tape, &l.weight), reg(tape, &l.bias), l.activation)).collect::<Vec<_>>()
        };
        let main = head(tape, &self.main_head);
        let aux = self.aux_heads.iter().map(|(k, f)| (*k, head(tape, f))).collect();
        BoundModel { vars, lstm, main, aux }
    }

    /// Runs `batch` windows laid out time-major: row `s * batch + b` of `x`
    /// is step `s` of window `b`, so `x` is `[lookback * batch, n_features]`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundModel,
        x: Var,
        batch: usize,
        training: bool,
        rng: &mut R,
    ) -> Result<ModelOutputs, ModelError> {
        let [rows, cols] = tape.shape(x);
        if cols != self.n_features || batch == 0 || rows % batch != 0 {
            return Err(NeuralError::ShapeMismatch {
                op: "mtl_forward",
                detail: format!("input [{rows}, {cols}] for batch {batch} and {} features", self.n_features),
            }
            .into());
        }
        let mut h = x;
        for (k, [w, u, b]) in bound.lstm.iter().enumerate() {
            if k > 0 {
                h = tape.dropout(h, self.config.lstm_dropout, training, rng)?;
            }
            h = tape.lstm_layer(h, *w, *u, *b, batch)?;
        }
        let last = tape.slice_rows(h, rows - batch, batch)?;
        let p = self.config.mlp_dropout;
        let weight = fnn_forward(tape, &bound.main, last, p, training, rng)?;
        let aux = bound
            .aux
            .iter()
            .map(|(k, layers)| Ok((*k, fnn_forward(tape, layers, last, p, training, rng)?)))
            .collect::<Result<_, ModelError>>()?;
        Ok(ModelOutputs { weight, aux })
    }

    /// Weight and auxiliary forecasts for one `lookback x n_features`
    /// window given row-major (oldest step first).
    pub fn predict<R: Rng + ?Sized>(
        &self,
        window: &[T],
        training: bool,
        rng: &mut R,
    ) -> Result<(T, Vec<(VolEstimatorKind, T)>), ModelError> {
        let l = window.len() / self.n_features.max(1);
        let x = Tensor::new([l, self.n_features], window.to_vec())?;
        let (w, aux) = self.predict_batch(x, 1, training, rng)?;
        Ok((w[0], aux.into_iter().map(|(k, v)| (k, v[0])).collect()))
    }

    /// Forward pass without gradients over time-major windows.
    #[allow(clippy::type_complexity)]
    pub fn predict_batch<R: Rng + ?Sized>(
        &self,
        x: Tensor<T>,
        batch: usize,
        training: bool,
        rng: &mut R,
    ) -> Result<(Vec<T>, Vec<(VolEstimatorKind, Vec<T>)>), ModelError> {
        let mut tape = Tape::new();
        let bound = self.bind_with(&mut tape, false);
        let xv = tape.constant(x);
        let out = self.forward(&mut tape, &bound, xv, batch, training, rng)?;
        let w = tape.value(out.weight).data().to_vec();
        let aux = out.aux.iter().map(|(k, v)| (*k, tape.value(*v).data().to_vec())).collect();
        Ok((w, aux))
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint<T> {
        let tensors = self.named_params().into_iter().map(|(n, t)| (n, t.clone())).collect();
        let mut ck = Checkpoint::new(seed, tensors);
        ck.meta.push(("n_features".into(), self.n_features.to_string()));
        ck
    }

    /// Loads parameters saved by [`MtlModel::to_checkpoint`] into a model
    /// of the given architecture.
    pub fn from_checkpoint(config: ModelConfig, n_features: usize, ck: &Checkpoint<T>) -> Result<Self, ModelError> {
        let mut model = Self::zeros(config, n_features)?;
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        if names.len() != ck.tensors.len() {
            return Err(ModelError::InvalidConfig(format!(
                "checkpoint has {} tensors, architecture needs {}",
                ck.tensors.len(),
                names.len()
            )));
        }
        for (p, name) in model.params_mut().into_iter().zip(&names) {
            let t = ck
                .tensor(name)
                .ok_or_else(|| ModelError::InvalidConfig(format!("checkpoint lacks tensor {name}")))?;
            if t.shape() != p.shape() {
                return Err(ModelError::InvalidConfig(format!("tensor {name}: shape {:?}, expected {:?}", t.shape(), p.shape())));
            }
            *p = t.clone();
        }
        Ok(model)
    }
}

/// Net returns of a weight panel, one per date:
/// `r_t = sigma_tgt / S_t * sum_i [w_it * r_i,t+1 - tau * |w_it - w_i,t-1|]`.
///
/// `weights[t][i]` is the weight decided at `t` (`None` when the asset is
/// inactive) and `next_returns[t][i]` the asset's return from `t` to
/// `t + 1`. An asset counts toward `S_t` when both are present; inactive
/// weights are taken as 0 when differencing, and `prev_weights` gives the
/// weights before the first date. Dates with no active asset return 0.
pub fn portfolio_return_net<T: Real>(
    weights: &[Vec<Option<T>>],
    prev_weights: &[T],
    next_returns: &[Vec<Option<T>>],
    sigma_target: T,
    tau: T,
) -> Result<Vec<T>, ModelError> {
    if weights.len() != next_returns.len() {
        return Err(ModelError::MisalignedPanels(format!("{} weight dates vs {} return dates", weights.len(), next_returns.len())));
    }
    let n_assets = prev_weights.len();
    let mut prev: Vec<T> = prev_weights.to_vec();
    let mut out = Vec::with_capacity(weights.len());
    for (t, (w, r)) in weights.iter().zip(next_returns).enumerate() {
        if w.len() != n_assets || r.len() != n_assets {
            return Err(ModelError::MisalignedPanels(format!("date {t}: expected {n_assets} assets")));
        }
        let mut acc = T::zero();
        let mut active = 0usize;
        for i in 0..n_assets {
            if let (Some(wi), Some(ri)) = (w[i], r[i]) {
                acc += wi * ri - tau * (wi - prev[i]).abs();
                active += 1;
            }
        }
        out.push(if active == 0 { T::zero() } else { sigma_target / lit(active as f64) * acc });
        for i in 0..n_assets {
            prev[i] = match (w[i], r[i]) {
                (Some(wi), Some(_)) => wi,
                _ => T::zero(),
            };
        }
    }
    Ok(out)
}

/// Tape version of [`portfolio_return_net`] on dense panels.
///
/// `w` is `[D + 1, A]` with row 0 holding the weights before the first
/// date; `next_returns`, `active` (0/1) are `[D, A]` and `scale` is the
/// `[D, 1]` column `sigma_tgt / S_t` (0 when no asset is active). Inactive
/// entries of `w` must be 0. Returns `[D, 1]`.
pub fn portfolio_returns_tape<T: Real>(
    tape: &mut Tape<T>,
    w: Var,
    next_returns: Var,
    active: Var,
    scale: Var,
    tau: T,
) -> Result<Var, ModelError> {
    let [rows, a] = tape.shape(w);
    let d = rows.checked_sub(1).ok_or_else(|| ModelError::MisalignedPanels("empty weight panel".into()))?;
    for (name, v, shape) in [("returns", next_returns, [d, a]), ("active", active, [d, a]), ("scale", scale, [d, 1])] {
        if tape.shape(v) != shape {
            return Err(ModelError::MisalignedPanels(format!("{name} is {:?}, expected {shape:?}", tape.shape(v))));
        }
    }
    let cur = tape.slice_rows(w, 1, d)?;
    let prev = tape.slice_rows(w, 0, d)?;
    let gross = tape.mul(cur, next_returns)?;
    let diff = tape.sub(cur, prev)?;
    let turnover = tape.abs(diff);
    let turnover = tape.mul(turnover, active)?;
    let cost = tape.scale(turnover, tau);
    let net = tape.sub(gross, cost)?;
    let ones = tape.constant(Tensor::full([a, 1], T::one()));
    let per_date = tape.matmul(net, ones)?;
    Ok(tape.mul(per_date, scale)?)
}

/// `-mean / std` with sample std; below [`LOSS_MIN_STD`] the denominator is
/// replaced by that floor and the result clamped to [`SHARPE_LOSS_CLAMP`].
pub fn sharpe_loss<T: Real>(tape: &mut Tape<T>, returns: Var) -> Result<Var, ModelError> {
    let n = tape.value(returns).len();
    if n < 2 {
        return Err(ModelError::TooFewObservations(n));
    }
    let mean = tape.mean(returns)?;
    let std = tape.sample_std(returns)?;
    if tape.value(std).item() < lit(LOSS_MIN_STD) {
        let raw = tape.scale(mean, lit(-1.0 / LOSS_MIN_STD));
        let c: T = lit(SHARPE_LOSS_CLAMP);
        return Ok(tape.clamp(raw, -c, c));
    }
    let ratio = tape.div(mean, std)?;
    Ok(tape.neg(ratio))
}

/// Value of [`sharpe_loss`].
pub fn sharpe_loss_value<T: Real>(returns: &[T]) -> Result<T, ModelError> {
    if returns.len() < 2 {
        return Err(ModelError::TooFewObservations(returns.len()));
    }
    let (mean, std) = mean_std(returns);
    if std < lit(LOSS_MIN_STD) {
        let c: T = lit(SHARPE_LOSS_CLAMP);
        return Ok((-mean / lit(LOSS_MIN_STD)).max(-c).min(c));
    }
    Ok(-mean / std)
}

fn mean_std<T: Real>(x: &[T]) -> (T, T) {
    let n: T = lit(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let ss: T = x.iter().map(|&v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - T::one())).sqrt())
}

/// Negative sample correlation between predictions `y` (`[n, 1]`) and
/// realized values; rows whose target is `None` are dropped. A constant
/// side yields a zero loss and a warning.
pub fn corr_loss<T: Real>(tape: &mut Tape<T>, y: Var, targets: &[Option<T>]) -> Result<Var, ModelError> {
    if tape.shape(y) != [targets.len(), 1] {
        return Err(ModelError::MisalignedPanels(format!("{:?} predictions vs {} targets", tape.shape(y), targets.len())));
    }
    let rows: Vec<usize> = (0..targets.len()).filter(|&i| targets[i].is_some()).collect();
    let realized: Vec<T> = rows.iter().map(|&i| targets[i].expect("present")).collect();
    let y = if rows.len() == targets.len() { y } else { tape.select_rows(y, &rows)? };
    corr_loss_dense(tape, y, &realized)
}

fn corr_loss_dense<T: Real>(tape: &mut Tape<T>, y: Var, realized: &[T]) -> Result<Var, ModelError> {
    let n = realized.len();
    if n < 2 {
        return Err(ModelError::TooFewObservations(n));
    }
    let (t_mean, t_std) = mean_std(realized);
    let sy = tape.sample_std(y)?;
    let floor: T = lit(LOSS_MIN_STD);
    if t_std < floor || tape.value(sy).item() < floor {
        log::warn!("correlation loss: constant series over {n} observations; contributing 0");
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }
    let centered = tape.constant(Tensor::column(realized.iter().map(|&v| v - t_mean).collect()));
    let my = tape.mean(y)?;
    let yc = tape.sub(y, my)?;
    let prod = tape.mul(yc, centered)?;
    let s = tape.sum(prod);
    let cov = tape.scale(s, T::one() / lit(n as f64 - 1.0));
    let denom = tape.scale(sy, t_std);
    let corr = tape.div(cov, denom)?;
    Ok(tape.neg(corr))
}

/// Value of [`corr_loss`] on present pairs.
pub fn corr_loss_value<T: Real>(predicted: &[T], realized: &[Option<T>]) -> Result<T, ModelError> {
    if predicted.len() != realized.len() {
        return Err(ModelError::MisalignedPanels(format!("{} predictions vs {} targets", predicted.len(), realized.len())));
    }
    let (y, t): (Vec<T>, Vec<T>) = predicted.iter().zip(realized).filter_map(|(&p, r)| r.map(|r| (p, r))).unzip();
    if y.len() < 2 {
        return Err(ModelError::TooFewObservations(y.len()));
    }
    let (my, sy) = mean_std(&y);
    let (mt, st) = mean_std(&t);
    if sy < lit(LOSS_MIN_STD) || st < lit(LOSS_MIN_STD) {
        log::warn!("correlation loss: constant series over {} observations; contributing 0", y.len());
        return Ok(T::zero());
    }
    let cov: T = y.iter().zip(&t).map(|(&a, &b)| (a - my) * (b - mt)).sum::<T>() / lit(y.len() as f64 - 1.0);
    Ok(-cov / (sy * st))
}

/// `mu * sharpe + lambda * sum(aux)`.
pub fn combine_losses<T: Real>(tape: &mut Tape<T>, sharpe: Var, aux: &[Var], mu: f64, lambda: f64) -> Result<Var, ModelError> {
    let mut total = tape.scale(sharpe, lit(mu));
    for &a in aux {
        let term = tape.scale(a, lit(lambda));
        total = tape.add(total, term)?;
    }
    Ok(total)
}

/// One training batch: a contiguous span of `D` decision dates across `A`
/// assets, plus the date before it for turnover.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub n_dates: usize,
    pub n_assets: usize,
    /// Time-major windows `[lookback * n_samples, n_features]`.
    pub inputs: Tensor<T>,
    pub n_samples: usize,
    /// For each of the `(D + 1) * A` cells (date-major), the sample that
    /// produced its weight, or `n_samples` for an inactive cell.
    pub weight_index: Vec<usize>,
    /// `[D, A]` asset returns from each decision date to the next (0 where inactive).
    pub next_returns: Tensor<T>,
    /// `[D, A]` 0/1 activity mask.
    pub active: Tensor<T>,
    /// `[D, 1]` column `sigma_tgt / S_t`.
    pub scale: Tensor<T>,
    /// Per task in canonical order: `(sample, realized target)` pairs.
    pub aux_targets: Vec<(VolEstimatorKind, Vec<(usize, T)>)>,
}

impl<T: Real> Batch<T> {
    pub fn validate(&self) -> Result<(), ModelError> {
        let (d, a) = (self.n_dates, self.n_assets);
        let mis = |m: String| Err(ModelError::MisalignedPanels(m));
        if self.weight_index.len() != (d + 1) * a {
            return mis(format!("{} weight cells for {d}+1 dates x {a} assets", self.weight_index.len()));
        }
        if self.weight_index.iter().any(|&i| i > self.n_samples) {
            return mis("weight index out of range".into());
        }
        if self.next_returns.shape() != [d, a] || self.active.shape() != [d, a] || self.scale.shape() != [d, 1] {
            return mis("return, mask or scale panel has the wrong shape".into());
        }
        if self.n_samples == 0 || self.inputs.rows() % self.n_samples != 0 {
            return mis(format!("{} input rows for {} samples", self.inputs.rows(), self.n_samples));
        }
        if self.aux_targets.iter().any(|(_, v)| v.iter().any(|&(s, _)| s >= self.n_samples)) {
            return mis("auxiliary target refers to a missing sample".into());
        }
        Ok(())
    }
}

/// Loss handles and values of one batch evaluation.
#[derive(Debug, Clone)]
pub struct LossTerms<T> {
    pub total: Var,
    pub sharpe: T,
    pub aux: Vec<(VolEstimatorKind, T)>,
    pub total_value: T,
    pub returns: Vec<T>,
}

/// Combined Sharpe and auxiliary loss of a batch, recorded on `tape`.
pub fn total_loss<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    model: &MtlModel<T>,
    bound: &BoundModel,
    batch: &Batch<T>,
    tau: f64,
    training: bool,
    rng: &mut R,
) -> Result<LossTerms<T>, ModelError> {
    batch.validate()?;
    let x = tape.constant(batch.inputs.clone());
    let out = model.forward(tape, bound, x, batch.n_samples, training, rng)?;

    let zero = tape.constant(Tensor::zeros([1, 1]));
    let padded = tape.concat_rows(&[out.weight, zero])?;
    let cells = tape.select_rows(padded, &batch.weight_index)?;
    let w = tape.reshape(cells, [batch.n_dates + 1, batch.n_assets])?;
    let r = tape.constant(batch.next_returns.clone());
    let m = tape.constant(batch.active.clone());
    let s = tape.constant(batch.scale.clone());
    let returns = portfolio_returns_tape(tape, w, r, m, s, lit(tau))?;
    let sharpe = sharpe_loss(tape, returns)?;

    let mut aux_vars = Vec::new();
    let mut aux_values = Vec::new();
    for (kind, pred) in &out.aux {
        let Some((_, pairs)) = batch.aux_targets.iter().find(|(k, _)| k == kind) else {
            return Err(ModelError::MisalignedPanels(format!("batch carries no targets for {}", kind.tag())));
        };
        let rows: Vec<usize> = pairs.iter().map(|&(i, _)| i).collect();
        let realized: Vec<T> = pairs.iter().map(|&(_, v)| v).collect();
        let y = tape.select_rows(*pred, &rows)?;
        let l = corr_loss_dense(tape, y, &realized)?;
        aux_vars.push(l);
        aux_values.push((*kind, tape.value(l).item()));
    }
    let total = combine_losses(tape, sharpe, &aux_vars, model.config.mu, model.config.lambda)?;
    Ok(LossTerms {
        total,
        sharpe: tape.value(sharpe).item(),
        aux: aux_values,
        total_value: tape.value(total).item(),
        returns: tape.value(returns).data().to_vec(),
    })
}
