use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mtl_model::{total_loss, Batch, ModelConfig, MtlModel};
use crate::neural::{clip_grad_norm, Adam, AdamConfig, Tape, Tensor};
use crate::vol_estimators::VolEstimatorKind;

use super::data::{build_batch, chunk_decisions, trim_decisions, BarReach, PanelData};
use super::folds::{EarlyStopping, FoldPlan, StopDecision};
use super::grid::derive_seed;
use super::BacktestError;

/// Optimisation protocol shared by every training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub max_epochs: usize,
    pub patience: usize,
    /// Decision dates per mini-batch.
    pub batch_dates: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { max_epochs: 200, patience: 25, batch_dates: 126 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over mini-batches of the total loss.
    pub train_loss: f64,
    /// Mean over mini-batches of the Sharpe loss.
    pub train_sharpe: f64,
    pub train_aux: Vec<(VolEstimatorKind, f64)>,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainRunResult {
    pub config: ModelConfig,
    pub seed: u64,
    /// 0 when no epoch produced a finite validation loss.
    pub best_epoch: usize,
    /// Validation loss of the untrained model.
    pub initial_validation_loss: f64,
    /// Validation loss after each epoch, starting at epoch 1.
    pub validation_loss_curve: Vec<f64>,
    /// Best validation loss, `+inf` when the run diverged.
    pub validation_loss: f64,
    pub epochs: Vec<EpochLog>,
    pub diverged: bool,
    pub stopped_early: bool,
    /// Model restored to the best epoch.
    pub model: MtlModel<f64>,
    pub reach: BarReach,
    pub wall_time_secs: f64,
}

/// Everything needed to fit one config on one fold.
pub struct TrainJob<'a> {
    pub data: &'a PanelData,
    pub fold: &'a FoldPlan,
    pub config: &'a ModelConfig,
    pub settings: &'a TrainSettings,
    pub tau: f64,
    pub sigma_target: f64,
    pub seed: u64,
    /// Grid position, only used in log lines.
    pub grid_index: usize,
    pub cancel: Option<&'a AtomicBool>,
}

struct Split {
    batches: Vec<Batch<f64>>,
    reach: BarReach,
}

fn split(job: &TrainJob, decisions: std::ops::Range<usize>, bar_limit: usize, span: usize) -> Split {
    let lookback = job.config.lookback_len;
    let aux = job.config.aux_tasks();
    let decisions = trim_decisions(job.data, decisions, lookback);
    let mut reach = BarReach::default();
    let mut batches = Vec::new();
    for chunk in chunk_decisions(decisions, span) {
        let (b, r) = build_batch(job.data, chunk, bar_limit, lookback, &aux, job.sigma_target);
        if b.n_samples > 0 && b.n_dates >= 2 {
            reach.merge(&r);
            batches.push(b);
        }
    }
    Split { batches, reach }
}

fn params_of(model: &MtlModel<f64>) -> Vec<Tensor<f64>> {
    model.named_params().into_iter().map(|(_, t)| t.clone()).collect()
}

fn restore(model: &mut MtlModel<f64>, params: &[Tensor<f64>]) {
    for (dst, src) in model.params_mut().into_iter().zip(params) {
        dst.clone_from(src);
    }
}

/// Mean total loss over `batches` with dropout off.
fn evaluate(
    tape: &mut Tape<f64>,
    model: &MtlModel<f64>,
    batches: &[Batch<f64>],
    tau: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64, BacktestError> {
    let mut sum = 0.0;
    for b in batches {
        tape.clear();
        let bound = model.bind(tape);
        sum += total_loss(tape, model, &bound, b, tau, false, rng)?.total_value;
    }
    Ok(sum / batches.len() as f64)
}

/// Fits one config on a fold's train split with early stopping on the
/// validation split and returns the best-epoch model.
pub fn train_fold(job: &TrainJob) -> Result<TrainRunResult, BacktestError> {
    let started = Instant::now();
    let fold = job.fold;
    let cfg = job.config;
    let train = split(job, fold.train.start..fold.train_bar_limit(), fold.train_bar_limit(), job.settings.batch_dates);
    let val_lo = fold.train_bar_limit();
    let val = split(job, val_lo..fold.fit_bar_limit(), fold.fit_bar_limit(), usize::MAX);
    if train.batches.is_empty() {
        return Err(BacktestError::NoValidData(format!("fold {} has no usable training dates", fold.fold_index)));
    }
    if val.batches.is_empty() {
        return Err(BacktestError::NoValidData(format!("fold {} has no usable validation dates", fold.fold_index)));
    }
    let mut reach = train.reach;
    reach.merge(&val.reach);

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(job.seed, &[0]));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(job.seed, &[1]));
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(job.seed, &[2]));
    let mut model = MtlModel::new(cfg.clone(), job.data.panel.n_features(), &mut init_rng)?;
    let mut adam = {
        let p = params_of(&model);
        Adam::new(AdamConfig { lr: cfg.learning_rate, ..Default::default() }, &p.iter().collect::<Vec<_>>())
    };
    let mut tape = Tape::new();
    let initial = evaluate(&mut tape, &model, &val.batches, job.tau, &mut dropout_rng)?;

    let mut es = EarlyStopping::new(job.settings.patience);
    let mut best = params_of(&model);
    let mut curve = Vec::new();
    let mut epochs = Vec::new();
    let mut diverged = !initial.is_finite();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.batches.len()).collect();
    let aux_kinds = cfg.aux_tasks();

    for epoch in 1..=job.settings.max_epochs {
        if diverged {
            break;
        }
        if job.cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
            return Err(BacktestError::Cancelled);
        }
        order.shuffle(&mut order_rng);
        let (mut tl, mut ts) = (0.0, 0.0);
        let mut ta = vec![0.0; aux_kinds.len()];
        for &i in &order {
            tape.clear();
            let bound = model.bind(&mut tape);
            let terms = total_loss(&mut tape, &model, &bound, &train.batches[i], job.tau, true, &mut dropout_rng)?;
            if !terms.total_value.is_finite() {
                diverged = true;
                break;
            }
            tl += terms.total_value;
            ts += terms.sharpe;
            for (acc, (_, v)) in ta.iter_mut().zip(&terms.aux) {
                *acc += v;
            }
            tape.backward(terms.total)?;
            let mut grads: Vec<Tensor<f64>> = bound
                .vars
                .iter()
                .map(|&v| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
                .collect();
            let norm = clip_grad_norm(&mut grads, cfg.max_grad_norm);
            if !norm.is_finite() {
                diverged = true;
                break;
            }
            adam.step(&mut model.params_mut(), &grads);
        }
        if diverged {
            log::warn!("fold={} grid={} epoch={epoch} diverged", job.fold.fold_index, job.grid_index);
            break;
        }
        let n = order.len() as f64;
        let val_loss = evaluate(&mut tape, &model, &val.batches, job.tau, &mut dropout_rng)?;
        log::info!(
            "fold={} grid={} epoch={epoch} train_loss={:.6e} val_loss={:.6e}",
            job.fold.fold_index,
            job.grid_index,
            tl / n,
            val_loss
        );
        curve.push(val_loss);
        epochs.push(EpochLog {
            epoch,
            train_loss: tl / n,
            train_sharpe: ts / n,
            train_aux: aux_kinds.iter().zip(&ta).map(|(&k, &v)| (k, v / n)).collect(),
            val_loss,
        });
        if !val_loss.is_finite() {
            diverged = true;
            break;
        }
        match es.update(epoch, val_loss) {
            StopDecision::Improved => best = params_of(&model),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    restore(&mut model, &best);
    Ok(TrainRunResult {
        config: cfg.clone(),
        seed: job.seed,
        best_epoch: es.best_epoch(),
        initial_validation_loss: initial,
        validation_loss_curve: curve,
        validation_loss: if diverged { f64::INFINITY } else { es.best() },
        epochs,
        diverged,
        stopped_early,
        model,
        reach,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}
