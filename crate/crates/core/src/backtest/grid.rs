use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mtl_model::{
    ModelConfig, GRID_DROPOUT, GRID_HIDDEN, GRID_LAYERS, GRID_LR, GRID_MAX_GRAD_NORM,
};

use super::BacktestError;

/// Cartesian hyperparameter space. Every list must be nonempty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpace {
    pub n_lstm_layers: Vec<usize>,
    pub lstm_hidden: Vec<usize>,
    pub lstm_dropout: Vec<f64>,
    pub n_mlp_layers: Vec<usize>,
    pub mlp_hidden: Vec<usize>,
    pub mlp_dropout: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub max_grad_norm: Vec<f64>,
}

impl Default for GridSpace {
    fn default() -> Self {
        Self {
            n_lstm_layers: GRID_LAYERS.to_vec(),
            lstm_hidden: GRID_HIDDEN.to_vec(),
            lstm_dropout: GRID_DROPOUT.to_vec(),
            n_mlp_layers: GRID_LAYERS.to_vec(),
            mlp_hidden: GRID_HIDDEN.to_vec(),
            mlp_dropout: GRID_DROPOUT.to_vec(),
            learning_rate: GRID_LR.to_vec(),
            max_grad_norm: GRID_MAX_GRAD_NORM.to_vec(),
        }
    }
}

impl GridSpace {
    /// Grid holding only the values of `config`.
    pub fn single(config: &ModelConfig) -> Self {
        Self {
            n_lstm_layers: vec![config.n_lstm_layers],
            lstm_hidden: vec![config.lstm_hidden],
            lstm_dropout: vec![config.lstm_dropout],
            n_mlp_layers: vec![config.n_mlp_layers],
            mlp_hidden: vec![config.mlp_hidden],
            mlp_dropout: vec![config.mlp_dropout],
            learning_rate: vec![config.learning_rate],
            max_grad_norm: vec![config.max_grad_norm],
        }
    }

    fn radices(&self) -> [usize; 8] {
        [
            self.n_lstm_layers.len(),
            self.lstm_hidden.len(),
            self.lstm_dropout.len(),
            self.n_mlp_layers.len(),
            self.mlp_hidden.len(),
            self.mlp_dropout.len(),
            self.learning_rate.len(),
            self.max_grad_norm.len(),
        ]
    }

    pub fn len(&self) -> usize {
        self.radices().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Config at grid position `index`; the last field varies fastest.
    /// Fields outside the grid are copied from `base`.
    pub fn point(&self, index: usize, base: &ModelConfig) -> ModelConfig {
        let r = self.radices();
        let mut digit = [0usize; 8];
        let mut rest = index;
        for k in (0..8).rev() {
            digit[k] = rest % r[k];
            rest /= r[k];
        }
        ModelConfig {
            n_lstm_layers: self.n_lstm_layers[digit[0]],
            lstm_hidden: self.lstm_hidden[digit[1]],
            lstm_dropout: self.lstm_dropout[digit[2]],
            n_mlp_layers: self.n_mlp_layers[digit[3]],
            mlp_hidden: self.mlp_hidden[digit[4]],
            mlp_dropout: self.mlp_dropout[digit[5]],
            learning_rate: self.learning_rate[digit[6]],
            max_grad_norm: self.max_grad_norm[digit[7]],
            ..base.clone()
        }
    }
}

/// Which grid points get trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridBudget {
    Exhaustive,
    /// `k` distinct points drawn uniformly; `seed` defaults to one derived
    /// from the master seed.
    Random { k: usize, seed: Option<u64> },
}

impl Default for GridBudget {
    fn default() -> Self {
        GridBudget::Random { k: 64, seed: None }
    }
}

/// Grid positions to evaluate, ascending.
pub fn select_points(grid: &GridSpace, budget: &GridBudget, master_seed: u64) -> Result<Vec<usize>, BacktestError> {
    let n = grid.len();
    if n == 0 {
        return Err(BacktestError::InvalidSettings("grid has an empty axis".into()));
    }
    Ok(match budget {
        GridBudget::Exhaustive => (0..n).collect(),
        GridBudget::Random { k, .. } if *k >= n => (0..n).collect(),
        GridBudget::Random { k: 0, .. } => {
            return Err(BacktestError::InvalidSettings("random grid budget needs k >= 1".into()));
        }
        GridBudget::Random { k, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or_else(|| derive_seed(master_seed, &[GRID_STREAM])));
            let mut idx = rand::seq::index::sample(&mut rng, n, *k).into_vec();
            idx.sort_unstable();
            idx
        }
    })
}

const GRID_STREAM: u64 = 0x6772_6964;

/// Evaluated grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub grid_index: usize,
    pub config: ModelConfig,
    pub n_params: usize,
    pub validation_loss: f64,
}

/// Lowest validation loss; ties go to fewer parameters, then lower
/// learning rate, then earlier grid position. Diverged runs carry `+inf`.
pub fn pick_best(points: &[GridPoint]) -> Option<usize> {
    (0..points.len()).min_by(|&a, &b| {
        let (p, q) = (&points[a], &points[b]);
        p.validation_loss
            .total_cmp(&q.validation_loss)
            .then(p.n_params.cmp(&q.n_params))
            .then(p.config.learning_rate.partial_cmp(&q.config.learning_rate).unwrap_or(Ordering::Equal))
            .then(p.grid_index.cmp(&q.grid_index))
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for a stream identified by `path` under `master`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |h, &x| splitmix64(h ^ splitmix64(x)))
}
