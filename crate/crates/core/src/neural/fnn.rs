//! Dense layers `y = act(x W + b)` with `W` stored `[in, out]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

use super::lstm::uniform;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::NeuralError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub fn apply<T: Real>(self, tape: &mut Tape<T>, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Softplus => tape.softplus(x),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Softplus => "softplus",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        [Activation::Identity, Activation::Tanh, Activation::Sigmoid, Activation::Softplus]
            .into_iter()
            .find(|a| a.tag() == tag)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FnnLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub activation: Activation,
}

/// A chain of dense layers; consecutive dimensions always match.
#[derive(Debug, Clone, PartialEq)]
pub struct FnnParams<T> {
    pub layers: Vec<FnnLayer<T>>,
}

impl<T: Real> FnnParams<T> {
    /// `dims = [in, h1, ..., out]`, one activation per layer.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self, NeuralError> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(NeuralError::InvalidArgument(format!(
                "{} dims need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            )));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, &activation)| FnnLayer {
                weight: uniform([d[0], d[1]], d[0], rng),
                bias: Tensor::zeros([1, d[1]]),
                activation,
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn input_size(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.rows())
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    pub fn n_scalars(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }
}

/// Runs bound layers `(weight, bias, activation)` on `x`, applying dropout
/// after every layer but the last.
pub fn fnn_forward<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    layers: &[(Var, Var, Activation)],
    mut x: Var,
    dropout: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var, NeuralError> {
    for (k, &(w, b, act)) in layers.iter().enumerate() {
        let xw = tape.matmul(x, w)?;
        let pre = tape.add(xw, b)?;
        x = act.apply(tape, pre);
        if k + 1 < layers.len() {
            x = tape.dropout(x, dropout, training, rng)?;
        }
    }
    Ok(x)
}
