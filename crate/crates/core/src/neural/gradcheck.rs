//! Central finite-difference check of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::NeuralError;

/// Largest disagreement found by [`check_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the tape gradient of `f` at `inputs` with central differences
/// of step `eps` over every input element.
///
/// `f` receives a fresh tape and one parameter handle per input and must
/// return a scalar loss. Gradients smaller than `floor` are compared in
/// absolute terms.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], eps: f64, floor: f64, f: F) -> Result<GradCheck, NeuralError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, NeuralError>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64, NeuralError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = inputs
        .iter()
        .zip(&vars)
        .map(|(t, &v)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut report = GradCheck { max_rel_error: 0.0, worst: (0, 0), analytic: 0.0, numeric: 0.0 };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for p in 0..inputs.len() {
        for k in 0..inputs[p].len() {
            let x0 = inputs[p].data()[k];
            work[p].data_mut()[k] = x0 + eps;
            let up = eval(&work)?;
            work[p].data_mut()[k] = x0 - eps;
            let down = eval(&work)?;
            work[p].data_mut()[k] = x0;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[p].data()[k];
            let err = relative_error(a, numeric, floor);
            if err > report.max_rel_error || !err.is_finite() {
                report = GradCheck { max_rel_error: err, worst: (p, k), analytic: a, numeric };
            }
        }
    }
    Ok(report)
}
