//! LSTM layers: a fused sequence op with hand-written backpropagation
//! through time, and a single-step cell assembled from tape primitives.
//!
//! Weight layout: `w_ih` is `[input, 4H]`, `w_hh` is `[H, 4H]`, `bias` is
//! `[1, 4H]`; the four gate blocks are ordered input, forget, cell, output.

use rand::Rng;

use crate::scalar::{lit, Real};

use super::tape::{Tape, Var};
use super::tensor::{matmul_into, Tensor};
use super::NeuralError;

pub(crate) struct LstmCache<T> {
    batch: usize,
    hidden: usize,
    /// Post-activation gates `[steps * batch, 4H]`.
    gates: Vec<T>,
    c: Vec<T>,
    tanh_c: Vec<T>,
    h: Vec<T>,
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn lstm_layer_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    u: &Tensor<T>,
    b: &Tensor<T>,
    batch: usize,
) -> (Tensor<T>, LstmCache<T>) {
    let rows = x.rows();
    let hidden = u.rows();
    let h4 = 4 * hidden;
    let steps = rows / batch;

    let mut gates = vec![T::zero(); rows * h4];
    matmul_into(x.data(), x.shape(), false, w.data(), w.shape(), false, &mut gates, false);
    for row in gates.chunks_exact_mut(h4) {
        for (g, &bias) in row.iter_mut().zip(b.data()) {
            *g += bias;
        }
    }
    let mut c = vec![T::zero(); rows * hidden];
    let mut tanh_c = vec![T::zero(); rows * hidden];
    let mut h = vec![T::zero(); rows * hidden];

    for s in 0..steps {
        let (r0, r1) = (s * batch, (s + 1) * batch);
        if s > 0 {
            let h_prev = &h[(r0 - batch) * hidden..r0 * hidden];
            matmul_into(h_prev, [batch, hidden], false, u.data(), u.shape(), false, &mut gates[r0 * h4..r1 * h4], true);
        }
        for r in r0..r1 {
            let g = &mut gates[r * h4..(r + 1) * h4];
            for j in 0..hidden {
                let i_g = sigmoid(g[j]);
                let f_g = sigmoid(g[hidden + j]);
                let c_g = g[2 * hidden + j].tanh();
                let o_g = sigmoid(g[3 * hidden + j]);
                g[j] = i_g;
                g[hidden + j] = f_g;
                g[2 * hidden + j] = c_g;
                g[3 * hidden + j] = o_g;
                let c_prev = if s > 0 { c[(r - batch) * hidden + j] } else { T::zero() };
                let ct = f_g * c_prev + i_g * c_g;
                let tc = ct.tanh();
                c[r * hidden + j] = ct;
                tanh_c[r * hidden + j] = tc;
                h[r * hidden + j] = o_g * tc;
            }
        }
    }
    let out = Tensor::new([rows, hidden], h.clone()).expect("shape");
    (out, LstmCache { batch, hidden, gates, c, tanh_c, h })
}

type LstmGrads<T> = (Option<Tensor<T>>, Tensor<T>, Tensor<T>, Tensor<T>);

/// Gradients with respect to `(x, w_ih, w_hh, bias)` given the upstream
/// gradient of the hidden-state sequence.
pub(crate) fn lstm_layer_backward<T: Real>(
    dh_seq: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    u: &Tensor<T>,
    cache: &LstmCache<T>,
    want_dx: bool,
) -> LstmGrads<T> {
    let LstmCache { batch, hidden, gates, c, tanh_c, h } = cache;
    let (batch, hidden) = (*batch, *hidden);
    let h4 = 4 * hidden;
    let rows = x.rows();
    let steps = rows / batch;

    let mut dg = vec![T::zero(); rows * h4];
    let mut du = Tensor::zeros(u.shape());
    let mut dh_next = vec![T::zero(); batch * hidden];
    let mut dc_next = vec![T::zero(); batch * hidden];

    for s in (0..steps).rev() {
        let (r0, r1) = (s * batch, (s + 1) * batch);
        for r in r0..r1 {
            let g = &gates[r * h4..(r + 1) * h4];
            let out = &mut dg[r * h4..(r + 1) * h4];
            let k = (r - r0) * hidden;
            for j in 0..hidden {
                let (i_g, f_g, c_g, o_g) = (g[j], g[hidden + j], g[2 * hidden + j], g[3 * hidden + j]);
                let tc = tanh_c[r * hidden + j];
                let c_prev = if s > 0 { c[(r - batch) * hidden + j] } else { T::zero() };
                let dh = dh_seq.data()[r * hidden + j] + dh_next[k + j];
                let d_o = dh * tc;
                let dc = dc_next[k + j] + dh * o_g * (T::one() - tc * tc);
                out[j] = dc * c_g * i_g * (T::one() - i_g);
                out[hidden + j] = dc * c_prev * f_g * (T::one() - f_g);
                out[2 * hidden + j] = dc * i_g * (T::one() - c_g * c_g);
                out[3 * hidden + j] = d_o * o_g * (T::one() - o_g);
                dc_next[k + j] = dc * f_g;
            }
        }
        let dg_s = &dg[r0 * h4..r1 * h4];
        if s > 0 {
            let h_prev = &h[(r0 - batch) * hidden..r0 * hidden];
            matmul_into(h_prev, [batch, hidden], true, dg_s, [batch, h4], false, du.data_mut(), true);
            matmul_into(dg_s, [batch, h4], false, u.data(), u.shape(), true, &mut dh_next, false);
        }
    }

    let mut dw = Tensor::zeros(w.shape());
    matmul_into(x.data(), x.shape(), true, &dg, [rows, h4], false, dw.data_mut(), false);
    let mut db = Tensor::zeros([1, h4]);
    for row in dg.chunks_exact(h4) {
        for (o, &v) in db.data_mut().iter_mut().zip(row) {
            *o += v;
        }
    }
    let dx = want_dx.then(|| {
        let mut dx = Tensor::zeros(x.shape());
        matmul_into(&dg, [rows, h4], false, w.data(), w.shape(), true, dx.data_mut(), false);
        dx
    });
    (dx, dw, du, db)
}

/// Learnable weights of one LSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams<T> {
    pub w_ih: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> LstmCellParams<T> {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero bias with
    /// the forget block at 1.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut bias = Tensor::zeros([1, 4 * hidden]);
        for j in hidden..2 * hidden {
            bias.data_mut()[j] = T::one();
        }
        Self {
            w_ih: uniform([input, 4 * hidden], input, rng),
            w_hh: uniform([hidden, 4 * hidden], hidden, rng),
            bias,
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor::zeros([input, 4 * hidden]),
            w_hh: Tensor::zeros([hidden, 4 * hidden]),
            bias: Tensor::zeros([1, 4 * hidden]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.rows()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.rows()
    }
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` matrix.
pub fn uniform<T: Real, R: Rng + ?Sized>(shape: [usize; 2], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..shape[0] * shape[1]).map(|_| lit(rng.random_range(-bound..=bound))).collect();
    Tensor::new(shape, data).expect("shape")
}

/// One recurrence step from primitives:
/// `c_t = f * c_prev + i * g`, `h_t = o * tanh(c_t)`.
///
/// `x` is `[B, input]`, `h_prev`/`c_prev` are `[B, H]`.
pub fn lstm_step<T: Real>(
    tape: &mut Tape<T>,
    w_ih: Var,
    w_hh: Var,
    bias: Var,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var), NeuralError> {
    let hidden = tape.shape(w_hh)[0];
    let xw = tape.matmul(x, w_ih)?;
    let hu = tape.matmul(h_prev, w_hh)?;
    let pre = tape.add(xw, hu)?;
    let pre = tape.add(pre, bias)?;
    let block = |tape: &mut Tape<T>, k: usize| tape.slice_cols(pre, k * hidden, hidden);
    let i_pre = block(tape, 0)?;
    let f_pre = block(tape, 1)?;
    let g_pre = block(tape, 2)?;
    let o_pre = block(tape, 3)?;
    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let g = tape.tanh(g_pre);
    let o = tape.sigmoid(o_pre);
    let fc = tape.mul(f, c_prev)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}
