//! Reverse-mode tape over [`Tensor`] values.

use rand::Rng;

use crate::scalar::{lit, Real};

use super::lstm::{lstm_layer_backward, lstm_layer_forward, LstmCache};
use super::tensor::{matmul_into, Tensor};
use super::NeuralError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Abs(Var),
    Clamp(Var, T, T),
    Sum(Var),
    Mean(Var),
    SampleStd(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Reshape(Var),
    SelectRows(Var, Vec<usize>),
    Dropout(Var, Vec<T>),
    Lstm { x: Var, w: Var, u: Var, b: Var, cache: Box<LstmCache<T>> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations in execution order, so inputs always precede outputs.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: [usize; 2], b: [usize; 2]) -> NeuralError {
    NeuralError::ShapeMismatch { op, detail: format!("{a:?} vs {b:?}") }
}

/// Output shape of an elementwise op where each dimension matches or is 1.
fn broadcast_shape(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Result<[usize; 2], NeuralError> {
    let mut out = [0; 2];
    for d in 0..2 {
        out[d] = match (a[d], b[d]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(mismatch(op, a, b)),
        };
    }
    Ok(out)
}

#[inline]
fn bidx(shape: [usize; 2], r: usize, c: usize) -> usize {
    let rr = if shape[0] == 1 { 0 } else { r };
    let cc = if shape[1] == 1 { 0 } else { c };
    rr * shape[1] + cc
}

fn zip_broadcast<T: Real>(a: &Tensor<T>, b: &Tensor<T>, out_shape: [usize; 2], f: impl Fn(T, T) -> T) -> Tensor<T> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(out_shape, data).expect("shape");
    }
    let (sa, sb) = (a.shape(), b.shape());
    let mut data = Vec::with_capacity(out_shape[0] * out_shape[1]);
    for r in 0..out_shape[0] {
        for c in 0..out_shape[1] {
            data.push(f(a.data()[bidx(sa, r, c)], b.data()[bidx(sb, r, c)]));
        }
    }
    Tensor::new(out_shape, data).expect("shape")
}

/// Sums a broadcast-shaped gradient back into `target` shape.
fn reduce_into<T: Real>(acc: &mut Tensor<T>, g: &Tensor<T>, f: impl Fn(usize, usize, T) -> T) {
    let ts = acc.shape();
    let gs = g.shape();
    let out = acc.data_mut();
    if ts == gs {
        for (i, (o, &gv)) in out.iter_mut().zip(g.data()).enumerate() {
            *o += f(i / gs[1], i % gs[1], gv);
        }
        return;
    }
    for r in 0..gs[0] {
        for c in 0..gs[1] {
            out[bidx(ts, r, c)] += f(r, c, g.data()[r * gs[1] + c]);
        }
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    // ln(1 + e^x) without overflow
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn sample_std<T: Real>(x: &[T]) -> (T, T) {
    let n: T = lit(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let ss: T = x.iter().map(|&v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - T::one())).sqrt())
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    /// Drops every recorded node, keeping the allocation.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of a leaf after [`Tape::backward`]; `None` if the leaf is a
    /// constant or was not reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let mut out = Tensor::zeros([sa[0], sb[1]]);
        matmul_into(self.value(a).data(), sa, false, self.value(b).data(), sb, false, out.data_mut(), false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var, NeuralError> {
        let shape = broadcast_shape(name, self.shape(a), self.shape(b))?;
        let out = zip_broadcast(self.value(a), self.value(b), shape, f);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    /// Elementwise sum with broadcasting over unit dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let out = self.value(a).map(|x| x * k);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, k), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn add_scalar(&mut self, a: Var, k: T) -> Var {
        let out = self.value(a).map(|x| x + k);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    /// `|x|`, with subgradient 0 at 0.
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    /// Clamps into `[lo, hi]`; no gradient flows through clamped entries.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.unary(a, |x| x.max(lo).min(hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NeuralError> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(NeuralError::ShapeMismatch { op: "mean", detail: "empty tensor".into() });
        }
        let out = Tensor::scalar(v.sum() / lit(v.len() as f64));
        let rg = self.rg(a);
        Ok(self.push(out, Op::Mean(a), rg))
    }

    /// Sample standard deviation (denominator `n - 1`) of all entries.
    pub fn sample_std(&mut self, a: Var) -> Result<Var, NeuralError> {
        let v = self.value(a);
        if v.len() < 2 {
            return Err(NeuralError::ShapeMismatch { op: "sample_std", detail: format!("{} values", v.len()) });
        }
        let out = Tensor::scalar(sample_std(v.data()).1);
        let rg = self.rg(a);
        Ok(self.push(out, Op::SampleStd(a), rg))
    }

    /// Stacks row blocks with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NeuralError> {
        let first = parts.first().ok_or(NeuralError::ShapeMismatch { op: "concat_rows", detail: "no inputs".into() })?;
        let cols = self.shape(*first)[1];
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[1] != cols {
                return Err(mismatch("concat_rows", self.shape(*first), s));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new([rows, cols], data)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Places column blocks with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NeuralError> {
        let first = parts.first().ok_or(NeuralError::ShapeMismatch { op: "concat_cols", detail: "no inputs".into() })?;
        let rows = self.shape(*first)[0];
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[0] != rows {
                return Err(mismatch("concat_cols", self.shape(*first), s));
            }
            cols += s[1];
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let v = self.value(p);
                data.extend_from_slice(&v.data()[r * v.cols()..(r + 1) * v.cols()]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new([rows, cols], data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NeuralError> {
        let s = self.shape(a);
        if start + len > s[0] {
            return Err(NeuralError::ShapeMismatch { op: "slice_rows", detail: format!("{start}+{len} of {s:?}") });
        }
        let data = self.value(a).data()[start * s[1]..(start + len) * s[1]].to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::new([len, s[1]], data)?, Op::SliceRows(a, start), rg))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NeuralError> {
        let s = self.shape(a);
        if start + len > s[1] {
            return Err(NeuralError::ShapeMismatch { op: "slice_cols", detail: format!("{start}+{len} of {s:?}") });
        }
        let v = self.value(a).data();
        let mut data = Vec::with_capacity(s[0] * len);
        for r in 0..s[0] {
            data.extend_from_slice(&v[r * s[1] + start..r * s[1] + start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new([s[0], len], data)?, Op::SliceCols(a, start), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: [usize; 2]) -> Result<Var, NeuralError> {
        let s = self.shape(a);
        if s[0] * s[1] != shape[0] * shape[1] {
            return Err(mismatch("reshape", s, shape));
        }
        let out = self.value(a).clone().reshaped(shape);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Gathers rows by index; repeated indices accumulate in the backward pass.
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, NeuralError> {
        let s = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= s[0]) {
            return Err(NeuralError::ShapeMismatch { op: "select_rows", detail: format!("row {bad} of {s:?}") });
        }
        let v = self.value(a).data();
        let mut data = Vec::with_capacity(idx.len() * s[1]);
        for &i in idx {
            data.extend_from_slice(&v[i * s[1]..(i + 1) * s[1]]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new([idx.len(), s[1]], data)?, Op::SelectRows(a, idx.to_vec()), rg))
    }

    /// Inverted dropout: identity unless `training` is set and `p > 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, training: bool, rng: &mut R) -> Result<Var, NeuralError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NeuralError::InvalidArgument(format!("dropout rate {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep: T = lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let mut out = self.value(a).clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::Dropout(a, mask), rg))
    }

    /// One LSTM layer over a whole sequence.
    ///
    /// `x` is time-major `[steps * batch, input]`; `w` is `[input, 4H]`,
    /// `u` is `[H, 4H]`, `b` is `[1, 4H]`, gate blocks ordered
    /// input, forget, cell, output. Returns the hidden states
    /// `[steps * batch, H]` starting from zero state.
    pub fn lstm_layer(&mut self, x: Var, w: Var, u: Var, b: Var, batch: usize) -> Result<Var, NeuralError> {
        let (sx, sw, su, sb) = (self.shape(x), self.shape(w), self.shape(u), self.shape(b));
        let h = su[0];
        if sw[0] != sx[1] || sw[1] != 4 * h || su[1] != 4 * h || sb != [1, 4 * h] {
            return Err(NeuralError::ShapeMismatch {
                op: "lstm_layer",
                detail: format!("x {sx:?}, w_ih {sw:?}, w_hh {su:?}, bias {sb:?}"),
            });
        }
        if batch == 0 || sx[0] % batch != 0 {
            return Err(NeuralError::ShapeMismatch { op: "lstm_layer", detail: format!("{} rows, batch {batch}", sx[0]) });
        }
        let (out, cache) = lstm_layer_forward(self.value(x), self.value(w), self.value(u), self.value(b), batch);
        let rg = self.rg(x) || self.rg(w) || self.rg(u) || self.rg(b);
        Ok(self.push(out, Op::Lstm { x, w, u, b, cache: Box::new(cache) }, rg))
    }

    /// Populates the gradient of `loss` with respect to every parameter
    /// leaf reachable from it.
    pub fn backward(&mut self, loss: Var) -> Result<(), NeuralError> {
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(NeuralError::NonScalarLoss(shape));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::scalar(T::one()));
        let nodes = &self.nodes;
        for i in (0..=loss.0).rev() {
            if matches!(nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            backprop(nodes, &mut self.grads, i, &g);
        }
        Ok(())
    }
}

fn acc<'a, T: Real>(nodes: &[Node<T>], grads: &'a mut [Option<Tensor<T>>], v: Var) -> Option<&'a mut Tensor<T>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(node.value.shape())))
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (o, &x) in dst.iter_mut().zip(src) {
        *o += x;
    }
}

fn backprop<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Tensor<T>>], i: usize, g: &Tensor<T>) {
    let val = |v: &Var| &nodes[v.0].value;
    match &nodes[i].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(a), val(b));
            if let Some(ga) = acc(nodes, grads, *a) {
                matmul_into(g.data(), g.shape(), false, bv.data(), bv.shape(), true, ga.data_mut(), true);
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                matmul_into(av.data(), av.shape(), true, g.data(), g.shape(), false, gb.data_mut(), true);
            }
        }
        Op::Add(a, b) => {
            if let Some(ga) = acc(nodes, grads, *a) {
                reduce_into(ga, g, |_, _, x| x);
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                reduce_into(gb, g, |_, _, x| x);
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = acc(nodes, grads, *a) {
                reduce_into(ga, g, |_, _, x| x);
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                reduce_into(gb, g, |_, _, x| -x);
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(a), val(b));
            let (sa, sb) = (av.shape(), bv.shape());
            if let Some(ga) = acc(nodes, grads, *a) {
                reduce_into(ga, g, |r, c, x| x * bv.data()[bidx(sb, r, c)]);
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                reduce_into(gb, g, |r, c, x| x * av.data()[bidx(sa, r, c)]);
            }
        }
        Op::Div(a, b) => {
            let (av, bv) = (val(a), val(b));
            let (sa, sb) = (av.shape(), bv.shape());
            if let Some(ga) = acc(nodes, grads, *a) {
                reduce_into(ga, g, |r, c, x| x / bv.data()[bidx(sb, r, c)]);
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                reduce_into(gb, g, |r, c, x| {
                    let q = bv.data()[bidx(sb, r, c)];
                    -x * av.data()[bidx(sa, r, c)] / (q * q)
                });
            }
        }
        Op::Scale(a, k) => {
            if let Some(ga) = acc(nodes, grads, *a) {
                reduce_into(ga, g, |_, _, x| x * *k);
            }
        }
        Op::AddScalar(a) | Op::Reshape(a) => {
            if let Some(ga) = acc(nodes, grads, *a) {
                add_into(ga.data_mut(), g.data());
            }
        }
        Op::Tanh(a) | Op::Sigmoid(a) | Op::Softplus(a) => {
            let y = nodes[i].value.data();
            let x = val(a).data();
            let op = &nodes[i].op;
            if let Some(ga) = acc(nodes, grads, *a) {
                for (k, o) in ga.data_mut().iter_mut().enumerate() {
                    let d = match op {
                        Op::Tanh(_) => T::one() - y[k] * y[k],
                        Op::Sigmoid(_) => y[k] * (T::one() - y[k]),
                        _ => sigmoid(x[k]),
                    };
                    *o += g.data()[k] * d;
                }
            }
        }
        Op::Abs(a) => {
            let x = val(a).data();
            if let Some(ga) = acc(nodes, grads, *a) {
                for (k, o) in ga.data_mut().iter_mut().enumerate() {
                    let d = if x[k] > T::zero() {
                        T::one()
                    } else if x[k] < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    *o += g.data()[k] * d;
                }
            }
        }
        Op::Clamp(a, lo, hi) => {
            let x = val(a).data();
            if let Some(ga) = acc(nodes, grads, *a) {
                for (k, o) in ga.data_mut().iter_mut().enumerate() {
                    if x[k] >= *lo && x[k] <= *hi {
                        *o += g.data()[k];
                    }
                }
            }
        }
        Op::Sum(a) | Op::Mean(a) => {
            let n = val(a).len();
            let gv = if matches!(nodes[i].op, Op::Mean(_)) { g.item() / lit(n as f64) } else { g.item() };
            if let Some(ga) = acc(nodes, grads, *a) {
                for o in ga.data_mut() {
                    *o += gv;
                }
            }
        }
        Op::SampleStd(a) => {
            let sd = nodes[i].value.item();
            let x = val(a).data();
            let (mean, _) = sample_std(x);
            let n1: T = lit(x.len() as f64 - 1.0);
            let gv = g.item();
            if let Some(ga) = acc(nodes, grads, *a) {
                if sd > T::zero() {
                    for (o, &xk) in ga.data_mut().iter_mut().zip(x) {
                        *o += gv * (xk - mean) / (n1 * sd);
                    }
                }
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for p in parts {
                let n = val(p).len();
                if let Some(gp) = acc(nodes, grads, *p) {
                    add_into(gp.data_mut(), &g.data()[offset..offset + n]);
                }
                offset += n;
            }
        }
        Op::ConcatCols(parts) => {
            let total = g.cols();
            let mut offset = 0;
            for p in parts {
                let [rows, cols] = val(p).shape();
                if let Some(gp) = acc(nodes, grads, *p) {
                    let gd = gp.data_mut();
                    for r in 0..rows {
                        add_into(&mut gd[r * cols..(r + 1) * cols], &g.data()[r * total + offset..r * total + offset + cols]);
                    }
                }
                offset += cols;
            }
        }
        Op::SliceRows(a, start) => {
            let cols = g.cols();
            if let Some(ga) = acc(nodes, grads, *a) {
                add_into(&mut ga.data_mut()[start * cols..start * cols + g.len()], g.data());
            }
        }
        Op::SliceCols(a, start) => {
            let [rows, len] = g.shape();
            if let Some(ga) = acc(nodes, grads, *a) {
                let cols = ga.cols();
                let gd = ga.data_mut();
                for r in 0..rows {
                    add_into(&mut gd[r * cols + start..r * cols + start + len], &g.data()[r * len..(r + 1) * len]);
                }
            }
        }
        Op::SelectRows(a, idx) => {
            let cols = g.cols();
            if let Some(ga) = acc(nodes, grads, *a) {
                let gd = ga.data_mut();
                for (k, &row) in idx.iter().enumerate() {
                    add_into(&mut gd[row * cols..(row + 1) * cols], &g.data()[k * cols..(k + 1) * cols]);
                }
            }
        }
        Op::Dropout(a, mask) => {
            if let Some(ga) = acc(nodes, grads, *a) {
                for ((o, &x), &m) in ga.data_mut().iter_mut().zip(g.data()).zip(mask) {
                    *o += x * m;
                }
            }
        }
        Op::Lstm { x, w, u, b, cache } => {
            let want_dx = nodes[x.0].requires_grad;
            let (dx, dw, du, db) = lstm_layer_backward(g, val(x), val(w), val(u), cache, want_dx);
            for (v, d) in [(*x, dx), (*w, Some(dw)), (*u, Some(du)), (*b, Some(db))] {
                if let (Some(d), Some(gv)) = (d, acc(nodes, grads, v)) {
                    add_into(gv.data_mut(), d.data());
                }
            }
        }
    }
}
