//! Reverse-mode differentiation over rank-2 tensors.
//!
//! A [`Tape`] is the computation record: every primitive appends a node that
//! stores its output and the input ids it needs, so node ids are a
//! topological order by construction. [`Tape::backward`] walks the nodes in
//! exact reverse order and accumulates gradients additively at fan-out.

use std::collections::BTreeMap;
use std::rc::Rc;

use super::tensor::Tensor;
use super::{NnError, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Exp(Var),
    ConcatCols(Var, Var),
    RepeatRow(Var),
    /// argmax row per column, lowest index on ties
    MaxRows(Var, Vec<usize>),
    SumRows(Var),
    SumAll(Var),
    Transpose(Var),
    Reshape(Var),
    OuterAdd(Var, Var),
    MaskedSoftmaxRows(Var, Rc<Vec<bool>>),
    /// true where the first operand won
    MaxElem(Var, Var, Vec<bool>),
    LogSoftmaxRow(Var),
    Pick(Var, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

fn shape_err(op: &'static str, detail: String) -> NnError {
    NnError::ShapeMismatch { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Tracked parameter leaf; repeated lookups of one name share a node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var, NnError> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))?
            .clone();
        let v = self.push(t, Op::Leaf);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let ((n, k), (k2, m)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(shape_err("matmul", format!("[{n}x{k}] * [{k2}x{m}]")));
        }
        let out = self.value(a).matmul(self.value(b));
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `x + b` with the `1 x m` row `b` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, NnError> {
        let ((n, m), (br, bc)) = (self.dims(x), self.dims(b));
        if br != 1 || bc != m {
            return Err(shape_err("add_bias", format!("[{n}x{m}] + [{br}x{bc}]")));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += bias[i % m];
        }
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::new(ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu(x, slope))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        self.push(out, Op::Exp(x))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let ((n, p), (n2, q)) = (self.dims(a), self.dims(b));
        if n != n2 {
            return Err(shape_err("concat", format!("[{n}x{p}] | [{n2}x{q}]")));
        }
        let (ta, tb) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            data.extend_from_slice(ta.row(i));
            data.extend_from_slice(tb.row(i));
        }
        Ok(self.push(Tensor::from_rows(n, p + q, data), Op::ConcatCols(a, b)))
    }

    /// Stacks a `1 x m` row `n` times.
    pub fn repeat_row(&mut self, x: Var, n: usize) -> Result<Var, NnError> {
        let (r, m) = self.dims(x);
        if r != 1 {
            return Err(shape_err("repeat_row", format!("expected a row, got [{r}x{m}]")));
        }
        let row = self.value(x).data().to_vec();
        let data = row.iter().cycle().take(n * m).cloned().collect();
        Ok(self.push(Tensor::from_rows(n, m, data), Op::RepeatRow(x)))
    }

    /// Column-wise maximum over rows.
    pub fn max_rows(&mut self, x: Var) -> Result<Var, NnError> {
        let (n, m) = self.dims(x);
        if n == 0 {
            return Err(shape_err("max_pool_rows", "no rows".into()));
        }
        let t = self.value(x);
        let mut arg = vec![0usize; m];
        let mut out = t.row(0).to_vec();
        for i in 1..n {
            for (j, &v) in t.row(i).iter().enumerate() {
                if v > out[j] {
                    out[j] = v;
                    arg[j] = i;
                }
            }
        }
        Ok(self.push(Tensor::row_vector(out), Op::MaxRows(x, arg)))
    }

    pub fn sum_rows(&mut self, x: Var) -> Var {
        let (n, m) = self.dims(x);
        let t = self.value(x);
        let mut out = vec![0.0; m];
        for i in 0..n {
            for (o, v) in out.iter_mut().zip(t.row(i)) {
                *o += v;
            }
        }
        self.push(Tensor::row_vector(out), Op::SumRows(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(out, Op::Transpose(x))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var, NnError> {
        let t = self.value(x);
        if t.len() != rows * cols {
            return Err(shape_err("reshape", format!("{:?} -> [{rows}x{cols}]", t.shape())));
        }
        let out = Tensor::from_rows(rows, cols, t.data().to_vec());
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// `out[i][j] = u[i] + v[j]` for column vectors `u`, `v`.
    pub fn outer_add(&mut self, u: Var, v: Var) -> Result<Var, NnError> {
        let ((n, c1), (m, c2)) = (self.dims(u), self.dims(v));
        if c1 != 1 || c2 != 1 {
            return Err(shape_err("outer_add", format!("[{n}x{c1}] (+) [{m}x{c2}]")));
        }
        let (tu, tv) = (self.value(u).data(), self.value(v).data());
        let mut data = Vec::with_capacity(n * m);
        for &a in tu {
            for &b in tv {
                data.push(a + b);
            }
        }
        Ok(self.push(Tensor::from_rows(n, m, data), Op::OuterAdd(u, v)))
    }

    /// Row-wise softmax restricted to `mask`; masked-out entries are 0.
    /// Every row needs at least one unmasked entry.
    pub fn masked_softmax_rows(&mut self, x: Var, mask: Rc<Vec<bool>>) -> Result<Var, NnError> {
        let (n, m) = self.dims(x);
        if mask.len() != n * m {
            return Err(shape_err("masked_softmax", format!("mask len {} for [{n}x{m}]", mask.len())));
        }
        let t = self.value(x);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = t.row(i);
            let mrow = &mask[i * m..(i + 1) * m];
            let max = row
                .iter()
                .zip(mrow)
                .filter(|(_, &k)| k)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(shape_err("masked_softmax", format!("row {i} fully masked")));
            }
            let mut z = 0.0;
            for j in 0..m {
                if mrow[j] {
                    let e = (row[j] - max).exp();
                    out[i * m + j] = e;
                    z += e;
                }
            }
            for v in &mut out[i * m..(i + 1) * m] {
                *v /= z;
            }
        }
        Ok(self.push(Tensor::from_rows(n, m, out), Op::MaskedSoftmaxRows(x, mask)))
    }

    /// Elementwise maximum, ties to `a`.
    pub fn max_elem(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("max_elem", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let won: Vec<bool> = ta.data().iter().zip(tb.data()).map(|(x, y)| x >= y).collect();
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| if x >= y { x } else { y })
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data);
        Ok(self.push(out, Op::MaxElem(a, b, won)))
    }

    /// Log-softmax of a `1 x m` row, computed with max-subtraction.
    pub fn log_softmax_row(&mut self, x: Var) -> Result<Var, NnError> {
        let (r, m) = self.dims(x);
        if r != 1 {
            return Err(shape_err("log_softmax", format!("expected a row, got [{r}x{m}]")));
        }
        let row = self.value(x).data();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let out = Tensor::row_vector(row.iter().map(|v| v - lse).collect());
        Ok(self.push(out, Op::LogSoftmaxRow(x)))
    }

    /// Softmax of a row as `exp(log_softmax(x))`.
    pub fn softmax_row(&mut self, x: Var) -> Result<Var, NnError> {
        let lp = self.log_softmax_row(x)?;
        Ok(self.exp(lp))
    }

    /// Scalar element `index` of a flattened tensor.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var, NnError> {
        let t = self.value(x);
        if index >= t.len() {
            return Err(shape_err("pick", format!("index {index} of {:?}", t.shape())));
        }
        let v = t.data()[index];
        Ok(self.push(Tensor::scalar(v), Op::Pick(x, index)))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        if self.value(loss).len() != 1 {
            return Err(NnError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![1.0]));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut acc = |v: Var, t: Tensor| {
                assert!(v.0 < id, "computation record is not topologically ordered");
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    acc(*a, g.matmul(&tb.transpose()));
                    acc(*b, ta.transpose().matmul(&g));
                }
                Op::AddBias(x, b) => {
                    let m = g.cols();
                    let mut db = vec![0.0; m];
                    for i in 0..g.rows() {
                        for (d, v) in db.iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    acc(*b, Tensor::row_vector(db));
                    acc(*x, g);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.map(|v| -v));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga = hadamard(&g, tb);
                    let gb = hadamard(&g, ta);
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Scale(x, c) => acc(*x, g.map(|v| v * c)),
                Op::LeakyRelu(x, slope) => {
                    let tx = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(tx.data())
                        .map(|(&d, &v)| if v > 0.0 { d } else { d * slope })
                        .collect();
                    acc(*x, Tensor::new(g.shape().to_vec(), data));
                }
                Op::Exp(x) => acc(*x, hadamard(&g, &node.value)),
                Op::ConcatCols(a, b) => {
                    let p = self.value(*a).cols();
                    let q = self.value(*b).cols();
                    let n = g.rows();
                    let (mut da, mut db) = (Vec::with_capacity(n * p), Vec::with_capacity(n * q));
                    for i in 0..n {
                        let row = g.row(i);
                        da.extend_from_slice(&row[..p]);
                        db.extend_from_slice(&row[p..]);
                    }
                    acc(*a, Tensor::from_rows(n, p, da));
                    acc(*b, Tensor::from_rows(n, q, db));
                }
                Op::RepeatRow(x) => {
                    let m = g.cols();
                    let mut d = vec![0.0; m];
                    for i in 0..g.rows() {
                        for (o, v) in d.iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    acc(*x, Tensor::row_vector(d));
                }
                Op::MaxRows(x, arg) => {
                    let (n, m) = self.dims(*x);
                    let mut d = Tensor::zeros(n, m);
                    for (j, &i) in arg.iter().enumerate() {
                        d.set(i, j, g.data()[j]);
                    }
                    acc(*x, d);
                }
                Op::SumRows(x) => {
                    let (n, m) = self.dims(*x);
                    let data = g.data().iter().cycle().take(n * m).cloned().collect();
                    acc(*x, Tensor::from_rows(n, m, data));
                }
                Op::SumAll(x) => {
                    let t = self.value(*x);
                    acc(*x, Tensor::new(t.shape().to_vec(), vec![g.item(); t.len()]));
                }
                Op::Transpose(x) => acc(*x, g.transpose()),
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    acc(*x, Tensor::new(shape, g.into_data()));
                }
                Op::OuterAdd(u, v) => {
                    let (n, m) = (g.rows(), g.cols());
                    let mut du = vec![0.0; n];
                    let mut dv = vec![0.0; m];
                    for i in 0..n {
                        for j in 0..m {
                            let d = g.at(i, j);
                            du[i] += d;
                            dv[j] += d;
                        }
                    }
                    acc(*u, Tensor::from_rows(n, 1, du));
                    acc(*v, Tensor::from_rows(m, 1, dv));
                }
                Op::MaskedSoftmaxRows(x, mask) => {
                    let y = &node.value;
                    let (n, m) = (y.rows(), y.cols());
                    let mut d = vec![0.0; n * m];
                    for i in 0..n {
                        let dot: f64 = (0..m).map(|j| y.at(i, j) * g.at(i, j)).sum();
                        for j in 0..m {
                            if mask[i * m + j] {
                                d[i * m + j] = y.at(i, j) * (g.at(i, j) - dot);
                            }
                        }
                    }
                    acc(*x, Tensor::from_rows(n, m, d));
                }
                Op::MaxElem(a, b, won) => {
                    let shape = g.shape().to_vec();
                    let da = g.data().iter().zip(won).map(|(&d, &w)| if w { d } else { 0.0 }).collect();
                    let db = g.data().iter().zip(won).map(|(&d, &w)| if w { 0.0 } else { d }).collect();
                    acc(*a, Tensor::new(shape.clone(), da));
                    acc(*b, Tensor::new(shape, db));
                }
                Op::LogSoftmaxRow(x) => {
                    let total: f64 = g.sum();
                    let data = g
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(&d, &lp)| d - lp.exp() * total)
                        .collect();
                    acc(*x, Tensor::new(g.shape().to_vec(), data));
                }
                Op::Pick(x, index) => {
                    let t = self.value(*x);
                    let mut d = vec![0.0; t.len()];
                    d[*index] = g.item();
                    acc(*x, Tensor::new(t.shape().to_vec(), d));
                }
            }
        }

        Ok(Gradients { grads })
    }

    /// Named parameter gradients from a backward pass. Parameters registered
    /// on this tape but not reached by the loss get zeros; `store` names that
    /// never appeared on the tape get zeros as well.
    pub fn param_grads(&self, grads: &Gradients, store: &ParamStore) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, t) in store.iter() {
            let g = self
                .params
                .get(name)
                .and_then(|v| grads.get(*v).cloned())
                .unwrap_or_else(|| Tensor::new(t.shape().to_vec(), vec![0.0; t.len()]));
            out.insert(name.clone(), g);
        }
        out
    }
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Per-node gradients from [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}
