//! Reverse-mode automatic differentiation over vector-valued nodes.
//!
//! A [`Tape`] records every primitive in evaluation order, so the node list
//! is already a topological order. [`Tape::backward`] walks it once in
//! reverse. Matrices only enter as parameters (through `matvec` and
//! `gather`), which keeps node values as flat vectors and avoids copying
//! weight matrices onto the tape.

use super::params::{ParamId, ParamStore};
use super::tensor::{self, Tensor};
use crate::error::{ensure, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatVec { w: ParamId, x: Var },
    Gather { table: ParamId, row: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Sum(Var),
    /// `-ln softmax(logits)[target]`; caches the probabilities.
    SoftmaxXent { logits: Var, target: usize, probs: Vec<f64> },
}

/// Recorded computation graph bound to a parameter store.
pub struct Tape<'p> {
    params: &'p ParamStore,
    values: Vec<Vec<f64>>,
    ops: Vec<Op>,
    param_nodes: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            values: Vec::new(),
            ops: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        let id = Var(self.values.len() as u32);
        self.values.push(value);
        self.ops.push(op);
        id
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.values[v.index()]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "scalar() on a node of length {}", val.len());
        val[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.values[v.index()].len()
    }

    /// A leaf whose gradient is reported by [`Gradients::input`].
    pub fn input(&mut self, value: &[f64]) -> Var {
        assert!(!value.is_empty(), "empty input node");
        self.push(value.to_vec(), Op::Input)
    }

    pub fn input_tensor(&mut self, value: &Tensor) -> Var {
        self.input(value.data())
    }

    /// A parameter as a vector-valued node (biases, label tables used whole).
    /// Repeated calls within one tape reuse the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.index()] {
            return v;
        }
        let value = self.params.get(id).data().to_vec();
        let v = self.push(value, Op::Param(id));
        self.param_nodes[id.index()] = Some(v);
        v
    }

    /// `W x` for a `rows × cols` parameter matrix.
    pub fn matvec(&mut self, w: ParamId, x: Var) -> Var {
        let wt = self.params.get(w);
        let (rows, cols) = wt.dims2();
        assert_eq!(
            cols,
            self.dim(x),
            "matvec {}: matrix has {cols} columns, vector has {}",
            self.params.name(w),
            self.dim(x)
        );
        let mut out = vec![0.0; rows];
        tensor::matvec(wt.data(), rows, cols, self.value(x), &mut out);
        self.push(out, Op::MatVec { w, x })
    }

    /// Row `row` of a parameter matrix (embedding lookup).
    pub fn gather(&mut self, table: ParamId, row: usize) -> Var {
        let t = self.params.get(table);
        let (rows, _) = t.dims2();
        assert!(row < rows, "gather row {row} out of {rows}");
        let value = t.row(row).to_vec();
        self.push(value, Op::Gather { table, row })
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            va.len(),
            vb.len(),
            "elementwise op on lengths {} and {}",
            va.len(),
            vb.len()
        );
        let out = va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect();
        self.push(out, op)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    /// `a + c` elementwise.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::Offset(a))
    }

    /// `1 - a` elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.offset(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, tensor::sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, tensor::softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::with_capacity(parts.iter().map(|&p| self.dim(p)).sum());
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        self.push(out, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= self.dim(x), "slice out of range");
        let out = self.value(x)[start..start + len].to_vec();
        self.push(out, Op::Slice { x, start })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(vec![s], Op::Sum(a))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let m = self.mul(a, b);
        self.sum(m)
    }

    /// Sum of several scalar nodes.
    pub fn add_all(&mut self, terms: &[Var]) -> Var {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.add(acc, t);
        }
        acc
    }

    /// Softmax cross-entropy against a single target index, `-ln p[target]`.
    pub fn softmax_xent(&mut self, logits: Var, target: usize) -> Var {
        let l = self.value(logits);
        assert!(target < l.len(), "target {target} out of {}", l.len());
        let logp = tensor::log_softmax(l);
        let loss = -logp[target];
        let probs = logp.into_iter().map(f64::exp).collect();
        self.push(
            vec![loss],
            Op::SoftmaxXent {
                logits,
                target,
                probs,
            },
        )
    }

    /// Gradients of a scalar node with respect to every parameter and input.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self.params);
        let inputs = self.backward_into(loss, &mut grads)?;
        grads.inputs = inputs;
        Ok(grads)
    }

    /// Accumulates parameter gradients of `loss` into `grads`; returns the
    /// adjoints of input nodes indexed by node id.
    pub fn backward_into(
        &self,
        loss: Var,
        grads: &mut Gradients,
    ) -> Result<Vec<Option<Vec<f64>>>> {
        ensure!(
            self.dim(loss) == 1,
            "backward needs a scalar loss, node has length {}",
            self.dim(loss)
        );
        ensure!(
            grads.params.len() == self.params.len(),
            "gradient buffer does not match the parameter store"
        );
        let n = loss.index() + 1;
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut inputs: Vec<Option<Vec<f64>>> = vec![None; n];
        adj[loss.index()] = vec![1.0];

        fn acc(adj: &mut [Vec<f64>], v: Var, len: usize) -> &mut Vec<f64> {
            let slot = &mut adj[v.index()];
            if slot.is_empty() {
                *slot = vec![0.0; len];
            }
            slot
        }

        for i in (0..n).rev() {
            if adj[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut adj[i]);
            let out = &self.values[i];
            match &self.ops[i] {
                Op::Input => inputs[i] = Some(g),
                Op::Param(id) => {
                    let dst = grads.params[id.index()].data_mut();
                    for (d, x) in dst.iter_mut().zip(&g) {
                        *d += x;
                    }
                }
                Op::MatVec { w, x } => {
                    let wt = self.params.get(*w);
                    let (rows, cols) = wt.dims2();
                    let xv = &self.values[x.index()];
                    let dw = grads.params[w.index()].data_mut();
                    for r in 0..rows {
                        let gr = g[r];
                        if gr != 0.0 {
                            let row = &mut dw[r * cols..(r + 1) * cols];
                            for (d, xc) in row.iter_mut().zip(xv) {
                                *d += gr * xc;
                            }
                        }
                    }
                    let dx = acc(&mut adj, *x, cols);
                    let wd = wt.data();
                    for r in 0..rows {
                        let gr = g[r];
                        if gr != 0.0 {
                            let row = &wd[r * cols..(r + 1) * cols];
                            for (d, wc) in dx.iter_mut().zip(row) {
                                *d += gr * wc;
                            }
                        }
                    }
                }
                Op::Gather { table, row } => {
                    let t = &mut grads.params[table.index()];
                    let (_, cols) = t.dims2();
                    let dst = &mut t.data_mut()[row * cols..(row + 1) * cols];
                    for (d, x) in dst.iter_mut().zip(&g) {
                        *d += x;
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut adj, *a, g.len()), &g, 1.0);
                    add_into(acc(&mut adj, *b, g.len()), &g, 1.0);
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut adj, *a, g.len()), &g, 1.0);
                    add_into(acc(&mut adj, *b, g.len()), &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let va = &self.values[a.index()];
                    let vb = &self.values[b.index()];
                    let da = acc(&mut adj, *a, g.len());
                    for k in 0..g.len() {
                        da[k] += g[k] * vb[k];
                    }
                    let db = acc(&mut adj, *b, g.len());
                    for k in 0..g.len() {
                        db[k] += g[k] * va[k];
                    }
                }
                Op::Div(a, b) => {
                    let vb = &self.values[b.index()];
                    let da = acc(&mut adj, *a, g.len());
                    for k in 0..g.len() {
                        da[k] += g[k] / vb[k];
                    }
                    let db = acc(&mut adj, *b, g.len());
                    for k in 0..g.len() {
                        db[k] -= g[k] * out[k] / vb[k];
                    }
                }
                Op::Scale(a, c) => add_into(acc(&mut adj, *a, g.len()), &g, *c),
                Op::Offset(a) => add_into(acc(&mut adj, *a, g.len()), &g, 1.0),
                Op::Sigmoid(a) => {
                    let da = acc(&mut adj, *a, g.len());
                    for k in 0..g.len() {
                        da[k] += g[k] * out[k] * (1.0 - out[k]);
                    }
                }
                Op::Tanh(a) => {
                    let da = acc(&mut adj, *a, g.len());
                    for k in 0..g.len() {
                        da[k] += g[k] * (1.0 - out[k] * out[k]);
                    }
                }
                Op::Softplus(a) => {
                    let va = &self.values[a.index()];
                    let da = acc(&mut adj, *a, g.len());
                    for k in 0..g.len() {
                        da[k] += g[k] * tensor::sigmoid(va[k]);
                    }
                }
                Op::Exp(a) => {
                    let da = acc(&mut adj, *a, g.len());
                    for k in 0..g.len() {
                        da[k] += g[k] * out[k];
                    }
                }
                Op::Ln(a) => {
                    let va = &self.values[a.index()];
                    let da = acc(&mut adj, *a, g.len());
                    for k in 0..g.len() {
                        da[k] += g[k] / va[k];
                    }
                }
                Op::Square(a) => {
                    let va = &self.values[a.index()];
                    let da = acc(&mut adj, *a, g.len());
                    for k in 0..g.len() {
                        da[k] += 2.0 * g[k] * va[k];
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.dim(*p);
                        add_into(acc(&mut adj, *p, len), &g[off..off + len], 1.0);
                        off += len;
                    }
                }
                Op::Slice { x, start } => {
                    let len = self.dim(*x);
                    let dx = acc(&mut adj, *x, len);
                    add_into(&mut dx[*start..start + g.len()], &g, 1.0);
                }
                Op::Sum(a) => {
                    let len = self.dim(*a);
                    let da = acc(&mut adj, *a, len);
                    da.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::SoftmaxXent {
                    logits,
                    target,
                    probs,
                } => {
                    let dl = acc(&mut adj, *logits, probs.len());
                    for (k, p) in probs.iter().enumerate() {
                        let y = if k == *target { 1.0 } else { 0.0 };
                        dl[k] += g[0] * (p - y);
                    }
                }
            }
        }
        Ok(inputs)
    }
}

fn add_into(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

/// Parameter gradients shaped like the store, plus input-node adjoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    params: Vec<Tensor>,
    inputs: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            params: store
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
            inputs: Vec::new(),
        }
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        &self.params[id.index()]
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Adjoint of an input node; zeros if the loss does not depend on it.
    pub fn input(&self, v: Var, len: usize) -> Vec<f64> {
        self.inputs
            .get(v.index())
            .and_then(|g| g.clone())
            .unwrap_or_else(|| vec![0.0; len])
    }

    pub fn global_norm(&self) -> f64 {
        self.params.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for t in &mut self.params {
            t.data_mut().iter_mut().for_each(|x| *x *= c);
        }
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }

    pub fn zero(&mut self) {
        self.params.iter_mut().for_each(|t| t.fill(0.0));
        self.inputs.clear();
    }
}
