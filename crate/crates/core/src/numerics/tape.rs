//! Tensor-level tape. Each operation appends a node holding its forward
//! value; [`Tape::backward`] walks the nodes in reverse and accumulates
//! adjoints. Shape errors in forward operations panic with both shapes,
//! since they indicate a bug in the calling model code.

use super::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    ParamRow { param: ParamId, row: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Dot(Var, Var),
    MatVec(Var, Var),
    VecMat(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Softplus(Var),
    Sqrt(Var),
    Recip(Var),
    Sum(Var),
    Mean(Var),
    SumNormalize { input: Var, degenerate: bool },
    Conv1d { input: Var, filters: Var, bias: Var },
    MaxPool { input: Var, argmax: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Whole-parameter nodes, one per parameter for the tape's lifetime.
    params: Vec<(ParamId, Var)>,
}

fn check_same(op: &str, a: &[usize], b: &[usize]) {
    assert!(a == b, "shape mismatch in {op}: {a:?} vs {b:?}");
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node { value, shape, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let n = &self.nodes[x.0];
        let value = n.value.iter().map(|&v| f(v)).collect();
        let (shape, rg) = (n.shape.clone(), n.requires_grad);
        self.push(value, shape, op, rg)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        assert_eq!(n.value.len(), 1, "expected a scalar, got shape {:?}", n.shape);
        n.value[0]
    }

    /// Input that gradients are reported for.
    pub fn var(&mut self, t: Tensor) -> Var {
        self.push(t.data, t.shape, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.data, t.shape, Op::Leaf, false)
    }

    /// Whole parameter as a node. Repeated calls return the same node, so
    /// a tape must only ever see one parameter store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let t = &store.get(id).value;
        let v = self.push(t.data.clone(), t.shape.clone(), Op::Param(id), true);
        self.params.push((id, v));
        v
    }

    /// Embedding lookup: one row of a rank-2 parameter.
    pub fn param_row(&mut self, store: &ParamStore, id: ParamId, row: usize) -> Var {
        let t = &store.get(id).value;
        assert_eq!(t.shape.len(), 2, "row lookup needs a matrix, got {:?}", t.shape);
        assert!(row < t.shape[0], "row {row} out of range for shape {:?}", t.shape);
        let data = store.row(id, row).to_vec();
        let cols = t.shape[1];
        self.push(data, vec![cols], Op::ParamRow { param: id, row }, true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        check_same("add", self.shape(a), self.shape(b));
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.rg(&[a, b]);
        self.push(value, self.shape(a).to_vec(), Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        check_same("sub", self.shape(a), self.shape(b));
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let rg = self.rg(&[a, b]);
        self.push(value, self.shape(a).to_vec(), Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        check_same("mul", self.shape(a), self.shape(b));
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.rg(&[a, b]);
        self.push(value, self.shape(a).to_vec(), Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Offset(a), |x| x + c)
    }

    /// Joins vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut value = Vec::new();
        for &p in parts {
            assert_eq!(self.shape(p).len(), 1, "concat expects vectors, got {:?}", self.shape(p));
            value.extend_from_slice(self.value(p));
        }
        let n = value.len();
        let rg = self.rg(parts);
        self.push(value, vec![n], Op::Concat(parts.to_vec()), rg)
    }

    /// Stacks equal-length vectors into the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack of zero rows");
        let width = self.shape(rows[0]).to_vec();
        let mut value = Vec::new();
        for &r in rows {
            check_same("stack", &width, self.shape(r));
            value.extend_from_slice(self.value(r));
        }
        let rg = self.rg(rows);
        self.push(value, vec![rows.len(), width[0]], Op::Stack(rows.to_vec()), rg)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        check_same("dot", self.shape(a), self.shape(b));
        let d = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        let rg = self.rg(&[a, b]);
        self.push(vec![d], vec![1], Op::Dot(a, b), rg)
    }

    /// `A x` for `A: [r, c]`, `x: [c]`.
    pub fn matvec(&mut self, a: Var, x: Var) -> Var {
        let (sa, sx) = (self.shape(a).to_vec(), self.shape(x).to_vec());
        assert!(sa.len() == 2 && sx == [sa[1]], "shape mismatch in matvec: {sa:?} vs {sx:?}");
        let (r, c) = (sa[0], sa[1]);
        let (av, xv) = (self.value(a), self.value(x));
        let value = (0..r)
            .map(|i| av[i * c..(i + 1) * c].iter().zip(xv).map(|(p, q)| p * q).sum())
            .collect();
        let rg = self.rg(&[a, x]);
        self.push(value, vec![r], Op::MatVec(a, x), rg)
    }

    /// `x^T A` for `x: [r]`, `A: [r, c]`.
    pub fn vecmat(&mut self, x: Var, a: Var) -> Var {
        let (sx, sa) = (self.shape(x).to_vec(), self.shape(a).to_vec());
        assert!(sa.len() == 2 && sx == [sa[0]], "shape mismatch in vecmat: {sx:?} vs {sa:?}");
        let (r, c) = (sa[0], sa[1]);
        let (xv, av) = (self.value(x), self.value(a));
        let mut value = vec![0.0; c];
        for i in 0..r {
            for (out, &aij) in value.iter_mut().zip(&av[i * c..(i + 1) * c]) {
                *out += xv[i] * aij;
            }
        }
        let rg = self.rg(&[x, a]);
        self.push(value, vec![c], Op::VecMat(x, a), rg)
    }

    /// Subgradient 0 at 0.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, Op::Recip(a), |x| 1.0 / x)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(&[a]);
        self.push(vec![s], vec![1], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[a]);
        self.push(vec![m], vec![1], Op::Mean(a), rg)
    }

    /// `x / sum(x)`. A zero sum yields the uniform distribution.
    pub fn sum_normalize(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s: f64 = v.iter().sum();
        let degenerate = s == 0.0;
        let value = if degenerate {
            vec![1.0 / v.len() as f64; v.len()]
        } else {
            v.iter().map(|x| x / s).collect()
        };
        let rg = self.rg(&[a]);
        self.push(
            value,
            self.shape(a).to_vec(),
            Op::SumNormalize { input: a, degenerate },
            rg,
        )
    }

    /// Convolution along the sequence axis with zero padding, so the output
    /// has one position per input position.
    ///
    /// `input: [n, c]`, `filters: [m, w, c]`, `bias: [m]` gives `[n, m]`.
    /// Output position `p` sees inputs `p - (w-1)/2 ..= p + w/2`.
    pub fn conv1d(&mut self, input: Var, filters: Var, bias: Var) -> Var {
        let (si, sf, sb) = (
            self.shape(input).to_vec(),
            self.shape(filters).to_vec(),
            self.shape(bias).to_vec(),
        );
        assert!(
            si.len() == 2 && sf.len() == 3 && si[1] == sf[2],
            "shape mismatch in conv1d: input {si:?} vs filters {sf:?}"
        );
        assert!(sb == [sf[0]], "shape mismatch in conv1d: filters {sf:?} vs bias {sb:?}");
        let (n, c) = (si[0], si[1]);
        let (m, w) = (sf[0], sf[1]);
        let pad = (w - 1) / 2;
        let (x, k, b) = (self.value(input), self.value(filters), self.value(bias));
        let mut out = vec![0.0; n * m];
        for p in 0..n {
            for j in 0..m {
                let mut acc = b[j];
                for t in 0..w {
                    let Some(q) = (p + t).checked_sub(pad).filter(|&q| q < n) else {
                        continue;
                    };
                    let krow = &k[(j * w + t) * c..(j * w + t + 1) * c];
                    let xrow = &x[q * c..(q + 1) * c];
                    acc += krow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                }
                out[p * m + j] = acc;
            }
        }
        let rg = self.rg(&[input, filters, bias]);
        self.push(out, vec![n, m], Op::Conv1d { input, filters, bias }, rg)
    }

    /// Column-wise max over the rows of `[n, m]`; ties go to the first row.
    pub fn maxpool(&mut self, input: Var) -> Var {
        let s = self.shape(input).to_vec();
        assert!(s.len() == 2 && s[0] > 0, "maxpool expects a non-empty matrix, got {s:?}");
        let (n, m) = (s[0], s[1]);
        let x = self.value(input);
        let mut argmax = vec![0usize; m];
        let mut value = x[..m].to_vec();
        for p in 1..n {
            for j in 0..m {
                if x[p * m + j] > value[j] {
                    value[j] = x[p * m + j];
                    argmax[j] = p;
                }
            }
        }
        let rg = self.rg(&[input]);
        self.push(value, vec![m], Op::MaxPool { input, argmax }, rg)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Adjoints> {
        let n = &self.nodes[loss.0];
        if n.value.len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                left: n.shape.clone(),
                right: vec![1],
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            self.propagate(node, &g, &mut adj);
            adj[idx] = Some(g);
        }
        Ok(Adjoints { adj })
    }

    fn propagate(&self, node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.as_slice();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if wants(v) {
                let len = self.nodes[v.0].value.len();
                f(adj[v.0].get_or_insert_with(|| vec![0.0; len]));
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) | Op::ParamRow { .. } => {}
            Op::Add(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * vb[i];
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * va[i];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g)),
            Op::Offset(a) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g)),
            Op::Concat(parts) | Op::Stack(parts) => {
                let mut start = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    let slice = &g[start..start + len];
                    acc(p, &mut |d| d.iter_mut().zip(slice).for_each(|(d, g)| *d += g));
                    start += len;
                }
            }
            Op::Dot(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |d| d.iter_mut().zip(vb).for_each(|(d, y)| *d += g[0] * y));
                acc(*b, &mut |d| d.iter_mut().zip(va).for_each(|(d, x)| *d += g[0] * x));
            }
            Op::MatVec(a, x) => {
                let (va, vx) = (val(*a), val(*x));
                let c = vx.len();
                acc(*a, &mut |d| {
                    for (i, gi) in g.iter().enumerate() {
                        for j in 0..c {
                            d[i * c + j] += gi * vx[j];
                        }
                    }
                });
                acc(*x, &mut |d| {
                    for (i, gi) in g.iter().enumerate() {
                        for j in 0..c {
                            d[j] += gi * va[i * c + j];
                        }
                    }
                });
            }
            Op::VecMat(x, a) => {
                let (vx, va) = (val(*x), val(*a));
                let c = g.len();
                acc(*x, &mut |d| {
                    for (i, di) in d.iter_mut().enumerate() {
                        *di += va[i * c..(i + 1) * c].iter().zip(g).map(|(a, g)| a * g).sum::<f64>();
                    }
                });
                acc(*a, &mut |d| {
                    for (i, xi) in vx.iter().enumerate() {
                        for j in 0..c {
                            d[i * c + j] += xi * g[j];
                        }
                    }
                });
            }
            Op::Relu(a) => {
                let x = val(*a);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        if x[i] > 0.0 {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Log(a) => {
                let x = val(*a);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] / x[i];
                    }
                });
            }
            Op::Softplus(a) => {
                let x = val(*a);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * sigmoid(x[i]);
                    }
                });
            }
            Op::Sqrt(a) => {
                let y = &node.value;
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * 0.5 / y[i];
                    }
                });
            }
            Op::Recip(a) => {
                let y = &node.value;
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] -= g[i] * y[i] * y[i];
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::SumNormalize { input, degenerate } => {
                if *degenerate {
                    return;
                }
                let s: f64 = val(*input).iter().sum();
                let y = &node.value;
                let gy: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                acc(*input, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += (g[i] - gy) / s;
                    }
                });
            }
            Op::Conv1d { input, filters, bias } => {
                let (si, sf) = (&self.nodes[input.0].shape, &self.nodes[filters.0].shape);
                let (n, c) = (si[0], si[1]);
                let (m, w) = (sf[0], sf[1]);
                let pad = (w - 1) / 2;
                let (x, k) = (val(*input), val(*filters));
                let taps = |p: usize, t: usize| (p + t).checked_sub(pad).filter(|&q| q < n);
                acc(*input, &mut |d| {
                    for p in 0..n {
                        for j in 0..m {
                            let gj = g[p * m + j];
                            if gj == 0.0 {
                                continue;
                            }
                            for t in 0..w {
                                let Some(q) = taps(p, t) else { continue };
                                let krow = &k[(j * w + t) * c..(j * w + t + 1) * c];
                                for (dq, kv) in d[q * c..(q + 1) * c].iter_mut().zip(krow) {
                                    *dq += gj * kv;
                                }
                            }
                        }
                    }
                });
                acc(*filters, &mut |d| {
                    for p in 0..n {
                        for j in 0..m {
                            let gj = g[p * m + j];
                            if gj == 0.0 {
                                continue;
                            }
                            for t in 0..w {
                                let Some(q) = taps(p, t) else { continue };
                                let xrow = &x[q * c..(q + 1) * c];
                                let drow = &mut d[(j * w + t) * c..(j * w + t + 1) * c];
                                for (dk, xv) in drow.iter_mut().zip(xrow) {
                                    *dk += gj * xv;
                                }
                            }
                        }
                    }
                });
                acc(*bias, &mut |d| {
                    for p in 0..n {
                        for j in 0..m {
                            d[j] += g[p * m + j];
                        }
                    }
                });
            }
            Op::MaxPool { input, argmax } => {
                let m = g.len();
                acc(*input, &mut |d| {
                    for (j, &p) in argmax.iter().enumerate() {
                        d[p * m + j] += g[j];
                    }
                });
            }
        }
    }

    /// Backward pass whose parameter gradients are added into `grads`.
    pub fn backward_into(&self, loss: Var, grads: &mut Gradients) -> Result<()> {
        let adj = self.backward(loss)?;
        for (idx, node) in self.nodes.iter().enumerate().take(adj.adj.len()) {
            let Some(g) = &adj.adj[idx] else { continue };
            match node.op {
                Op::Param(id) => {
                    grads.get_mut(id).iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                Op::ParamRow { param, row } => {
                    let cols = g.len();
                    let dst = &mut grads.get_mut(param)[row * cols..(row + 1) * cols];
                    dst.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Adjoints from one backward pass.
#[derive(Debug)]
pub struct Adjoints {
    adj: Vec<Option<Vec<f64>>>,
}

impl Adjoints {
    /// Gradient of the loss with respect to `v`; zeros if `v` did not
    /// influence the loss.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Vec<f64> {
        match self.adj.get(v.0).and_then(|a| a.as_ref()) {
            Some(g) => g.clone(),
            None => vec![0.0; tape.value(v).len()],
        }
    }
}
