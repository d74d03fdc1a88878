//! Minimal reverse-mode differentiation over vectors of `f64`.
//!
//! A [`Tape`] records every operation eagerly: each call computes its value
//! immediately and appends a node. [`Tape::backward`] then walks the nodes in
//! reverse, so topological order is simply insertion order. Binary
//! elementwise operations broadcast a length-1 operand against a vector.
//!
//! ```
//! use locdistill::autodiff::Tape;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(vec![3.0]);
//! let y = tape.mul(x, x);
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &[6.0]);
//! ```

mod gradcheck;

pub use gradcheck::{finite_difference_check, relative_error, GradCheckReport};

use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    /// Differentiable input.
    Param,
    /// Recorded input that never receives an adjoint.
    Frozen,
    Constant,
    Derived,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Max2(Var, Var),
    Min2(Var, Var),
    Sum(Var),
    MaxReduce(Var, usize),
    Dot(Var, Var),
    Affine {
        w: Var,
        x: Var,
        b: Var,
        rows: usize,
        cols: usize,
    },
    Slice {
        src: Var,
        start: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    kind: Kind,
    needs_grad: bool,
    value: Vec<f64>,
}

/// Records operations for a single forward/backward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of the differentiable inputs of a tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    adjoints: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Adjoint of a `param` leaf, or `None` if it is not reachable from the
    /// root (or is not a `param`).
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.adjoints.get(v.0).and_then(|a| a.as_deref())
    }

    /// Like [`Gradients::get`], with zeros for unreachable inputs.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, kind: Kind, needs_grad: bool, value: Vec<f64>) -> Var {
        self.nodes.push(Node {
            op,
            kind,
            needs_grad,
            value,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, op: Op, parents: &[Var], value: Vec<f64>) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push(op, Kind::Derived, needs_grad, value)
    }

    /// A differentiable input.
    pub fn param(&mut self, value: Vec<f64>) -> Var {
        self.push(Op::Leaf, Kind::Param, true, value)
    }

    /// An input that is recorded but excluded from differentiation, e.g. the
    /// weights of a teacher model.
    pub fn frozen(&mut self, value: Vec<f64>) -> Var {
        self.push(Op::Leaf, Kind::Frozen, false, value)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(Op::Leaf, Kind::Constant, false, value)
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.constant(vec![value])
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// The single entry of a length-1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        debug_assert_eq!(value.len(), 1, "node {} is not a scalar", v.0);
        value[0]
    }

    pub fn is_frozen(&self, v: Var) -> bool {
        self.nodes[v.0].kind == Kind::Frozen
    }

    fn broadcast(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (va, vb) = (self.value(a), self.value(b));
        match (va.len(), vb.len()) {
            (x, y) if x == y => va.iter().zip(vb).map(|(p, q)| f(*p, *q)).collect(),
            (1, _) => vb.iter().map(|q| f(va[0], *q)).collect(),
            (_, 1) => va.iter().map(|p| f(*p, vb[0])).collect(),
            (x, y) => panic!("operand lengths {x} and {y} do not broadcast"),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.broadcast(a, b, |p, q| p + q);
        self.derived(Op::Add(a, b), &[a, b], v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.broadcast(a, b, |p, q| p - q);
        self.derived(Op::Sub(a, b), &[a, b], v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.broadcast(a, b, |p, q| p * q);
        self.derived(Op::Mul(a, b), &[a, b], v)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.broadcast(a, b, |p, q| p / q);
        self.derived(Op::Div(a, b), &[a, b], v)
    }

    /// Elementwise larger of the two operands.
    pub fn max2(&mut self, a: Var, b: Var) -> Var {
        let v = self.broadcast(a, b, f64::max);
        self.derived(Op::Max2(a, b), &[a, b], v)
    }

    pub fn min2(&mut self, a: Var, b: Var) -> Var {
        let v = self.broadcast(a, b, f64::min);
        self.derived(Op::Min2(a, b), &[a, b], v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).iter().map(|x| x * c).collect();
        self.derived(Op::Scale(a, c), &[a], v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `a + c` elementwise.
    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).iter().map(|x| x + c).collect();
        self.derived(Op::Shift(a), &[a], v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x.exp()).collect();
        self.derived(Op::Exp(a), &[a], v)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x.ln()).collect();
        self.derived(Op::Log(a), &[a], v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x.max(0.0)).collect();
        self.derived(Op::Relu(a), &[a], v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = vec![self.value(a).iter().sum()];
        self.derived(Op::Sum(a), &[a], v)
    }

    /// Largest entry as a scalar. The gradient flows to the first maximizer.
    pub fn max_reduce(&mut self, a: Var) -> Var {
        let values = self.value(a);
        let idx = crate::distributions::argmax(values);
        let v = vec![values[idx]];
        self.derived(Op::MaxReduce(a, idx), &[a], v)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "dot of mismatched lengths");
        let v = vec![va.iter().zip(vb).map(|(p, q)| p * q).sum()];
        self.derived(Op::Dot(a, b), &[a, b], v)
    }

    /// `W x + b` with `W` stored row-major as `rows x cols`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var, rows: usize, cols: usize) -> Var {
        let (vw, vx, vb) = (self.value(w), self.value(x), self.value(b));
        assert_eq!(vw.len(), rows * cols, "weight shape mismatch");
        assert_eq!(vx.len(), cols, "input length mismatch");
        assert_eq!(vb.len(), rows, "bias length mismatch");
        let v = vw
            .chunks_exact(cols)
            .zip(vb)
            .map(|(row, bias)| row.iter().zip(vx).map(|(p, q)| p * q).sum::<f64>() + bias)
            .collect();
        self.derived(
            Op::Affine {
                w,
                x,
                b,
                rows,
                cols,
            },
            &[w, x, b],
            v,
        )
    }

    /// Contiguous sub-vector `a[start..start + len]`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a)[start..start + len].to_vec();
        self.derived(Op::Slice { src: a, start }, &[a], v)
    }

    pub fn index(&mut self, a: Var, i: usize) -> Var {
        self.slice(a, i, 1)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// `log softmax(z / tau)`, built from max-shift, `exp`, `sum` and `ln`.
    pub fn log_softmax(&mut self, z: Var, tau: f64) -> Var {
        let scaled = self.scale(z, 1.0 / tau);
        let m = self.max_reduce(scaled);
        let shifted = self.sub(scaled, m);
        let e = self.exp(shifted);
        let s = self.sum(e);
        let lse = self.ln(s);
        self.sub(shifted, lse)
    }

    pub fn softmax(&mut self, z: Var, tau: f64) -> Var {
        let l = self.log_softmax(z, tau);
        self.exp(l)
    }

    /// Reverse sweep from a scalar root. Returns adjoints for every `param`
    /// input the root depends on.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if root.0 >= self.nodes.len() {
            return Err(Error::domain(format!(
                "node {} is not on this tape",
                root.0
            )));
        }
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::domain(format!(
                "backward root must be a scalar, node {} has length {}",
                root.0,
                self.nodes[root.0].value.len()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[root.0].needs_grad {
            adj[root.0] = Some(vec![1.0]);
        }

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[id].take() else { continue };
            if let Some(k) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::numeric(
                    format!("node {id}"),
                    format!("non-finite adjoint {} at entry {k}", g[k]),
                ));
            }
            self.propagate(id, &g, &mut adj);
            adj[id] = Some(g);
        }

        for (id, node) in self.nodes.iter().enumerate() {
            if node.kind != Kind::Param {
                adj[id] = None;
            } else if let Some(a) = &adj[id] {
                if let Some(k) = a.iter().position(|v| !v.is_finite()) {
                    return Err(Error::numeric(
                        format!("node {id}"),
                        format!("non-finite gradient {} at entry {k}", a[k]),
                    ));
                }
            }
        }
        Ok(Gradients { adjoints: adj })
    }

    fn propagate(&self, id: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        match node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_broadcast(adj, a, g, |_, gi| gi);
                self.acc_broadcast(adj, b, g, |_, gi| gi);
            }
            Op::Sub(a, b) => {
                self.acc_broadcast(adj, a, g, |_, gi| gi);
                self.acc_broadcast(adj, b, g, |_, gi| -gi);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                self.acc_broadcast(adj, a, g, |i, gi| gi * pick(vb, i));
                self.acc_broadcast(adj, b, g, |i, gi| gi * pick(va, i));
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                self.acc_broadcast(adj, a, g, |i, gi| gi / pick(vb, i));
                self.acc_broadcast(adj, b, g, |i, gi| {
                    let d = pick(vb, i);
                    -gi * pick(va, i) / (d * d)
                });
            }
            Op::Max2(a, b) | Op::Min2(a, b) => {
                let is_max = matches!(node.op, Op::Max2(..));
                let (va, vb) = (self.value(a), self.value(b));
                // Ties route the gradient to the first operand.
                let first_wins = |i: usize| {
                    let (x, y) = (pick(va, i), pick(vb, i));
                    if is_max {
                        x >= y
                    } else {
                        x <= y
                    }
                };
                self.acc_broadcast(adj, a, g, |i, gi| if first_wins(i) { gi } else { 0.0 });
                self.acc_broadcast(adj, b, g, |i, gi| if first_wins(i) { 0.0 } else { gi });
            }
            Op::Scale(a, c) => self.acc_broadcast(adj, a, g, |_, gi| gi * c),
            Op::Shift(a) => self.acc_broadcast(adj, a, g, |_, gi| gi),
            Op::Exp(a) => self.acc_broadcast(adj, a, g, |i, gi| gi * out[i]),
            Op::Log(a) => {
                let va = self.value(a);
                self.acc_broadcast(adj, a, g, |i, gi| gi / va[i]);
            }
            Op::Relu(a) => {
                let va = self.value(a);
                self.acc_broadcast(adj, a, g, |i, gi| if va[i] > 0.0 { gi } else { 0.0 });
            }
            Op::Sum(a) => self.acc_with(adj, a, |d| d.iter_mut().for_each(|x| *x += g[0])),
            Op::MaxReduce(a, k) => self.acc_with(adj, a, |d| d[k] += g[0]),
            Op::Dot(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                self.acc_with(adj, a, |d| {
                    d.iter_mut().zip(vb).for_each(|(x, y)| *x += g[0] * y)
                });
                self.acc_with(adj, b, |d| {
                    d.iter_mut().zip(va).for_each(|(x, y)| *x += g[0] * y)
                });
            }
            Op::Slice { src, start } => self.acc_with(adj, src, |d| {
                d[start..start + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(x, y)| *x += y)
            }),
            Op::Affine {
                w,
                x,
                b,
                rows,
                cols,
            } => {
                let (vw, vx) = (self.value(w), self.value(x));
                self.acc_with(adj, b, |d| d.iter_mut().zip(g).for_each(|(p, q)| *p += q));
                // Rows with a zero adjoint (inactive ReLU units) contribute nothing.
                self.acc_with(adj, w, |d| {
                    for (r, gr) in g.iter().enumerate().take(rows) {
                        if *gr != 0.0 {
                            let row = &mut d[r * cols..(r + 1) * cols];
                            row.iter_mut().zip(vx).for_each(|(p, q)| *p += gr * q);
                        }
                    }
                });
                self.acc_with(adj, x, |d| {
                    for (r, gr) in g.iter().enumerate().take(rows) {
                        if *gr != 0.0 {
                            let row = &vw[r * cols..(r + 1) * cols];
                            d.iter_mut().zip(row).for_each(|(p, q)| *p += gr * q);
                        }
                    }
                });
            }
        }
    }

    fn adjoint_slot<'a>(
        &self,
        adj: &'a mut [Option<Vec<f64>>],
        target: Var,
    ) -> Option<&'a mut Vec<f64>> {
        let node = &self.nodes[target.0];
        if !node.needs_grad {
            return None;
        }
        let len = node.value.len();
        Some(adj[target.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn acc_with(&self, adj: &mut [Option<Vec<f64>>], target: Var, f: impl FnOnce(&mut [f64])) {
        if let Some(d) = self.adjoint_slot(adj, target) {
            f(d);
        }
    }

    /// Adds `f(i, g_i)` into the target's adjoint, summing over the output
    /// when the target is a broadcast length-1 operand.
    fn acc_broadcast(
        &self,
        adj: &mut [Option<Vec<f64>>],
        target: Var,
        g: &[f64],
        f: impl Fn(usize, f64) -> f64,
    ) {
        let Some(d) = self.adjoint_slot(adj, target) else {
            return;
        };
        if d.len() == g.len() {
            for (i, (di, gi)) in d.iter_mut().zip(g).enumerate() {
                *di += f(i, *gi);
            }
        } else {
            d[0] += g.iter().enumerate().map(|(i, gi)| f(i, *gi)).sum::<f64>();
        }
    }
}

fn pick(v: &[f64], i: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[i]
    }
}
