//! Tape-based reverse-mode automatic differentiation over dense matrices.
//!
//! Every operation appends a node to a [`Tape`]; nodes only reference earlier
//! nodes, so insertion order is a topological order. [`Tape::backward`]
//! walks it in reverse once, computing vector-Jacobian products, and adds
//! the resulting adjoints into each node's stored gradient. Gradients
//! accumulate across backward calls until [`Tape::zero_grad`].
//!
//! ```
//! use tabglm::autodiff::Tape;
//! use tabglm::tensor::Matrix;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Matrix::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).item(), 6.0);
//! ```

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{matmul_at_acc, matmul_bt_acc, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a right operand is broadcast against the left in `add` / `mul`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Col,
    Scalar,
}

fn broadcast_kind(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Result<Broadcast> {
    if lhs == rhs {
        Ok(Broadcast::Same)
    } else if rhs == (1, 1) {
        Ok(Broadcast::Scalar)
    } else if rhs == (1, lhs.1) {
        Ok(Broadcast::Row)
    } else if rhs == (lhs.0, 1) {
        Ok(Broadcast::Col)
    } else {
        Err(Error::Shape { op, lhs, rhs })
    }
}

#[inline]
fn bcast_index(kind: Broadcast, cols: usize, i: usize) -> usize {
    match kind {
        Broadcast::Same => i,
        Broadcast::Row => i % cols,
        Broadcast::Col => i / cols,
        Broadcast::Scalar => 0,
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    Relu(Var),
    RowL2Normalize(Var, Vec<f64>),
    LogSoftmax(Var),
    Mean(Var),
    Sum(Var),
    GatherRows(Var, Rc<Vec<usize>>),
    Pick(Var, Rc<Vec<usize>>),
    StopGradient,
    GroupMean(Var, usize),
    BlockMix(Var, Rc<Matrix>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::RowL2Normalize(..) => "row_l2_normalize",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Mean(..) => "mean",
            Op::Sum(..) => "sum",
            Op::GatherRows(..) => "gather_rows",
            Op::Pick(..) => "pick",
            Op::StopGradient => "stop_gradient",
            Op::GroupMean(..) => "group_mean",
            Op::BlockMix(..) => "block_mix",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    grad: Option<Matrix>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
    /// Values substituted for successive `stop_gradient` outputs.
    held: Option<(Vec<Matrix>, usize)>,
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

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf; recorded in the parameter registry.
    pub fn param(&mut self, value: Matrix) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.params.push(v);
        v
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient; zeros if none has reached this node.
    pub fn grad(&self, v: Var) -> Matrix {
        let node = &self.nodes[v.0];
        node.grad
            .clone()
            .unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols()))
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    fn broadcast_binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Matrix, Broadcast)> {
        let (av, bv) = (self.value(a), self.value(b));
        let kind = broadcast_kind(name, av.shape(), bv.shape())?;
        let cols = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv.data()[bcast_index(kind, cols, i)]))
            .collect();
        Ok((Matrix::from_vec(av.rows(), cols, data)?, kind))
    }

    /// `a + b`; `b` may be same-shaped, a 1×c row, an r×1 column, or 1×1.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, kind) = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b, kind), rg))
    }

    /// Elementwise `a ⊙ b` with the same broadcasting as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, kind) = self.broadcast_binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b, kind), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    /// `max(x, 0)`; the derivative at 0 is taken as 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    /// Scales each row to unit L2 norm. A zero row is replaced by the first
    /// unit basis vector and passes no gradient.
    pub fn row_l2_normalize(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        let mut norms = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let n = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            let row = out.row_mut(r);
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            } else {
                log::warn!("zero-norm embedding row {r} replaced by a unit basis vector");
                row.fill(0.0);
                if let Some(first) = row.first_mut() {
                    *first = 1.0;
                }
            }
            norms.push(n);
        }
        let rg = self.rg(a);
        self.push(out, Op::RowL2Normalize(a, norms), rg)
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..x.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmax(a), rg)
    }

    /// Mean of all entries, as 1×1.
    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Matrix::scalar(x.sum() / x.len() as f64);
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    /// Sum of all entries, as 1×1.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    /// `out[r] = a[indices[r]]`.
    pub fn gather_rows(&mut self, a: Var, indices: Rc<Vec<usize>>) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: x.shape(),
                rhs: (bad, 0),
            });
        }
        let value = x.select_rows(&indices);
        let rg = self.rg(a);
        Ok(self.push(value, Op::GatherRows(a, indices), rg))
    }

    /// `out[r, 0] = a[r, columns[r]]`, an r×1 column.
    pub fn pick(&mut self, a: Var, columns: Rc<Vec<usize>>) -> Result<Var> {
        let x = self.value(a);
        if columns.len() != x.rows() {
            return Err(Error::Shape {
                op: "pick",
                lhs: x.shape(),
                rhs: (columns.len(), 1),
            });
        }
        if let Some(&bad) = columns.iter().find(|&&c| c >= x.cols()) {
            return Err(Error::Shape {
                op: "pick",
                lhs: x.shape(),
                rhs: (1, bad),
            });
        }
        let data = columns
            .iter()
            .enumerate()
            .map(|(r, &c)| x.get(r, c))
            .collect();
        let value = Matrix::from_vec(x.rows(), 1, data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Pick(a, columns), rg))
    }

    /// Forwards the value, blocks all gradient flow.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        if let Some((held, next)) = &mut self.held {
            if let Some(v) = held.get(*next).filter(|v| v.shape() == value.shape()) {
                value = v.clone();
            }
            *next += 1;
        }
        self.push(value, Op::StopGradient, false)
    }

    fn stop_gradient_values(&self) -> Vec<Matrix> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::StopGradient))
            .map(|n| n.value.clone())
            .collect()
    }

    /// Mean over consecutive groups of `group` rows: (B·group)×h → B×h.
    pub fn group_mean(&mut self, a: Var, group: usize) -> Result<Var> {
        let x = self.value(a);
        if group == 0 || !x.rows().is_multiple_of(group) {
            return Err(Error::Shape {
                op: "group_mean",
                lhs: x.shape(),
                rhs: (group, 1),
            });
        }
        let blocks = x.rows() / group;
        let mut out = Matrix::zeros(blocks, x.cols());
        for b in 0..blocks {
            let dst = out.row_mut(b);
            for r in b * group..(b + 1) * group {
                for (d, s) in dst.iter_mut().zip(x.row(r)) {
                    *d += s;
                }
            }
            dst.iter_mut().for_each(|v| *v /= group as f64);
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::GroupMean(a, group), rg))
    }

    /// Left-multiplies every consecutive g-row block of `a` by the fixed
    /// g×g matrix `mix`: block_b ← mix · block_b.
    pub fn block_mix(&mut self, a: Var, mix: Rc<Matrix>) -> Result<Var> {
        let x = self.value(a);
        let g = mix.rows();
        if mix.cols() != g || g == 0 || !x.rows().is_multiple_of(g) {
            return Err(Error::Shape {
                op: "block_mix",
                lhs: x.shape(),
                rhs: mix.shape(),
            });
        }
        let h = x.cols();
        let mut out = Matrix::zeros(x.rows(), h);
        for b in 0..x.rows() / g {
            for v in 0..g {
                let dst = b * g + v;
                for u in 0..g {
                    let w = mix.get(v, u);
                    if w == 0.0 {
                        continue;
                    }
                    let src = b * g + u;
                    for k in 0..h {
                        let s = x.get(src, k);
                        out.data_mut()[dst * h + k] += w * s;
                    }
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::BlockMix(a, mix), rg))
    }

    /// Propagates d`root`/d· to every node that requires gradients and adds
    /// it to their stored gradients. `root` must be 1×1.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                lhs: shape,
                rhs: (1, 1),
            });
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Matrix::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut adj);
            match &mut self.nodes[i].grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Matrix, adj: &mut [Option<Matrix>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;

        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(ga) = slot(nodes, adj, *a) {
                    matmul_bt_acc(g, bv, ga);
                }
                if let Some(gb) = slot(nodes, adj, *b) {
                    matmul_at_acc(av, g, gb);
                }
            }
            Op::Transpose(a) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    ga.add_assign(&g.transpose());
                }
            }
            Op::Add(a, b, kind) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    ga.add_assign(g);
                }
                let cols = g.cols();
                if let Some(gb) = slot(nodes, adj, *b) {
                    for (k, &d) in g.data().iter().enumerate() {
                        gb.data_mut()[bcast_index(*kind, cols, k)] += d;
                    }
                }
            }
            Op::Mul(a, b, kind) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let cols = g.cols();
                if let Some(ga) = slot(nodes, adj, *a) {
                    for (k, (o, &d)) in ga.data_mut().iter_mut().zip(g.data()).enumerate() {
                        *o += d * bv.data()[bcast_index(*kind, cols, k)];
                    }
                }
                if let Some(gb) = slot(nodes, adj, *b) {
                    for (k, (&d, &x)) in g.data().iter().zip(av.data()).enumerate() {
                        gb.data_mut()[bcast_index(*kind, cols, k)] += d * x;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    for (o, &d) in ga.data_mut().iter_mut().zip(g.data()) {
                        *o += s * d;
                    }
                }
            }
            Op::Relu(a) => {
                let x = &nodes[a.0].value;
                if let Some(ga) = slot(nodes, adj, *a) {
                    for ((o, &d), &xv) in ga.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                        if xv > 0.0 {
                            *o += d;
                        }
                    }
                }
            }
            Op::RowL2Normalize(a, norms) => {
                let y = &node.value;
                if let Some(ga) = slot(nodes, adj, *a) {
                    for (r, &n) in norms.iter().enumerate() {
                        if n == 0.0 {
                            continue;
                        }
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, &yv), &gv) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o += (gv - yv * dot) / n;
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let y = &node.value;
                if let Some(ga) = slot(nodes, adj, *a) {
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let total: f64 = gr.iter().sum();
                        for ((o, &yv), &gv) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o += gv - yv.exp() * total;
                        }
                    }
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    let d = g.item() / ga.len() as f64;
                    ga.data_mut().iter_mut().for_each(|o| *o += d);
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    let d = g.item();
                    ga.data_mut().iter_mut().for_each(|o| *o += d);
                }
            }
            Op::GatherRows(a, idx) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    for (r, &src) in idx.iter().enumerate() {
                        for (o, &d) in ga.row_mut(src).iter_mut().zip(g.row(r)) {
                            *o += d;
                        }
                    }
                }
            }
            Op::Pick(a, cols) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    for (r, &c) in cols.iter().enumerate() {
                        let v = ga.get(r, c) + g.get(r, 0);
                        ga.set(r, c, v);
                    }
                }
            }
            Op::GroupMean(a, group) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    let inv = 1.0 / *group as f64;
                    for r in 0..ga.rows() {
                        let src = g.row(r / group);
                        for (o, &d) in ga.row_mut(r).iter_mut().zip(src) {
                            *o += d * inv;
                        }
                    }
                }
            }
            Op::BlockMix(a, mix) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    // d block_b = mixᵀ · g_b
                    let gsz = mix.rows();
                    let h = g.cols();
                    for b in 0..g.rows() / gsz {
                        for v in 0..gsz {
                            for u in 0..gsz {
                                let w = mix.get(v, u);
                                if w == 0.0 {
                                    continue;
                                }
                                let (src, dst) = (b * gsz + v, b * gsz + u);
                                for k in 0..h {
                                    let d = g.get(src, k);
                                    ga.data_mut()[dst * h + k] += w * d;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint buffer of `v`, created on first use; `None` when `v` takes no gradient.
fn slot<'a>(nodes: &[Node], adj: &'a mut [Option<Matrix>], v: Var) -> Option<&'a mut Matrix> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let (r, c) = nodes[v.0].value.shape();
    Some(adj[v.0].get_or_insert_with(|| Matrix::zeros(r, c)))
}

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences, returning the largest relative error over all
/// parameter coordinates. Relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
///
/// Perturbed evaluations hold every `stop_gradient` output at its
/// unperturbed value, so the differences measure the derivative with the
/// stopped operands treated as constants.
///
/// `f` receives a fresh tape and one parameter var per input matrix, and
/// returns the 1×1 output var.
pub fn grad_check<F>(f: F, params: &[Matrix], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).item().is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    tape.backward(out)?;
    let analytic: Vec<Matrix> = vars.iter().map(|&v| tape.grad(v)).collect();
    let held = tape.stop_gradient_values();

    let eval = |ps: &[Matrix]| -> Result<f64> {
        let mut tape = Tape {
            held: Some((held.clone(), 0)),
            ..Tape::default()
        };
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item();
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("grad_check objective = {v}")));
        }
        Ok(v)
    };

    let mut worst: f64 = 0.0;
    let mut work = params.to_vec();
    for p in 0..params.len() {
        for k in 0..params[p].len() {
            let orig = params[p].data()[k];
            work[p].data_mut()[k] = orig + epsilon;
            let plus = eval(&work)?;
            work[p].data_mut()[k] = orig - epsilon;
            let minus = eval(&work)?;
            work[p].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[p].data()[k];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
