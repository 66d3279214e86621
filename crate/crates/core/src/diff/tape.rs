use std::cell::RefCell;

use super::tensor::{matmul_nt_into, matmul_tn_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Max(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Shift(Var),
    MatMul(Var, Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Softplus(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    ColSum(Var),
    GatherCols(Var, Vec<usize>),
    GatherPerRow(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    /// Elementwise `mask ? a : b` with a constant mask.
    Select(Vec<bool>, Var, Var),
    /// Externally evaluated per-row scalar function with its row Jacobian.
    RowFn(Var, Tensor),
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Max(..) => "max",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::MatMul(..) => "matmul",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Tanh(..) => "tanh",
            Op::Softplus(..) => "softplus",
            Op::Sigmoid(..) => "sigmoid",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowSum(..) => "row_sum",
            Op::ColSum(..) => "col_sum",
            Op::GatherCols(..) => "gather_cols",
            Op::GatherPerRow(..) => "gather_per_row",
            Op::ConcatCols(..) => "concat_cols",
            Op::Reshape(..) => "reshape",
            Op::Select(..) => "select",
            Op::RowFn(..) => "row_fn",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of primitive applications.
///
/// Node ids are assigned in creation order, so inputs always precede
/// outputs and the backward pass is a single reverse sweep. Shape errors in
/// graph construction are programming errors and panic.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn broadcast_shape(op: &str, a: [usize; 2], b: [usize; 2]) -> [usize; 2] {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("{op}: cannot broadcast {a:?} with {b:?}")
        }
    };
    [dim(a[0], b[0]), dim(a[1], b[1])]
}

fn bcast_binary(op: &str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let [r, c] = a.shape();
        return Tensor::new(r, c, data).expect("shape");
    }
    let [r, c] = broadcast_shape(op, a.shape(), b.shape());
    let [ar, ac] = a.shape();
    let [br, bc] = b.shape();
    Tensor::from_fn(r, c, |i, j| {
        let x = a.get(if ar == 1 { 0 } else { i }, if ac == 1 { 0 } else { j });
        let y = b.get(if br == 1 { 0 } else { i }, if bc == 1 { 0 } else { j });
        f(x, y)
    })
}

/// Sums `g` down to `shape` along broadcast axes.
fn reduce_to(g: Tensor, shape: [usize; 2]) -> Tensor {
    if g.shape() == shape {
        return g;
    }
    let [gr, gc] = g.shape();
    let mut out = Tensor::zeros(shape[0], shape[1]);
    for i in 0..gr {
        let oi = if shape[0] == 1 { 0 } else { i };
        for j in 0..gc {
            let oj = if shape[1] == 1 { 0 } else { j };
            let v = out.get(oi, oj) + g.get(i, j);
            out.set(oi, oj, v);
        }
    }
    out
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.nodes.borrow()[a.0].value.map(f);
        self.push(v, op)
    }

    fn binary(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            bcast_binary(op.kind(), &nodes[a.0].value, &nodes[b.0].value, f)
        };
        self.push(v, op)
    }

    /// Leaf node (parameter, input or constant).
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.leaf(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes.borrow()[v.0].value.shape()
    }

    /// Runs `f` on the value of `v` without cloning it.
    pub fn with_value<T>(&self, v: Var, f: impl FnOnce(&Tensor) -> T) -> T {
        f(&self.nodes.borrow()[v.0].value)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn max(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, f64::max, Op::Max(a, b))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn shift(&self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::Shift(a))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            nodes[a.0]
                .value
                .matmul(&nodes[b.0].value)
                .unwrap_or_else(|e| panic!("{e}"))
        };
        self.push(v, Op::MatMul(a, b))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn softplus(&self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn sum(&self, a: Var) -> Var {
        let s = self.nodes.borrow()[a.0].value.sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        let s = self.nodes.borrow()[a.0].value.mean();
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Sum over columns: `[r, c] -> [r, 1]`.
    pub fn row_sum(&self, a: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            Tensor::column(t.iter_rows().map(|r| r.iter().sum()).collect())
        };
        self.push(v, Op::RowSum(a))
    }

    /// Sum over rows: `[r, c] -> [1, c]`.
    pub fn col_sum(&self, a: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            let mut s = vec![0.0; t.cols()];
            for r in t.iter_rows() {
                s.iter_mut().zip(r).for_each(|(a, b)| *a += b);
            }
            Tensor::new(1, t.cols(), s).expect("shape")
        };
        self.push(v, Op::ColSum(a))
    }

    /// Selects columns by index (repeats allowed).
    pub fn gather_cols(&self, a: Var, idx: Vec<usize>) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            assert!(idx.iter().all(|&j| j < t.cols()), "gather_cols: index out of range");
            Tensor::from_fn(t.rows(), idx.len(), |i, k| t.get(i, idx[k]))
        };
        self.push(v, Op::GatherCols(a, idx))
    }

    /// Picks one column per row: `out[i] = a[i, idx[i]]`, shape `[r, 1]`.
    pub fn gather_per_row(&self, a: Var, idx: Vec<usize>) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            assert_eq!(idx.len(), t.rows(), "gather_per_row: one index per row");
            Tensor::column(idx.iter().enumerate().map(|(i, &j)| t.get(i, j)).collect())
        };
        self.push(v, Op::GatherPerRow(a, idx))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].0].value.rows();
            assert!(
                parts.iter().all(|p| nodes[p.0].value.rows() == rows),
                "concat_cols: row counts differ"
            );
            let cols: usize = parts.iter().map(|p| nodes[p.0].value.cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for p in parts {
                    data.extend_from_slice(nodes[p.0].value.row(i));
                }
            }
            Tensor::new(rows, cols, data).expect("shape")
        };
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&self, a: Var, rows: usize, cols: usize) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            assert_eq!(t.len(), rows * cols, "reshape: element count");
            Tensor::new(rows, cols, t.data().to_vec()).expect("shape")
        };
        self.push(v, Op::Reshape(a))
    }

    /// Elementwise `mask[k] ? a[k] : b[k]`; `a` and `b` share one shape.
    pub fn select(&self, mask: Vec<bool>, a: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            assert_eq!(ta.shape(), tb.shape(), "select: shapes differ");
            assert_eq!(mask.len(), ta.len(), "select: mask length");
            let data = mask
                .iter()
                .zip(ta.data().iter().zip(tb.data()))
                .map(|(&m, (&x, &y))| if m { x } else { y })
                .collect();
            Tensor::new(ta.rows(), ta.cols(), data).expect("shape")
        };
        self.push(v, Op::Select(mask, a, b))
    }

    /// Attaches an externally computed per-row scalar function `f(x_i)` with
    /// its gradient rows `jac[i] = grad f(x_i)`.
    pub fn row_fn(&self, x: Var, values: Vec<f64>, jac: Tensor) -> Var {
        assert_eq!(self.shape(x), jac.shape(), "row_fn: jacobian shape");
        assert_eq!(values.len(), jac.rows(), "row_fn: one value per row");
        self.push(Tensor::column(values), Op::RowFn(x, jac))
    }

    // Composites built from the primitives above.

    pub fn square(&self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn abs(&self, a: Var) -> Var {
        let n = self.neg(a);
        self.max(a, n)
    }

    pub fn sqrt(&self, a: Var) -> Var {
        let l = self.log(a);
        let h = self.scale(l, 0.5);
        self.exp(h)
    }

    /// `1 - a`.
    pub fn one_minus(&self, a: Var) -> Var {
        let n = self.neg(a);
        self.shift(n, 1.0)
    }

    /// Row-wise softmax of an `[r, c]` matrix. The per-row max is treated as
    /// a constant, which leaves the gradient unchanged.
    pub fn softmax_rows(&self, a: Var) -> Var {
        let m = self.with_value(a, |t| {
            Tensor::column(
                t.iter_rows()
                    .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                    .collect(),
            )
        });
        let m = self.leaf(m);
        let centered = self.sub(a, m);
        let e = self.exp(centered);
        let s = self.row_sum(e);
        self.div(e, s)
    }

    /// `log(sum(exp(a)))` over all entries, as a scalar node.
    pub fn logsumexp(&self, a: Var) -> Var {
        let m = self.with_value(a, |t| t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let m = if m.is_finite() { m } else { 0.0 };
        let centered = self.shift(a, -m);
        let e = self.exp(centered);
        let s = self.sum(e);
        let l = self.log(s);
        self.shift(l, m)
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let lv = &nodes[loss.0].value;
        assert_eq!(lv.shape(), [1, 1], "backward: loss must be a scalar");
        if !lv.all_finite() {
            let op = nodes[..=loss.0]
                .iter()
                .find(|n| !n.value.all_finite())
                .map_or("unknown", |n| n.op.kind());
            return Err(Error::NonFinite { op });
        }
        let mut adj: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &nodes[i];
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut adj[a.0], reduce_to(g.clone(), val(*a).shape()));
                    accumulate(&mut adj[b.0], reduce_to(g.clone(), val(*b).shape()));
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj[a.0], reduce_to(g.clone(), val(*a).shape()));
                    accumulate(&mut adj[b.0], reduce_to(g.map(|x| -x), val(*b).shape()));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let ga = bcast_binary("mul", &g, bv, |x, y| x * y);
                    let gb = bcast_binary("mul", &g, av, |x, y| x * y);
                    accumulate(&mut adj[a.0], reduce_to(ga, av.shape()));
                    accumulate(&mut adj[b.0], reduce_to(gb, bv.shape()));
                }
                Op::Div(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let ga = bcast_binary("div", &g, bv, |x, y| x / y);
                    // d(a/b)/db = -out / b
                    let t = bcast_binary("div", &node.value, bv, |o, y| -o / y);
                    let gb = bcast_binary("div", &g, &t, |x, y| x * y);
                    accumulate(&mut adj[a.0], reduce_to(ga, av.shape()));
                    accumulate(&mut adj[b.0], reduce_to(gb, bv.shape()));
                }
                Op::Max(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let pick_a = bcast_binary("max", av, bv, |x, y| if x >= y { 1.0 } else { 0.0 });
                    let ga = bcast_binary("max", &g, &pick_a, |x, p| x * p);
                    let gb = bcast_binary("max", &g, &pick_a, |x, p| x * (1.0 - p));
                    accumulate(&mut adj[a.0], reduce_to(ga, av.shape()));
                    accumulate(&mut adj[b.0], reduce_to(gb, bv.shape()));
                }
                Op::Neg(a) => accumulate(&mut adj[a.0], g.map(|x| -x)),
                Op::Scale(a, c) => accumulate(&mut adj[a.0], g.map(|x| c * x)),
                Op::Shift(a) => accumulate(&mut adj[a.0], g.clone()),
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let [n, k] = av.shape();
                    let m = bv.cols();
                    let mut ga = Tensor::zeros(n, k);
                    matmul_nt_into(g.data(), bv.data(), ga.data_mut(), n, k, m);
                    let mut gb = Tensor::zeros(k, m);
                    matmul_tn_into(av.data(), g.data(), gb.data_mut(), n, k, m);
                    accumulate(&mut adj[a.0], ga);
                    accumulate(&mut adj[b.0], gb);
                }
                Op::Exp(a) => {
                    let ga = bcast_binary("exp", &g, &node.value, |x, o| x * o);
                    accumulate(&mut adj[a.0], ga);
                }
                Op::Log(a) => {
                    let ga = bcast_binary("log", &g, val(*a), |x, y| x / y);
                    accumulate(&mut adj[a.0], ga);
                }
                Op::Tanh(a) => {
                    let ga = bcast_binary("tanh", &g, &node.value, |x, o| x * (1.0 - o * o));
                    accumulate(&mut adj[a.0], ga);
                }
                Op::Softplus(a) => {
                    let ga = bcast_binary("softplus", &g, val(*a), |x, y| x * sigmoid(y));
                    accumulate(&mut adj[a.0], ga);
                }
                Op::Sigmoid(a) => {
                    let ga = bcast_binary("sigmoid", &g, &node.value, |x, o| x * o * (1.0 - o));
                    accumulate(&mut adj[a.0], ga);
                }
                Op::Sum(a) => {
                    let [r, c] = val(*a).shape();
                    accumulate(&mut adj[a.0], Tensor::filled(r, c, g.get(0, 0)));
                }
                Op::Mean(a) => {
                    let [r, c] = val(*a).shape();
                    let n = (r * c) as f64;
                    accumulate(&mut adj[a.0], Tensor::filled(r, c, g.get(0, 0) / n));
                }
                Op::RowSum(a) => {
                    let [r, c] = val(*a).shape();
                    accumulate(&mut adj[a.0], Tensor::from_fn(r, c, |i, _| g.get(i, 0)));
                }
                Op::ColSum(a) => {
                    let [r, c] = val(*a).shape();
                    accumulate(&mut adj[a.0], Tensor::from_fn(r, c, |_, j| g.get(0, j)));
                }
                Op::GatherCols(a, idx) => {
                    let [r, c] = val(*a).shape();
                    let mut ga = Tensor::zeros(r, c);
                    for i in 0..r {
                        let grow = g.row(i);
                        let out = ga.row_mut(i);
                        for (k, &j) in idx.iter().enumerate() {
                            out[j] += grow[k];
                        }
                    }
                    accumulate(&mut adj[a.0], ga);
                }
                Op::GatherPerRow(a, idx) => {
                    let [r, c] = val(*a).shape();
                    let mut ga = Tensor::zeros(r, c);
                    for (i, &j) in idx.iter().enumerate() {
                        ga.set(i, j, g.get(i, 0));
                    }
                    accumulate(&mut adj[a.0], ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let [r, c] = val(*p).shape();
                        let gp = Tensor::from_fn(r, c, |i, j| g.get(i, offset + j));
                        offset += c;
                        accumulate(&mut adj[p.0], gp);
                    }
                }
                Op::Reshape(a) => {
                    let [r, c] = val(*a).shape();
                    accumulate(&mut adj[a.0], Tensor::new(r, c, g.data().to_vec()).expect("shape"));
                }
                Op::Select(mask, a, b) => {
                    let [r, c] = g.shape();
                    let pick = |on: bool| {
                        let data = mask
                            .iter()
                            .zip(g.data())
                            .map(|(&m, &x)| if m == on { x } else { 0.0 })
                            .collect();
                        Tensor::new(r, c, data).expect("shape")
                    };
                    accumulate(&mut adj[a.0], pick(true));
                    accumulate(&mut adj[b.0], pick(false));
                }
                Op::RowFn(x, jac) => {
                    let [r, c] = jac.shape();
                    let gx = Tensor::from_fn(r, c, |i, j| g.get(i, 0) * jac.get(i, j));
                    accumulate(&mut adj[x.0], gx);
                }
            }
            adj[i] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { adj, shapes })
    }
}

/// Adjoints from one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    adj: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero when `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.adj[v.0] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

/// Value and gradient of `build(params)` with respect to every parameter.
///
/// `build` receives the tape and one leaf per parameter tensor and must
/// return a scalar node.
pub fn grad<F>(params: &[Tensor], build: F) -> Result<(f64, Vec<Tensor>)>
where
    F: FnOnce(&Tape, &[Var]) -> Var,
{
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = build(&tape, &vars);
    let g = tape.backward(loss)?;
    let value = tape.with_value(loss, |t| t.get(0, 0));
    Ok((value, vars.iter().map(|&v| g.wrt(v)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Tensor {
        Tensor::scalar(v)
    }

    #[test]
    fn square_derivative() {
        let (v, g) = grad(&[s(3.0)], |t, p| t.mul(p[0], p[0])).unwrap();
        assert_eq!(v, 9.0);
        assert_eq!(g[0].get(0, 0), 6.0);
    }

    #[test]
    fn log_exp_identity() {
        for x in [-3.0, 0.0, 0.7, 5.0] {
            let (_, g) = grad(&[s(x)], |t, p| {
                let e = t.exp(p[0]);
                t.log(e)
            })
            .unwrap();
            assert!((g[0].get(0, 0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // f = x*y + x with x=2, y=5: df/dx = y + 1, df/dy = x
        let (_, g) = grad(&[s(2.0), s(5.0)], |t, p| {
            let xy = t.mul(p[0], p[1]);
            t.add(xy, p[0])
        })
        .unwrap();
        assert_eq!(g[0].get(0, 0), 6.0);
        assert_eq!(g[1].get(0, 0), 2.0);
    }

    #[test]
    fn broadcasting_reduces_gradients() {
        let a = Tensor::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let bias = Tensor::new(1, 3, vec![0.5, 0.5, 0.5]).unwrap();
        let (_, g) = grad(&[a, bias], |t, p| {
            let y = t.add(p[0], p[1]);
            t.sum(y)
        })
        .unwrap();
        assert_eq!(g[1].data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn non_finite_loss_is_reported_with_op() {
        let err = grad(&[s(-1.0)], |t, p| t.log(p[0])).unwrap_err();
        match err {
            Error::NonFinite { op } => assert_eq!(op, "log"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn max_routes_subgradient() {
        let (_, g) = grad(&[s(2.0), s(1.0)], |t, p| t.max(p[0], p[1])).unwrap();
        assert_eq!((g[0].get(0, 0), g[1].get(0, 0)), (1.0, 0.0));
    }
}
