//! Monotone rational splines on `[-B, B]` with identity tails, written in
//! tape primitives so both directions are differentiable in the knots.

use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Var};
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplineKind {
    LinearRational,
    QuadraticRational,
}

const MIN_BIN: f64 = 1e-3;
const MIN_DERIV: f64 = 1e-3;
const LAMBDA_MARGIN: f64 = 0.025;

/// Shape of one spline transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec {
    pub kind: SplineKind,
    pub bins: usize,
    pub bound: f64,
}

impl SplineSpec {
    /// Raw parameters per coordinate.
    pub fn params_per_dim(&self) -> usize {
        let k = self.bins;
        match self.kind {
            SplineKind::LinearRational => 4 * k - 1,
            SplineKind::QuadraticRational => 3 * k - 1,
        }
    }
}

/// Knot data for a batch of `m` independent scalar splines.
struct Knots {
    xs: Var,
    ys: Var,
    derivs: Var,
    lambdas: Option<Var>,
}

fn deriv_offset() -> f64 {
    // softplus(c) + MIN_DERIV == 1
    ((1.0 - MIN_DERIV).exp() - 1.0).ln()
}

fn cumulative(t: &Tape, widths: Var, k: usize, bound: f64) -> Var {
    let tri = Tensor::from_fn(k, k + 1, |i, j| if i < j { 1.0 } else { 0.0 });
    let c = t.matmul(widths, t.leaf(tri));
    let c = t.scale(c, 2.0 * bound);
    t.shift(c, -bound)
}

fn knots(t: &Tape, raw: Var, spec: &SplineSpec) -> Knots {
    let k = spec.bins;
    let m = t.shape(raw)[0];
    let block = |lo: usize, n: usize| t.gather_cols(raw, (lo..lo + n).collect());
    let normalized = |logits: Var| {
        let p = t.softmax_rows(logits);
        let p = t.scale(p, 1.0 - k as f64 * MIN_BIN);
        t.shift(p, MIN_BIN)
    };
    let xs = cumulative(t, normalized(block(0, k)), k, spec.bound);
    let ys = cumulative(t, normalized(block(k, k)), k, spec.bound);
    let inner = t.shift(t.softplus(t.shift(block(2 * k, k - 1), deriv_offset())), MIN_DERIV);
    let ones = t.leaf(Tensor::filled(m, 1, 1.0));
    let derivs = t.concat_cols(&[ones, inner, ones]);
    let lambdas = match spec.kind {
        SplineKind::LinearRational => {
            let s = t.sigmoid(block(3 * k - 1, k));
            let s = t.scale(s, 1.0 - 2.0 * LAMBDA_MARGIN);
            Some(t.shift(s, LAMBDA_MARGIN))
        }
        SplineKind::QuadraticRational => None,
    };
    Knots {
        xs,
        ys,
        derivs,
        lambdas,
    }
}

/// Bin index of every row of `v` against the knot rows of `edges`.
fn locate(t: &Tape, edges: Var, v: Var) -> Vec<usize> {
    let e = t.value(edges);
    let v = t.value(v);
    let k = e.cols() - 1;
    e.iter_rows()
        .zip(v.data())
        .map(|(row, &x)| row[1..k].partition_point(|&edge| edge <= x))
        .collect()
}

struct Bin {
    x0: Var,
    dx: Var,
    y0: Var,
    y1: Var,
    dy: Var,
    d0: Var,
    d1: Var,
    lambda: Option<Var>,
}

fn bin(t: &Tape, kn: &Knots, idx: &[usize]) -> Bin {
    let next: Vec<usize> = idx.iter().map(|i| i + 1).collect();
    let x0 = t.gather_per_row(kn.xs, idx.to_vec());
    let x1 = t.gather_per_row(kn.xs, next.clone());
    let y0 = t.gather_per_row(kn.ys, idx.to_vec());
    let y1 = t.gather_per_row(kn.ys, next.clone());
    Bin {
        x0,
        dx: t.sub(x1, x0),
        y0,
        y1,
        dy: t.sub(y1, y0),
        d0: t.gather_per_row(kn.derivs, idx.to_vec()),
        d1: t.gather_per_row(kn.derivs, next),
        lambda: kn.lambdas.map(|l| t.gather_per_row(l, idx.to_vec())),
    }
}

/// One linear-rational piece `y = (a Y0 + b Y1) / (a + b)` on `[p0, p1]` with
/// `a = W0 (p1 - phi)` and `b = W1 (phi - p0)`.
struct Piece {
    p0: Var,
    p1: Var,
    w0: Var,
    w1: Var,
    y0: Var,
    y1: Var,
}

struct Lrs {
    lambda: Var,
    w_end: Var,
    w_mid: Var,
    y_mid: Var,
}

fn lrs_weights(t: &Tape, b: &Bin) -> Lrs {
    let lambda = b.lambda.expect("linear rational spline needs lambdas");
    let s = t.div(b.dy, b.dx);
    let half = t.scale(t.sub(t.log(b.d0), t.log(b.d1)), 0.5);
    let w_end = t.exp(half);
    let oml = t.one_minus(lambda);
    let a = t.add(oml, t.mul(lambda, w_end));
    let wm_num = t.add(t.mul(lambda, b.d0), t.mul(t.mul(oml, w_end), b.d1));
    let w_mid = t.div(wm_num, s);
    let ym_num = t.add(t.mul(oml, b.y0), t.mul(t.mul(lambda, w_end), b.y1));
    let y_mid = t.div(ym_num, a);
    Lrs {
        lambda,
        w_end,
        w_mid,
        y_mid,
    }
}

fn lrs_piece(t: &Tape, b: &Bin, w: &Lrs, left: Vec<bool>) -> Piece {
    let m = t.shape(b.x0)[0];
    let zero = t.leaf(Tensor::zeros(m, 1));
    let one = t.leaf(Tensor::filled(m, 1, 1.0));
    Piece {
        p0: t.select(left.clone(), zero, w.lambda),
        p1: t.select(left.clone(), w.lambda, one),
        w0: t.select(left.clone(), one, w.w_mid),
        w1: t.select(left.clone(), w.w_mid, w.w_end),
        y0: t.select(left.clone(), b.y0, w.y_mid),
        y1: t.select(left, w.y_mid, b.y1),
    }
}

/// `log dy/dphi` of a piece at `phi`.
fn piece_log_slope(t: &Tape, p: &Piece, phi: Var) -> Var {
    let a = t.mul(p.w0, t.sub(p.p1, phi));
    let b = t.mul(p.w1, t.sub(phi, p.p0));
    let terms = [
        t.log(p.w0),
        t.log(p.w1),
        t.log(t.sub(p.p1, p.p0)),
        t.log(t.sub(p.y1, p.y0)),
    ];
    let num = terms[1..].iter().fold(terms[0], |acc, &v| t.add(acc, v));
    t.sub(num, t.scale(t.log(t.add(a, b)), 2.0))
}

fn lrs_forward(t: &Tape, b: &Bin, x: Var) -> (Var, Var) {
    let w = lrs_weights(t, b);
    let phi = t.div(t.sub(x, b.x0), b.dx);
    let (pv, lv) = (t.value(phi), t.value(w.lambda));
    let left = pv.data().iter().zip(lv.data()).map(|(p, l)| p <= l).collect();
    let p = lrs_piece(t, b, &w, left);
    let a = t.mul(p.w0, t.sub(p.p1, phi));
    let bb = t.mul(p.w1, t.sub(phi, p.p0));
    let y = t.div(t.add(t.mul(a, p.y0), t.mul(bb, p.y1)), t.add(a, bb));
    let ld = t.sub(piece_log_slope(t, &p, phi), t.log(b.dx));
    (y, ld)
}

fn lrs_inverse(t: &Tape, b: &Bin, y: Var) -> (Var, Var) {
    let w = lrs_weights(t, b);
    let (yv, mv) = (t.value(y), t.value(w.y_mid));
    let left = yv.data().iter().zip(mv.data()).map(|(y, m)| y <= m).collect();
    let p = lrs_piece(t, b, &w, left);
    let u = t.mul(p.w0, t.sub(y, p.y0));
    let v = t.mul(p.w1, t.sub(p.y1, y));
    let num = t.add(t.mul(p.p1, u), t.mul(p.p0, v));
    let phi = t.div(num, t.add(u, v));
    let x = t.add(b.x0, t.mul(phi, b.dx));
    let ld = t.sub(t.log(b.dx), piece_log_slope(t, &p, phi));
    (x, ld)
}

fn qrs_log_slope(t: &Tape, b: &Bin, s: Var, xi: Var) -> Var {
    let omx = t.one_minus(xi);
    let th = t.mul(xi, omx);
    let k = t.sub(t.add(b.d0, b.d1), t.scale(s, 2.0));
    let den = t.add(s, t.mul(k, th));
    let num = t.add(
        t.add(t.mul(b.d1, t.square(xi)), t.scale(t.mul(s, th), 2.0)),
        t.mul(b.d0, t.square(omx)),
    );
    let ls = t.scale(t.log(s), 2.0);
    t.sub(t.add(ls, t.log(num)), t.scale(t.log(den), 2.0))
}

fn qrs_forward(t: &Tape, b: &Bin, x: Var) -> (Var, Var) {
    let s = t.div(b.dy, b.dx);
    let xi = t.div(t.sub(x, b.x0), b.dx);
    let th = t.mul(xi, t.one_minus(xi));
    let k = t.sub(t.add(b.d0, b.d1), t.scale(s, 2.0));
    let den = t.add(s, t.mul(k, th));
    let num = t.add(t.mul(s, t.square(xi)), t.mul(b.d0, th));
    let y = t.add(b.y0, t.div(t.mul(b.dy, num), den));
    (y, qrs_log_slope(t, b, s, xi))
}

fn qrs_inverse(t: &Tape, b: &Bin, y: Var) -> (Var, Var) {
    let s = t.div(b.dy, b.dx);
    let r = t.sub(y, b.y0);
    let k = t.sub(t.add(b.d0, b.d1), t.scale(s, 2.0));
    let rk = t.mul(r, k);
    let qa = t.add(t.mul(b.dy, t.sub(s, b.d0)), rk);
    let qb = t.sub(t.mul(b.dy, b.d0), rk);
    let qc = t.neg(t.mul(s, r));
    let disc = t.sub(t.square(qb), t.scale(t.mul(qa, qc), 4.0));
    let m = t.shape(y)[0];
    let disc = t.max(disc, t.leaf(Tensor::filled(m, 1, 1e-300)));
    let den = t.neg(t.add(qb, t.sqrt(disc)));
    let xi = t.div(t.scale(qc, 2.0), den);
    let x = t.add(b.x0, t.mul(xi, b.dx));
    (x, t.neg(qrs_log_slope(t, b, s, xi)))
}

/// Applies `m` scalar splines, one per row. `raw` is `[m, P]`, `v` is `[m, 1]`.
/// Returns the image and `log |dy/dx|`, both `[m, 1]`. Inputs outside
/// `[-B, B]` pass through unchanged with zero log-slope.
pub(crate) fn apply(t: &Tape, spec: &SplineSpec, raw: Var, v: Var, inverse: bool) -> (Var, Var) {
    let m = t.shape(v)[0];
    let inside: Vec<bool> = t.with_value(v, |x| x.data().iter().map(|x| x.abs() <= spec.bound).collect());
    let zero = t.leaf(Tensor::zeros(m, 1));
    let safe = t.select(inside.clone(), v, zero);
    let kn = knots(t, raw, spec);
    let edges = if inverse { kn.ys } else { kn.xs };
    let idx = locate(t, edges, safe);
    let b = bin(t, &kn, &idx);
    let (out, ld) = match (spec.kind, inverse) {
        (SplineKind::LinearRational, false) => lrs_forward(t, &b, safe),
        (SplineKind::LinearRational, true) => lrs_inverse(t, &b, safe),
        (SplineKind::QuadraticRational, false) => qrs_forward(t, &b, safe),
        (SplineKind::QuadraticRational, true) => qrs_inverse(t, &b, safe),
    };
    (t.select(inside.clone(), out, v), t.select(inside, ld, zero))
}
