use rand::Rng as _;
use temperflow::diff::{grad, Tape, Var};
use temperflow::flows::{Architecture, Base, Flow, SplineKind};
use temperflow::rng::{stream, Purpose, Rng};
use temperflow::Tensor;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

fn rel_err(g: f64, fd: f64) -> f64 {
    (g - fd).abs() / g.abs().max(fd.abs()).max(1e-3)
}

/// Compares reverse-mode gradients of a scalar-valued `build` with central
/// differences in every parameter entry.
fn check(name: &str, params: Vec<Tensor>, build: impl Fn(&Tape, &[Var]) -> Var) {
    let (_, g) = grad(&params, &build).unwrap();
    let value = |p: &[Tensor]| grad(p, &build).unwrap().0;
    for (k, p) in params.iter().enumerate() {
        for e in 0..p.len() {
            let mut plus = params.clone();
            plus[k].data_mut()[e] += H;
            let mut minus = params.clone();
            minus[k].data_mut()[e] -= H;
            let fd = (value(&plus) - value(&minus)) / (2.0 * H);
            let got = g[k].data()[e];
            assert!(rel_err(got, fd) <= TOL, "{name}: param {k} entry {e}: {got} vs {fd}");
        }
    }
}

/// `sum(w * out)` with fixed weights so every output entry matters.
fn weighted(t: &Tape, out: Var, seed: u64) -> Var {
    let [r, c] = t.shape(out);
    let w = t.leaf(uniform(r, c, -1.0, 1.0, &mut stream(seed, Purpose::Eval, 99)));
    let m = t.mul(out, w);
    t.sum(m)
}

#[test]
fn binary_primitives_with_broadcasting() {
    let mut rng = stream(1, Purpose::Eval, 0);
    let shapes = [(3, 2, 3, 2), (3, 2, 1, 2), (3, 2, 3, 1), (2, 3, 1, 1)];
    for (ar, ac, br, bc) in shapes {
        let a = uniform(ar, ac, -2.0, 2.0, &mut rng);
        let b = uniform(br, bc, 0.5, 2.0, &mut rng);
        let ps = vec![a, b];
        check("add", ps.clone(), |t, v| weighted(t, t.add(v[0], v[1]), 1));
        check("sub", ps.clone(), |t, v| weighted(t, t.sub(v[0], v[1]), 2));
        check("mul", ps.clone(), |t, v| weighted(t, t.mul(v[0], v[1]), 3));
        check("div", ps.clone(), |t, v| weighted(t, t.div(v[0], v[1]), 4));
    }
    // max away from ties
    let a = Tensor::new(2, 2, vec![1.0, -1.0, 0.3, 2.0]).unwrap();
    let b = Tensor::new(2, 2, vec![0.5, 0.2, 0.9, -3.0]).unwrap();
    check("max", vec![a, b], |t, v| weighted(t, t.max(v[0], v[1]), 5));
}

#[test]
fn unary_primitives() {
    let mut rng = stream(2, Purpose::Eval, 0);
    let x = uniform(3, 3, -2.0, 2.0, &mut rng);
    let pos = uniform(3, 3, 0.2, 3.0, &mut rng);
    check("neg", vec![x.clone()], |t, v| weighted(t, t.neg(v[0]), 6));
    check("scale", vec![x.clone()], |t, v| weighted(t, t.scale(v[0], -1.7), 7));
    check("shift", vec![x.clone()], |t, v| weighted(t, t.shift(v[0], 0.4), 8));
    check("exp", vec![x.clone()], |t, v| weighted(t, t.exp(v[0]), 9));
    check("log", vec![pos.clone()], |t, v| weighted(t, t.log(v[0]), 10));
    check("tanh", vec![x.clone()], |t, v| weighted(t, t.tanh(v[0]), 11));
    check("softplus", vec![x.clone()], |t, v| weighted(t, t.softplus(v[0]), 12));
    check("sigmoid", vec![x.clone()], |t, v| weighted(t, t.sigmoid(v[0]), 13));
    check("square", vec![x.clone()], |t, v| weighted(t, t.square(v[0]), 14));
    check("sqrt", vec![pos], |t, v| weighted(t, t.sqrt(v[0]), 15));
    check("one_minus", vec![x.clone()], |t, v| weighted(t, t.one_minus(v[0]), 16));
    let away = x.map(|v| if v.abs() < 0.1 { v + 0.5 } else { v });
    check("abs", vec![away], |t, v| weighted(t, t.abs(v[0]), 17));
}

#[test]
fn reductions_and_layout() {
    let mut rng = stream(3, Purpose::Eval, 0);
    let x = uniform(3, 3, -2.0, 2.0, &mut rng);
    let y = uniform(3, 2, -2.0, 2.0, &mut rng);
    check("sum", vec![x.clone()], |t, v| {
        let e = t.exp(v[0]);
        t.sum(e)
    });
    check("mean", vec![x.clone()], |t, v| {
        let s = t.square(v[0]);
        t.mean(s)
    });
    check("row_sum", vec![x.clone()], |t, v| weighted(t, t.row_sum(v[0]), 18));
    check("col_sum", vec![x.clone()], |t, v| weighted(t, t.col_sum(v[0]), 19));
    check("gather_cols", vec![x.clone()], |t, v| weighted(t, t.gather_cols(v[0], vec![2, 0, 2]), 20));
    check("gather_per_row", vec![x.clone()], |t, v| weighted(t, t.gather_per_row(v[0], vec![1, 0, 2]), 21));
    check("concat_cols", vec![x.clone(), y.clone()], |t, v| weighted(t, t.concat_cols(&[v[0], v[1], v[0]]), 22));
    check("reshape", vec![y.clone()], |t, v| weighted(t, t.reshape(v[0], 2, 3), 23));
    let mask = vec![true, false, false, true, true, false];
    check("select", vec![y.clone(), y.map(|a| a * a)], |t, v| weighted(t, t.select(mask.clone(), v[0], v[1]), 24));
    check("softmax_rows", vec![x.clone()], |t, v| weighted(t, t.softmax_rows(v[0]), 25));
    check("logsumexp", vec![x], |t, v| t.logsumexp(v[0]));
}

#[test]
fn matmul_and_row_fn() {
    let mut rng = stream(4, Purpose::Eval, 0);
    let a = uniform(2, 3, -1.0, 1.0, &mut rng);
    let b = uniform(3, 2, -1.0, 1.0, &mut rng);
    check("matmul", vec![a, b], |t, v| weighted(t, t.matmul(v[0], v[1]), 26));
    // f(x) = sin(x0) * x1 + x2^2 per row
    let x = uniform(3, 3, -1.5, 1.5, &mut rng);
    check("row_fn", vec![x], |t, v| {
        let xv = t.value(v[0]);
        let vals = xv.iter_rows().map(|r| r[0].sin() * r[1] + r[2] * r[2]).collect();
        let jac = Tensor::from_fn(3, 3, |i, j| {
            let r = xv.row(i);
            [r[0].cos() * r[1], r[0].sin(), 2.0 * r[2]][j]
        });
        weighted(t, t.row_fn(v[0], vals, jac), 27)
    });
}

fn perturbed(arch: Architecture, dim: usize, seed: u64) -> Flow {
    let mut f = Flow::init_identity(arch, dim, Base::StandardNormal, seed).unwrap();
    f.perturb(0.2, &mut stream(seed, Purpose::Init, 3));
    f
}

#[test]
fn log_prob_gradients_end_to_end() {
    for dim in 1..=3 {
        for arch in [
            Architecture::affine(2, 6, 1),
            Architecture::spline(SplineKind::LinearRational, 5, 3.0, 2, 6, 1),
            Architecture::spline(SplineKind::QuadraticRational, 5, 3.0, 2, 6, 1),
        ] {
            let name = format!("{:?} d={dim}", arch.transform);
            let flow = perturbed(arch, dim, dim as u64);
            let x = uniform(4, dim, -2.0, 2.0, &mut stream(5, Purpose::Eval, dim as u64));
            let mut params = flow.params().to_vec();
            params.push(x);
            check(&name, params, |t, v| {
                let (theta, x) = v.split_at(v.len() - 1);
                let lp = flow.log_prob_on(t, theta, x[0]).unwrap();
                weighted(t, lp, 28)
            });
        }
    }
}
