use rand_distr::{Distribution, StandardNormal};
use temperflow::flows::{Architecture, Base, Flow, SplineKind};
use temperflow::quad::integrate_panels;
use temperflow::rng::{stream, Purpose};
use temperflow::Tensor;

fn arches(layers: usize) -> Vec<(&'static str, Architecture)> {
    vec![
        ("affine", Architecture::affine(layers, 16, 2)),
        ("lrs", Architecture::spline(SplineKind::LinearRational, 8, 4.0, layers, 16, 2)),
        ("qrs", Architecture::spline(SplineKind::QuadraticRational, 8, 4.0, layers, 16, 2)),
    ]
}

fn random_flow(arch: Architecture, dim: usize, seed: u64) -> Flow {
    let mut f = Flow::init_identity(arch, dim, Base::StandardNormal, seed).unwrap();
    f.perturb(0.3, &mut stream(seed, Purpose::Init, 77));
    f
}

/// Rows of N(0, 2.5^2): most fall inside the spline bound, some in the tails.
fn points(n: usize, dim: usize, seed: u64) -> Tensor {
    let mut rng = stream(seed, Purpose::Eval, 5);
    Tensor::from_fn(n, dim, |_, _| {
        let e: f64 = StandardNormal.sample(&mut rng);
        2.5 * e
    })
}

fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        let piv = a[k][k];
        acc += piv.abs().ln();
        for i in k + 1..n {
            let f = a[i][k] / piv;
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
        }
    }
    acc
}

#[test]
fn inverse_round_trip() {
    let mut worst: f64 = 0.0;
    for dim in [1, 2, 8] {
        for layers in [1, 2, 6] {
            for (name, arch) in arches(layers) {
                let flow = random_flow(arch, dim, (dim * 10 + layers) as u64);
                let z = points(200, dim, 1);
                let (x, ld) = flow.forward(&z).unwrap();
                let (z2, ld_inv) = flow.inverse(&x).unwrap();
                let err = z2.max_abs_diff(&z);
                assert!(err <= 1e-6, "{name} d={dim} L={layers}: {err}");
                for (a, b) in ld.iter().zip(&ld_inv) {
                    assert!((a + b).abs() <= 1e-6, "{name} d={dim} L={layers}: logdet {a} vs {b}");
                }
                worst = worst.max(err);
            }
        }
    }
    println!("worst round-trip error {worst:.2e}");
}

#[test]
fn log_det_matches_finite_difference_jacobian() {
    // Jacobian entries can be ~1e-5, so a smaller step loses digits.
    let h = 1e-4;
    for dim in [1, 2, 8] {
        for layers in [1, 2, 6] {
            for (name, arch) in arches(layers) {
                let flow = random_flow(arch, dim, (dim * 7 + layers) as u64);
                let z = points(5, dim, 2);
                let (_, ld) = flow.forward(&z).unwrap();
                for r in 0..z.rows() {
                    let mut jac = vec![vec![0.0; dim]; dim];
                    for j in 0..dim {
                        let mut zp = z.slice_rows(r, r + 1);
                        let mut zm = zp.clone();
                        zp.set(0, j, zp.get(0, j) + h);
                        zm.set(0, j, zm.get(0, j) - h);
                        let xp = flow.forward(&zp).unwrap().0;
                        let xm = flow.forward(&zm).unwrap().0;
                        for (i, row) in jac.iter_mut().enumerate() {
                            row[j] = (xp.get(0, i) - xm.get(0, i)) / (2.0 * h);
                        }
                    }
                    let fd = log_abs_det(jac);
                    assert!((fd - ld[r]).abs() <= 1e-5, "{name} d={dim} L={layers} row {r}: {fd} vs {}", ld[r]);
                }
            }
        }
    }
}

#[test]
fn one_dimensional_flows_are_increasing() {
    for (name, arch) in arches(3) {
        let flow = random_flow(arch, 1, 3);
        let z = Tensor::column((0..2001).map(|i| -8.0 + 0.008 * i as f64).collect());
        let (x, _) = flow.forward(&z).unwrap();
        assert!(x.data().windows(2).all(|w| w[1] > w[0]), "{name}");
    }
}

#[test]
fn one_dimensional_density_integrates_to_one() {
    for (name, arch) in arches(2) {
        let flow = random_flow(arch, 1, 4);
        let density = |x: f64| flow.log_prob(&Tensor::scalar(x)).unwrap()[0].exp();
        let mass = integrate_panels(density, -30.0, 30.0, 240, 1e-12);
        assert!((mass - 1.0).abs() <= 1e-6, "{name}: {mass}");
    }
}

#[test]
fn box_base_flow_stays_inside_and_normalizes() {
    let mut flow = Flow::init_identity(Architecture::affine(2, 8, 1), 1, Base::UniformBox { lo: -1.0, hi: 2.0 }, 5).unwrap();
    flow.perturb(0.3, &mut stream(5, Purpose::Init, 1));
    let x = flow.sample(2000, &mut stream(5, Purpose::Eval, 0)).unwrap();
    assert!(x.data().iter().all(|&v| v > -1.0 && v < 2.0));
    let density = |x: f64| flow.log_prob(&Tensor::scalar(x)).unwrap()[0].exp();
    let mass = integrate_panels(density, -1.0, 2.0, 120, 1e-12);
    assert!((mass - 1.0).abs() <= 1e-5, "{mass}");
}

