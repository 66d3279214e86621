use temperflow::mcmc::{hmc_chain, mh_chain, normal_init, parallel_tempering, PtConfig};
use temperflow::targets::{make_bimodal_1d, make_standard_normal};
use temperflow::Tensor;

fn right_mass(x: &Tensor, split: f64) -> f64 {
    x.data().iter().filter(|&&v| v > split).count() as f64 / x.rows() as f64
}

#[test]
fn random_walk_misses_the_far_mode() {
    let t = make_bimodal_1d(8.0);
    let out = mh_chain(&t, &[1.0], 0.2, 1000, 200, 1, 1).unwrap();
    let m = right_mass(&out.samples, 4.5);
    assert!(m <= 0.05, "{m}");
}

#[test]
fn tempering_reaches_the_far_mode_imperfectly() {
    let t = make_bimodal_1d(8.0);
    let cfg = PtConfig::geometric(5, 0.1, 0.2).unwrap();
    let out = parallel_tempering(&t, &cfg, &normal_init(5, 1, 2), 10_000, 200, 1, 2).unwrap();
    let m = right_mass(&out.samples, 4.5);
    println!("pt right-mode mass {m:.3}, swaps {:?}", out.swap_rates);
    assert!((m - 0.3).abs() <= 0.1, "{m}");
}

#[test]
fn hmc_recovers_standard_normal() {
    let out = hmc_chain(&make_standard_normal(1), &[0.0], 0.2, 5, 100_000, 200, 1, 4).unwrap();
    let x = out.samples.data();
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
    assert!(m.abs() <= 0.05 && (v - 1.0).abs() <= 0.05, "{m} {v}");
    assert_eq!(out.rejected_nonfinite, 0);
}
