//! Densities built from a Clayton copula and normal-mixture marginals.
//!
//! `F(x) = C(F_1(x_1), ..., F_d(x_d))` with the Clayton copula
//! `C(u) = (sum u_i^-theta - d + 1)^(-1/theta)`. The joint density is
//! `c(F_1(x_1), ...) prod f_i(x_i)`, where the copula density is the mixed
//! partial
//!
//! `c(u) = prod_{k<d} (1 + k theta) * S^-(1/theta + d) * prod u_i^-(theta+1)`,
//! `S = sum u_i^-theta - d + 1`.
//!
//! Everything is evaluated from `ln u_i` so that points deep in a marginal
//! tail stay finite.

use rand_distr::{Distribution, Exp1, Gamma};

use super::normal::NormalMixture1d;
use super::Target;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::Tensor;

/// `ln S` with `S = sum exp(-theta ln u_i) - (d - 1)`.
fn ln_s(ln_u: &[f64], theta: f64) -> f64 {
    let a: Vec<f64> = ln_u.iter().map(|l| -theta * l).collect();
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let d = ln_u.len() as f64;
    m + (a.iter().map(|v| (v - m).exp()).sum::<f64>() - (d - 1.0) * (-m).exp()).ln()
}

/// Copula log-density from `ln u`.
pub fn clayton_ln_density_from_ln_u(ln_u: &[f64], theta: f64) -> f64 {
    let d = ln_u.len();
    let norm: f64 = (0..d).map(|k| (1.0 + k as f64 * theta).ln()).sum();
    norm - (1.0 / theta + d as f64) * ln_s(ln_u, theta)
        - (theta + 1.0) * ln_u.iter().sum::<f64>()
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("Clayton theta must be positive, got {theta}")))
    }
}

/// Clayton copula log-density on the open unit cube.
pub fn clayton_log_density(u: &[f64], theta: f64) -> Result<f64> {
    check_theta(theta)?;
    if u.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
        return Err(Error::Domain(format!("copula argument outside (0,1)^d: {u:?}")));
    }
    let ln_u: Vec<f64> = u.iter().map(|v| v.ln()).collect();
    Ok(clayton_ln_density_from_ln_u(&ln_u, theta))
}

pub fn clayton_density(u: &[f64], theta: f64) -> Result<f64> {
    clayton_log_density(u, theta).map(f64::exp)
}

/// Clayton copula CDF `C(u)`.
pub fn clayton_cdf(u: &[f64], theta: f64) -> f64 {
    let d = u.len() as f64;
    (u.iter().map(|v| v.powf(-theta)).sum::<f64>() - d + 1.0).powf(-1.0 / theta)
}

#[derive(Debug, Clone)]
pub struct CopulaTarget {
    s: usize,
    theta: f64,
    marginals: Vec<NormalMixture1d>,
}

/// First `s` marginals `0.7 N(-1, 0.2^2) + 0.3 N(1, 0.2^2)`, remaining
/// `N(0, 0.5^2)`, joined by a Clayton copula. The target has `2^s` modes.
pub fn make_copula_target(s: usize, d: usize, theta: f64) -> Result<CopulaTarget> {
    check_theta(theta)?;
    if s < 1 || s > d {
        return Err(Error::Config(format!("copula target needs 1 <= s <= d, got s={s}, d={d}")));
    }
    let bimodal = NormalMixture1d {
        weights: vec![0.7, 0.3],
        means: vec![-1.0, 1.0],
        sds: vec![0.2, 0.2],
    };
    let marginals = (0..d)
        .map(|i| {
            if i < s {
                bimodal.clone()
            } else {
                NormalMixture1d::normal(0.0, 0.5)
            }
        })
        .collect();
    Ok(CopulaTarget { s, theta, marginals })
}

impl CopulaTarget {
    pub fn marginals(&self) -> &[NormalMixture1d] {
        &self.marginals
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

impl Target for CopulaTarget {
    fn dim(&self) -> usize {
        self.marginals.len()
    }

    fn energy(&self, x: &[f64]) -> f64 {
        let mut ln_u = Vec::with_capacity(x.len());
        let mut ln_f = 0.0;
        for (m, &xi) in self.marginals.iter().zip(x) {
            ln_u.push(m.ln_cdf(xi));
            ln_f += m.ln_pdf(xi);
        }
        -(clayton_ln_density_from_ln_u(&ln_u, self.theta) + ln_f)
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let theta = self.theta;
        let d = x.len() as f64;
        let ln_u: Vec<f64> = self.marginals.iter().zip(x).map(|(m, &v)| m.ln_cdf(v)).collect();
        let ls = ln_s(&ln_u, theta);
        for (i, (m, &xi)) in self.marginals.iter().zip(x).enumerate() {
            // d ln c / d u_i * f_i = (f_i/u_i) [(1 + d theta) u_i^-theta / S - (theta + 1)]
            let f_over_u = (m.ln_pdf(xi) - ln_u[i]).exp();
            let tail = (-theta * ln_u[i] - ls).exp();
            let dlnc = f_over_u * ((1.0 + d * theta) * tail - (theta + 1.0));
            out[i] = -dlnc - m.d_ln_pdf(xi);
        }
        Ok(())
    }

    /// Gamma-frailty construction: `V ~ Gamma(1/theta, 1)`, `E_i ~ Exp(1)`,
    /// `u_i = (1 + E_i / V)^(-1/theta)`, then `x_i = F_i^-1(u_i)` by bisection.
    fn truth_sample(&self, n: usize, rng: &mut Rng) -> Option<Tensor> {
        let d = self.dim();
        let frailty = Gamma::new(1.0 / self.theta, 1.0).expect("valid gamma");
        let mut out = Tensor::zeros(n, d);
        for i in 0..n {
            let v: f64 = frailty.sample(rng);
            let row = out.row_mut(i);
            for (r, m) in row.iter_mut().zip(&self.marginals) {
                let e: f64 = Exp1.sample(rng);
                let ln_u = -(e / v).ln_1p() / self.theta;
                *r = m.quantile_ln(ln_u, 1e-12);
            }
        }
        Some(out)
    }

    fn mode_centers(&self) -> Option<Vec<Vec<f64>>> {
        let d = self.dim();
        Some(
            (0..1usize << self.s)
                .map(|mask| {
                    (0..d)
                        .map(|i| {
                            if i >= self.s {
                                0.0
                            } else if mask >> i & 1 == 1 {
                                1.0
                            } else {
                                -1.0
                            }
                        })
                        .collect()
                })
                .collect(),
        )
    }

    fn name(&self) -> String {
        format!("copula_s{}_d{}", self.s, self.dim())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_at_center() {
        // ln 3 - 2.5 ln 7 + ln 64
        let v = clayton_log_density(&[0.5, 0.5], 2.0).unwrap();
        let expected = 3f64.ln() - 2.5 * 7f64.ln() + 64f64.ln();
        assert!((v - expected).abs() < 1e-14);
        assert!((v - 0.392_72).abs() < 1e-5);
    }

    #[test]
    fn matches_mixed_partial_of_cdf() {
        let h = 1e-4;
        for &(a, b) in &[(0.5, 0.5), (0.2, 0.7), (0.9, 0.35)] {
            let c = |x: f64, y: f64| clayton_cdf(&[x, y], 2.0);
            let fd = (c(a + h, b + h) - c(a + h, b - h) - c(a - h, b + h) + c(a - h, b - h))
                / (4.0 * h * h);
            let exact = clayton_density(&[a, b], 2.0).unwrap();
            assert!((fd / exact - 1.0).abs() < 1e-6, "({a},{b}): {fd} vs {exact}");
        }
    }

    #[test]
    fn symmetric_and_domain_checked() {
        let a = clayton_density(&[0.3, 0.8], 2.0).unwrap();
        let b = clayton_density(&[0.8, 0.3], 2.0).unwrap();
        assert!((a - b).abs() < 1e-14);
        assert!(matches!(clayton_density(&[0.0, 0.5], 2.0), Err(Error::Domain(_))));
        assert!(matches!(clayton_density(&[0.5, 1.0], 2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn energy_finite_everywhere_reasonable() {
        let t = make_copula_target(3, 4, 2.0).unwrap();
        assert!(t.energy(&[0.0; 4]).is_finite());
        assert!(t.energy(&[-12.0, 9.0, -30.0, 20.0]).is_finite());
        assert_eq!(t.mode_centers().unwrap().len(), 8);
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(make_copula_target(0, 2, 2.0).is_err());
        assert!(make_copula_target(3, 2, 2.0).is_err());
        assert!(make_copula_target(1, 2, -1.0).is_err());
    }
}
