//! Standard normal helpers in the log domain.

use statrs::function::erf::erfc;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn ln_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

pub fn cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `ln Phi(z)`, accurate deep into the lower tail.
pub fn ln_cdf(z: f64) -> f64 {
    if z > 0.0 {
        (-0.5 * erfc(z / std::f64::consts::SQRT_2)).ln_1p()
    } else if z > -35.0 {
        (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln()
    } else {
        // Mills-ratio asymptotic series.
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2)
            + 105.0 / (z2 * z2 * z2 * z2);
        ln_pdf(z) - (-z).ln() + series.ln()
    }
}

/// Mixture of univariate normals, used for copula marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMixture1d {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

fn log_sum_exp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl NormalMixture1d {
    pub fn normal(mean: f64, sd: f64) -> Self {
        Self {
            weights: vec![1.0],
            means: vec![mean],
            sds: vec![sd],
        }
    }

    fn components(&self) -> impl Iterator<Item = (f64, f64, f64)> + Clone + '_ {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.sds)
            .map(|((&w, &m), &s)| (w, m, s))
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        log_sum_exp(
            self.components()
                .map(move |(w, m, s)| w.ln() + ln_pdf((x - m) / s) - s.ln()),
        )
    }

    pub fn ln_cdf(&self, x: f64) -> f64 {
        log_sum_exp(self.components().map(move |(w, m, s)| w.ln() + ln_cdf((x - m) / s)))
    }

    /// `d/dx ln f(x)`.
    pub fn d_ln_pdf(&self, x: f64) -> f64 {
        let lp = self.ln_pdf(x);
        self.components()
            .map(|(w, m, s)| {
                let r = (w.ln() + ln_pdf((x - m) / s) - s.ln() - lp).exp();
                -r * (x - m) / (s * s)
            })
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.components().map(|(w, m, _)| w * m).sum()
    }

    /// Solves `ln F(x) = ln_u` by bisection to `tol` in `x`.
    pub fn quantile_ln(&self, ln_u: f64, tol: f64) -> f64 {
        let spread = self.sds.iter().copied().fold(0.0, f64::max) * 40.0;
        let mut lo = self.means.iter().copied().fold(f64::INFINITY, f64::min) - spread;
        let mut hi = self.means.iter().copied().fold(f64::NEG_INFINITY, f64::max) + spread;
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.ln_cdf(mid) < ln_u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}
