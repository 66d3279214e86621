//! Target distributions given by an energy `E(x) = -ln p(x) + const`.

mod analytic;
mod copula;
mod mixture;
pub mod normal;

use std::fmt::Debug;
use std::sync::Arc;

pub use analytic::{make_unimodal_1d, Unimodal1d};
pub use copula::{
    clayton_cdf, clayton_density, clayton_ln_density_from_ln_u, clayton_log_density,
    make_copula_target, CopulaTarget,
};
pub use mixture::{
    make_bimodal_1d, make_gaussian, make_gmm2d, make_gmm2d_with, make_standard_normal,
    GaussianMixture, Layout,
};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::Rng;
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    Real,
    /// `[lo, hi]^d`
    Box { lo: f64, hi: f64 },
}

/// An unnormalized density through its energy.
///
/// Implementations are immutable and reentrant.
pub trait Target: Send + Sync + Debug {
    fn dim(&self) -> usize;

    fn energy(&self, x: &[f64]) -> f64;

    fn has_gradient(&self) -> bool {
        false
    }

    /// Writes `grad E(x)` into `out`.
    fn gradient(&self, _x: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(Error::Unsupported(format!("{} has no analytic gradient", self.name())))
    }

    /// Exact draws from the normalized target, when available.
    fn truth_sample(&self, _n: usize, _rng: &mut Rng) -> Option<Tensor> {
        None
    }

    fn support(&self) -> Support {
        Support::Real
    }

    /// Known mode locations, for occupancy audits.
    fn mode_centers(&self) -> Option<Vec<Vec<f64>>> {
        None
    }

    fn name(&self) -> String;
}

pub type SharedTarget = Arc<dyn Target>;

/// `exp(-beta E(x))` with unknown normalizer. Modes coincide with the base.
#[derive(Debug, Clone)]
pub struct Tempered {
    base: SharedTarget,
    beta: f64,
}

impl Tempered {
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn base(&self) -> &SharedTarget {
        &self.base
    }
}

pub fn temper(target: SharedTarget, beta: f64) -> Result<Tempered> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Config(format!("inverse temperature must lie in (0, 1], got {beta}")));
    }
    Ok(Tempered { base: target, beta })
}

impl Target for Tempered {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn energy(&self, x: &[f64]) -> f64 {
        self.beta * self.base.energy(x)
    }

    fn has_gradient(&self) -> bool {
        self.base.has_gradient()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.base.gradient(x, out)?;
        out.iter_mut().for_each(|g| *g *= self.beta);
        Ok(())
    }

    fn truth_sample(&self, n: usize, rng: &mut Rng) -> Option<Tensor> {
        if self.beta == 1.0 {
            self.base.truth_sample(n, rng)
        } else {
            None
        }
    }

    fn support(&self) -> Support {
        self.base.support()
    }

    fn mode_centers(&self) -> Option<Vec<Vec<f64>>> {
        self.base.mode_centers()
    }

    fn name(&self) -> String {
        format!("{}@beta={}", self.base.name(), self.beta)
    }
}

/// Restriction of a target to the box `[lo, hi]^d`; the energy is `+inf`
/// outside. Normalization stays implicit.
#[derive(Debug, Clone)]
pub struct Truncated {
    base: SharedTarget,
    lo: f64,
    hi: f64,
}

pub fn truncate(target: SharedTarget, lo: f64, hi: f64) -> Result<Truncated> {
    if !(lo < hi) {
        return Err(Error::Config(format!("empty box [{lo}, {hi}]")));
    }
    Ok(Truncated { base: target, lo, hi })
}

impl Truncated {
    fn inside(&self, x: &[f64]) -> bool {
        x.iter().all(|&v| v >= self.lo && v <= self.hi)
    }
}

impl Target for Truncated {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn energy(&self, x: &[f64]) -> f64 {
        if self.inside(x) {
            self.base.energy(x)
        } else {
            f64::INFINITY
        }
    }

    fn has_gradient(&self) -> bool {
        self.base.has_gradient()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.base.gradient(x, out)
    }

    /// Rejection from the base truth sampler.
    fn truth_sample(&self, n: usize, rng: &mut Rng) -> Option<Tensor> {
        let d = self.dim();
        let mut rows = Vec::with_capacity(n * d);
        let mut kept = 0;
        let mut rounds = 0;
        while kept < n {
            rounds += 1;
            if rounds > 1000 {
                return None;
            }
            let batch = self.base.truth_sample(n.max(64), rng)?;
            for r in batch.iter_rows() {
                if kept < n && self.inside(r) {
                    rows.extend_from_slice(r);
                    kept += 1;
                }
            }
        }
        Some(Tensor::new(n, d, rows).expect("shape"))
    }

    fn support(&self) -> Support {
        Support::Box {
            lo: self.lo,
            hi: self.hi,
        }
    }

    fn mode_centers(&self) -> Option<Vec<Vec<f64>>> {
        self.base.mode_centers()
    }

    fn name(&self) -> String {
        format!("{}[{},{}]", self.base.name(), self.lo, self.hi)
    }
}

/// Row energies of `x`.
pub fn energies(target: &dyn Target, x: &Tensor, exec: Exec) -> Vec<f64> {
    exec.map(x.rows(), |i| target.energy(x.row(i)))
}

/// Row energies and gradients of `x`.
pub fn energies_and_gradients(target: &dyn Target, x: &Tensor, exec: Exec) -> Result<(Vec<f64>, Tensor)> {
    let d = x.cols();
    let rows = exec.map(x.rows(), |i| {
        let r = x.row(i);
        let mut g = vec![0.0; d];
        target.gradient(r, &mut g).map(|_| (target.energy(r), g))
    });
    let mut e = Vec::with_capacity(x.rows());
    let mut grads = Vec::with_capacity(x.rows() * d);
    for r in rows {
        let (ei, gi) = r?;
        e.push(ei);
        grads.extend(gi);
    }
    Ok((e, Tensor::new(x.rows(), d, grads)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate;
    use crate::rng::{stream, Purpose};
    use rand::Rng as _;

    fn fd_check(t: &dyn Target, x: &[f64], tol: f64) {
        let mut g = vec![0.0; x.len()];
        t.gradient(x, &mut g).unwrap();
        for j in 0..x.len() {
            let h = 1e-5 * (1.0 + x[j].abs());
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let fd = (t.energy(&xp) - t.energy(&xm)) / (2.0 * h);
            let scale = fd.abs().max(g[j].abs()).max(1e-3);
            assert!(
                (fd - g[j]).abs() / scale < tol,
                "{} at {x:?} coord {j}: fd {fd} vs {}",
                t.name(),
                g[j]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let targets: Vec<SharedTarget> = vec![
            Arc::new(make_unimodal_1d()),
            Arc::new(make_bimodal_1d(8.0)),
            Arc::new(make_gmm2d("circle").unwrap()),
            Arc::new(make_gmm2d("grid").unwrap()),
            Arc::new(make_gmm2d("cross").unwrap()),
            Arc::new(make_copula_target(2, 2, 2.0).unwrap()),
            Arc::new(make_copula_target(3, 4, 2.0).unwrap()),
            Arc::new(temper(Arc::new(make_gmm2d("grid").unwrap()), 0.3).unwrap()),
        ];
        let mut rng = stream(11, Purpose::Eval, 0);
        for t in &targets {
            for _ in 0..50 {
                let x: Vec<f64> = (0..t.dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
                fd_check(t.as_ref(), &x, 1e-4);
            }
        }
        fd_check(&make_bimodal_1d(8.0), &[2.0], 1e-6);
    }

    #[test]
    fn tempering_scales_energy() {
        let base: SharedTarget = Arc::new(make_bimodal_1d(8.0));
        let one = temper(base.clone(), 1.0).unwrap();
        let q = temper(base.clone(), 0.25).unwrap();
        for x in [-2.0, 0.5, 4.0, 8.0] {
            assert_eq!(one.energy(&[x]), base.energy(&[x]));
            assert!((q.energy(&[x]) - 0.25 * base.energy(&[x])).abs() < 1e-15);
        }
        assert!(temper(base.clone(), 0.0).is_err());
        assert!(temper(base, 1.5).is_err());
    }

    #[test]
    fn tempered_standard_normal_has_variance_four() {
        let q = temper(Arc::new(make_standard_normal(1)), 0.25).unwrap();
        let w = |x: f64| (-q.energy(&[x])).exp();
        let z = integrate(w, -60.0, 60.0, 1e-13);
        let m = integrate(|x| x * w(x), -60.0, 60.0, 1e-13) / z;
        let v = integrate(|x| x * x * w(x), -60.0, 60.0, 1e-13) / z - m * m;
        assert!(m.abs() < 1e-10);
        assert!((v - 4.0).abs() < 1e-8);
    }

    #[test]
    fn tempering_preserves_local_minima() {
        let base: SharedTarget = Arc::new(make_bimodal_1d(8.0));
        let grid: Vec<f64> = (0..15_001).map(|i| -3.0 + i as f64 * 1e-3).collect();
        let minima = |t: &dyn Target| -> Vec<f64> {
            let e: Vec<f64> = grid.iter().map(|&x| t.energy(&[x])).collect();
            (1..e.len() - 1)
                .filter(|&i| e[i] < e[i - 1] && e[i] < e[i + 1])
                .map(|i| grid[i])
                .collect()
        };
        let m1 = minima(base.as_ref());
        for beta in [0.1, 0.5] {
            let mb = minima(&temper(base.clone(), beta).unwrap());
            assert_eq!(m1.len(), mb.len());
            for (a, b) in m1.iter().zip(&mb) {
                assert!((a - b).abs() <= 1e-3);
            }
        }
    }

    #[test]
    fn truncation_is_infinite_outside() {
        let t = truncate(Arc::new(make_gmm2d("circle").unwrap()), -5.0, 5.0).unwrap();
        assert!(t.energy(&[5.5, 0.0]).is_infinite());
        assert!(t.energy(&[4.9, 0.0]).is_finite());
        let x = t.truth_sample(500, &mut stream(3, Purpose::Truth, 0)).unwrap();
        assert!(x.data().iter().all(|v| v.abs() <= 5.0));
    }
}
