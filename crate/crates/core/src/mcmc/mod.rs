//! Baseline Markov chain samplers: random-walk Metropolis–Hastings,
//! Hamiltonian Monte Carlo and parallel tempering.
//!
//! A chain runs `burnin + n_keep * thin` transitions and keeps every
//! `thin`-th state after burn-in. Chain `i` of a run draws from stream
//! `(seed, Chain, i)`, proposal noise first and then one acceptance uniform
//! per step, so a one-chain tempering run at `beta = 1` replays
//! [`mh_chain`] exactly.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose, Rng};
use crate::targets::Target;
use crate::Tensor;

/// Metropolis rule: accept when `ln u < log_ratio`. NaN ratios reject.
pub fn metropolis_accept(log_ratio: f64, u: f64) -> bool {
    u.ln() < log_ratio
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub samples: Tensor,
    pub acceptance_rate: f64,
    /// Proposals rejected because of a non-finite energy or gradient.
    pub rejected_nonfinite: usize,
}

fn check_run(target: &dyn Target, init: &[f64], n_keep: usize, thin: usize) -> Result<()> {
    if init.len() != target.dim() {
        return Err(Error::Config(format!("initial state has {} coordinates, target has {}", init.len(), target.dim())));
    }
    if thin == 0 || n_keep == 0 {
        return Err(Error::Config("n_keep and thin must be positive".into()));
    }
    Ok(())
}

/// Standard-normal initial states, one row per chain.
pub fn normal_init(chains: usize, dim: usize, seed: u64) -> Tensor {
    let mut rng = stream(seed, Purpose::Init, 0);
    Tensor::from_fn(chains, dim, |_, _| StandardNormal.sample(&mut rng))
}

/// One random-walk chain: position, its cached untempered energy, the
/// chain's own random stream and acceptance counts.
#[derive(Debug, Clone)]
pub struct ChainState {
    x: Vec<f64>,
    energy: f64,
    rng: Rng,
    accepted: usize,
    steps: usize,
}

impl ChainState {
    pub fn new(target: &dyn Target, x: Vec<f64>, rng: Rng) -> Self {
        let energy = target.energy(&x);
        Self {
            x,
            energy,
            rng,
            accepted: 0,
            steps: 0,
        }
    }

    pub fn position(&self) -> &[f64] {
        &self.x
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.steps.max(1) as f64
    }

    /// Metropolis step targeting `exp(-beta E)`.
    pub fn step(&mut self, target: &dyn Target, beta: f64, sigma: f64, buf: &mut [f64]) {
        for (b, x) in buf.iter_mut().zip(&self.x) {
            let e: f64 = StandardNormal.sample(&mut self.rng);
            *b = x + sigma * e;
        }
        let proposed = target.energy(buf);
        let u: f64 = self.rng.random();
        self.steps += 1;
        if metropolis_accept(beta * (self.energy - proposed), u) {
            self.x.copy_from_slice(buf);
            self.energy = proposed;
            self.accepted += 1;
        }
    }
}

/// Random-walk Metropolis–Hastings with isotropic normal proposals.
pub fn mh_chain(
    target: &dyn Target,
    init: &[f64],
    sigma: f64,
    n_keep: usize,
    burnin: usize,
    thin: usize,
    seed: u64,
) -> Result<ChainOutput> {
    check_run(target, init, n_keep, thin)?;
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("proposal sd must be positive, got {sigma}")));
    }
    let mut w = ChainState::new(target, init.to_vec(), stream(seed, Purpose::Chain, 0));
    let mut buf = vec![0.0; init.len()];
    let mut out = Vec::with_capacity(n_keep * init.len());
    for it in 0..burnin + n_keep * thin {
        w.step(target, 1.0, sigma, &mut buf);
        if it >= burnin && (it - burnin + 1).is_multiple_of(thin) {
            out.extend_from_slice(&w.x);
        }
    }
    Ok(ChainOutput {
        samples: Tensor::new(n_keep, init.len(), out)?,
        acceptance_rate: w.acceptance_rate(),
        rejected_nonfinite: 0,
    })
}

/// `steps` leapfrog steps of size `eps` under unit mass.
pub fn leapfrog(target: &dyn Target, x: &[f64], p: &[f64], eps: f64, steps: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut x, mut p) = (x.to_vec(), p.to_vec());
    let mut g = vec![0.0; x.len()];
    target.gradient(&x, &mut g)?;
    for _ in 0..steps {
        p.iter_mut().zip(&g).for_each(|(p, g)| *p -= 0.5 * eps * g);
        x.iter_mut().zip(&p).for_each(|(x, p)| *x += eps * p);
        target.gradient(&x, &mut g)?;
        p.iter_mut().zip(&g).for_each(|(p, g)| *p -= 0.5 * eps * g);
    }
    Ok((x, p))
}

fn kinetic(p: &[f64]) -> f64 {
    0.5 * p.iter().map(|v| v * v).sum::<f64>()
}

/// Hamiltonian Monte Carlo with unit mass and a Metropolis correction.
#[allow(clippy::too_many_arguments)]
pub fn hmc_chain(
    target: &dyn Target,
    init: &[f64],
    eps: f64,
    n_leapfrog: usize,
    n_keep: usize,
    burnin: usize,
    thin: usize,
    seed: u64,
) -> Result<ChainOutput> {
    check_run(target, init, n_keep, thin)?;
    if !target.has_gradient() {
        return Err(Error::Unsupported(format!("{} has no gradient for HMC", target.name())));
    }
    if !(eps > 0.0) || n_leapfrog == 0 {
        return Err(Error::Config("HMC needs a positive step size and at least one leapfrog step".into()));
    }
    let d = init.len();
    let mut rng = stream(seed, Purpose::Chain, 0);
    let mut x = init.to_vec();
    let mut energy = target.energy(&x);
    let (mut accepted, mut bad) = (0, 0);
    let total = burnin + n_keep * thin;
    let mut out = Vec::with_capacity(n_keep * d);
    for it in 0..total {
        let p0: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let u: f64 = rng.random();
        let (x1, p1) = leapfrog(target, &x, &p0, eps, n_leapfrog)?;
        let e1 = target.energy(&x1);
        let h0 = energy + kinetic(&p0);
        let h1 = e1 + kinetic(&p1);
        if !h1.is_finite() {
            bad += 1;
        } else if metropolis_accept(h0 - h1, u) {
            x = x1;
            energy = e1;
            accepted += 1;
        }
        if it >= burnin && (it - burnin + 1).is_multiple_of(thin) {
            out.extend_from_slice(&x);
        }
    }
    Ok(ChainOutput {
        samples: Tensor::new(n_keep, d, out)?,
        acceptance_rate: accepted as f64 / total as f64,
        rejected_nonfinite: bad,
    })
}

/// Temperature ladder and proposal scale for parallel tempering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtConfig {
    /// Increasing inverse temperatures ending at 1.
    pub betas: Vec<f64>,
    /// Proposal sd at `beta = 1`; chain `beta` uses `sigma / sqrt(beta)`.
    pub sigma: f64,
}

impl PtConfig {
    /// `n` inverse temperatures equally spaced in log scale from `beta_min`
    /// to 1.
    pub fn geometric(n: usize, beta_min: f64, sigma: f64) -> Result<Self> {
        if n == 0 || !(beta_min > 0.0 && beta_min <= 1.0) {
            return Err(Error::Config("need at least one chain and beta_min in (0, 1]".into()));
        }
        let betas = if n == 1 {
            vec![1.0]
        } else {
            let lo = beta_min.ln();
            let mut b: Vec<f64> = (0..n).map(|i| (lo * (1.0 - i as f64 / (n - 1) as f64)).exp()).collect();
            b[n - 1] = 1.0;
            b
        };
        Ok(Self { betas, sigma })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = !self.betas.is_empty()
            && self.betas[0] > 0.0
            && self.betas.windows(2).all(|w| w[0] < w[1])
            && *self.betas.last().unwrap() == 1.0;
        if !ok {
            return Err(Error::Config("tempering ladder must increase strictly and end at 1".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config("proposal sd must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PtOutput {
    /// States of the `beta = 1` chain.
    pub samples: Tensor,
    /// Within-chain acceptance rate, per chain.
    pub acceptance: Vec<f64>,
    /// Swap acceptance per adjacent pair `(i, i + 1)`.
    pub swap_rates: Vec<f64>,
}

/// Exchange step for one adjacent pair; `energies` are untempered.
fn swap_pair(walkers: &mut [ChainState], betas: &[f64], i: usize, u: f64) -> bool {
    let (bi, bj) = (betas[i], betas[i + 1]);
    let (ei, ej) = (walkers[i].energy, walkers[i + 1].energy);
    if metropolis_accept((bi - bj) * (ei - ej), u) {
        let (a, b) = walkers.split_at_mut(i + 1);
        std::mem::swap(&mut a[i].x, &mut b[0].x);
        std::mem::swap(&mut a[i].energy, &mut b[0].energy);
        true
    } else {
        false
    }
}

/// Parallel tempering: each sweep moves every chain once at its own
/// temperature, then attempts swaps on the even pairs (even sweeps) or the
/// odd pairs (odd sweeps).
pub fn parallel_tempering(
    target: &dyn Target,
    cfg: &PtConfig,
    init: &Tensor,
    n_keep: usize,
    burnin: usize,
    thin: usize,
    seed: u64,
) -> Result<PtOutput> {
    cfg.validate()?;
    let k = cfg.betas.len();
    if init.rows() != k {
        return Err(Error::Config(format!("need {k} initial states, got {}", init.rows())));
    }
    check_run(target, init.row(0), n_keep, thin)?;
    let d = init.cols();
    let mut walkers: Vec<ChainState> = (0..k)
        .map(|i| ChainState::new(target, init.row(i).to_vec(), stream(seed, Purpose::Chain, i as u64)))
        .collect();
    let mut swap_rng = stream(seed, Purpose::Swap, 0);
    let mut swaps = vec![(0usize, 0usize); k.saturating_sub(1)];
    let mut buf = vec![0.0; d];
    let mut out = Vec::with_capacity(n_keep * d);
    for it in 0..burnin + n_keep * thin {
        for (w, &b) in walkers.iter_mut().zip(&cfg.betas) {
            w.step(target, b, cfg.sigma / b.sqrt(), &mut buf);
        }
        for i in (it % 2..k.saturating_sub(1)).step_by(2) {
            let u: f64 = swap_rng.random();
            swaps[i].1 += 1;
            if swap_pair(&mut walkers, &cfg.betas, i, u) {
                swaps[i].0 += 1;
            }
        }
        if it >= burnin && (it - burnin + 1).is_multiple_of(thin) {
            out.extend_from_slice(&walkers[k - 1].x);
        }
    }
    Ok(PtOutput {
        samples: Tensor::new(n_keep, d, out)?,
        acceptance: walkers.iter().map(|w| w.acceptance_rate()).collect(),
        swap_rates: swaps
            .iter()
            .map(|&(a, n)| if n == 0 { 0.0 } else { a as f64 / n as f64 })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{make_bimodal_1d, make_standard_normal};

    fn moments(x: &Tensor) -> (f64, f64) {
        let n = x.rows() as f64;
        let m = x.mean();
        (m, x.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn mh_recovers_standard_normal() {
        let out = mh_chain(&make_standard_normal(1), &[0.0], 2.4, 100_000, 1000, 1, 3).unwrap();
        let (m, v) = moments(&out.samples);
        assert!(m.abs() <= 0.02, "mean {m}");
        assert!((v - 1.0).abs() <= 0.05, "var {v}");
    }

    #[test]
    fn acceptance_falls_with_proposal_scale() {
        let t = make_standard_normal(1);
        let rates: Vec<f64> = [1.0, 10.0, 100.0]
            .iter()
            .map(|&s| mh_chain(&t, &[0.0], s, 5000, 0, 1, 1).unwrap().acceptance_rate)
            .collect();
        assert!(rates[0] > rates[1] && rates[1] > rates[2], "{rates:?}");
    }

    #[test]
    fn leapfrog_is_reversible() {
        let t = make_bimodal_1d(4.0);
        let (x1, p1) = leapfrog(&t, &[0.3], &[1.1], 0.2, 5).unwrap();
        let neg: Vec<f64> = p1.iter().map(|v| -v).collect();
        let (x2, p2) = leapfrog(&t, &x1, &neg, 0.2, 5).unwrap();
        assert!((x2[0] - 0.3).abs() < 1e-10);
        assert!((p2[0] + 1.1).abs() < 1e-10);
    }

    #[test]
    fn single_chain_tempering_is_mh() {
        let t = make_bimodal_1d(8.0);
        let mh = mh_chain(&t, &[0.5], 0.2, 2000, 200, 1, 11).unwrap();
        let cfg = PtConfig {
            betas: vec![1.0],
            sigma: 0.2,
        };
        let pt = parallel_tempering(&t, &cfg, &Tensor::scalar(0.5), 2000, 200, 1, 11).unwrap();
        assert_eq!(mh.samples, pt.samples);
        assert!(pt.swap_rates.is_empty());
    }

    #[test]
    fn equal_energy_swaps_always_accept() {
        let t = make_standard_normal(1);
        let mut ws = vec![
            ChainState::new(&t, vec![1.0], stream(0, Purpose::Chain, 0)),
            ChainState::new(&t, vec![-1.0], stream(0, Purpose::Chain, 1)),
        ];
        assert!(swap_pair(&mut ws, &[0.5, 1.0], 0, 1.0 - 1e-16));
        assert_eq!(ws[0].x, vec![-1.0]);
    }

    #[test]
    fn geometric_ladder() {
        let c = PtConfig::geometric(5, 0.1, 0.2).unwrap();
        assert_eq!(c.betas.len(), 5);
        assert!((c.betas[0] - 0.1).abs() < 1e-15);
        assert_eq!(c.betas[4], 1.0);
        let r = c.betas[1] / c.betas[0];
        assert!((c.betas[3] / c.betas[2] - r).abs() < 1e-12);
    }

    #[test]
    fn row_count_and_determinism() {
        let t = make_standard_normal(2);
        let a = hmc_chain(&t, &[0.0, 0.0], 0.2, 5, 123, 10, 3, 5).unwrap();
        let b = hmc_chain(&t, &[0.0, 0.0], 0.2, 5, 123, 10, 3, 5).unwrap();
        assert_eq!(a.samples.rows(), 123);
        assert_eq!(a, b);
    }

    #[test]
    fn leapfrog_error_is_second_order() {
        let t = make_standard_normal(1);
        let drift: Vec<f64> = [0.1, 0.2, 0.4]
            .iter()
            .map(|&eps| {
                let steps = (2.0 / eps) as usize;
                let (x, p) = leapfrog(&t, &[1.0], &[0.5], eps, steps).unwrap();
                (t.energy(&x) + kinetic(&p) - t.energy(&[1.0]) - kinetic(&[0.5])).abs()
            })
            .collect();
        for w in drift.windows(2) {
            let r = w[1] / w[0];
            assert!((3.0..5.5).contains(&r), "{drift:?}");
        }
    }

    #[test]
    fn three_state_detailed_balance() {
        let energy = [0.0, 1.0, 0.3];
        let z: f64 = energy.iter().map(|e: &f64| (-e).exp()).sum();
        let pi: Vec<f64> = energy.iter().map(|e| (-e).exp() / z).collect();
        let mut rng = stream(9, Purpose::Chain, 0);
        let mut counts = [[0u64; 3]; 3];
        let mut s = 0usize;
        let n = 400_000;
        for _ in 0..n {
            let j = (s + 1 + rng.random_range(0..2)) % 3;
            let u: f64 = rng.random();
            let next = if metropolis_accept(energy[s] - energy[j], u) { j } else { s };
            counts[s][next] += 1;
            s = next;
        }
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let fij = counts[i][j] as f64 / n as f64;
                let fji = counts[j][i] as f64 / n as f64;
                let se = ((fij + fji) / n as f64).sqrt();
                assert!((fij - fji).abs() <= 4.0 * se + 1e-12, "{i}{j}: {fij} {fji}");
                let expect = pi[i] * 0.5 * (energy[i] - energy[j]).min(0.0).exp();
                assert!((fij - expect).abs() < 0.01, "{fij} vs {expect}");
            }
        }
    }
}
