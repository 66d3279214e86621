use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::Flow;
use crate::rng::{stream, Purpose};
use crate::targets::{energies, Target};
use crate::Tensor;

/// Importance-sampling estimate of `U = integral exp(-E)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub log_value: f64,
    /// Coefficient of variation of the estimate.
    pub cv: f64,
    pub samples: usize,
}

impl Normalizer {
    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }
}

/// Log weights `log w_i = -beta E(x_i) - log h(x_i)` for draws from `h`.
fn log_weights(target: &dyn Target, beta: f64, proposal: &Flow, m: usize, seed: u64) -> Result<Vec<f64>> {
    if target.dim() != proposal.dim() {
        return Err(Error::Config("proposal and target dimensions differ".into()));
    }
    let (x, log_h) = proposal.sample_with_log_prob(m, &mut stream(seed, Purpose::Eval, 0))?;
    let e = energies(target, &x, proposal.exec());
    Ok(e.iter().zip(&log_h).map(|(e, lh)| -beta * e - lh).collect())
}

/// `(log mean w, CV)` with the unbiased variance of the mean.
fn summarize(lw: &[f64]) -> Result<(f64, f64)> {
    let m = lw.len();
    if m < 2 {
        return Err(Error::DegenerateWeights("need at least two draws".into()));
    }
    let mx = lw.iter().copied().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() || lw.iter().any(|v| v.is_nan()) {
        return Err(Error::DegenerateWeights(format!("largest log weight is {mx}")));
    }
    let w: Vec<f64> = lw.iter().map(|v| (v - mx).exp()).collect();
    let mean = w.iter().sum::<f64>() / m as f64;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m as f64 * (m as f64 - 1.0));
    Ok((mx + mean.ln(), var.sqrt() / mean))
}

/// `U-hat = M^{-1} sum exp(-E(X_i) - log h(X_i))` with `X_i ~ h`, computed in
/// the log domain.
pub fn estimate_normalizer(target: &dyn Target, proposal: &Flow, m: usize, seed: u64) -> Result<Normalizer> {
    let lw = log_weights(target, 1.0, proposal, m, seed)?;
    let (log_value, cv) = summarize(&lw)?;
    Ok(Normalizer {
        log_value,
        cv,
        samples: m,
    })
}

/// Coefficient of variation of the importance estimate of the normalizer of
/// `exp(-beta_s E)` under `proposal`.
pub fn cv_diagnostic(proposal: &Flow, beta_s: f64, target: &dyn Target, m: usize, seed: u64) -> Result<f64> {
    if !(beta_s > 0.0 && beta_s <= 1.0) {
        return Err(Error::Config(format!("beta must lie in (0, 1], got {beta_s}")));
    }
    let lw = log_weights(target, beta_s, proposal, m, seed)?;
    Ok(summarize(&lw)?.1)
}

/// Accepted draws and bookkeeping from rejection refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub samples: Tensor,
    pub acceptance_rate: f64,
    /// Envelope `M-hat` on the ratio `f-hat / q`.
    pub envelope: f64,
    pub proposed: usize,
}

const PILOT: usize = 10_000;
const HEADROOM: f64 = 0.1;
const MIN_RATE: f64 = 1e-4;

/// Rejection sampling against `f-hat = exp(-E)/U` with the flow as proposal
/// and envelope `(1 + 0.1)` times the largest ratio on a pilot batch.
pub fn rejection_refine(flow: &Flow, target: &dyn Target, log_u: f64, n: usize, seed: u64) -> Result<Refined> {
    let log_ratio = |x: &Tensor, lq: &[f64]| -> Vec<f64> {
        energies(target, x, flow.exec())
            .iter()
            .zip(lq)
            .map(|(e, q)| -e - log_u - q)
            .collect()
    };
    let (px, pq) = flow.sample_with_log_prob(PILOT, &mut stream(seed, Purpose::Eval, 1))?;
    let pilot_max = log_ratio(&px, &pq).into_iter().fold(f64::NEG_INFINITY, f64::max);
    if !pilot_max.is_finite() {
        return Err(Error::DegenerateWeights("pilot ratios are not finite".into()));
    }
    let log_env = pilot_max + HEADROOM.ln_1p();
    let mut rng = stream(seed, Purpose::Eval, 2);
    let mut accept_rng = stream(seed, Purpose::Accept, 0);
    let mut kept: Vec<f64> = Vec::with_capacity(n * flow.dim());
    let (mut accepted, mut proposed) = (0, 0);
    while accepted < n {
        let batch = (2 * (n - accepted)).clamp(256, 50_000);
        let (x, lq) = flow.sample_with_log_prob(batch, &mut rng)?;
        for (i, lr) in log_ratio(&x, &lq).into_iter().enumerate() {
            proposed += 1;
            let u: f64 = accept_rng.random();
            if u.ln() < lr - log_env {
                kept.extend_from_slice(x.row(i));
                accepted += 1;
                if accepted == n {
                    break;
                }
            }
        }
        if proposed >= PILOT && (accepted as f64) < MIN_RATE * proposed as f64 {
            return Err(Error::LowAcceptance {
                rate: accepted as f64 / proposed as f64,
                min: MIN_RATE,
            });
        }
    }
    Ok(Refined {
        samples: Tensor::new(n, flow.dim(), kept)?,
        acceptance_rate: accepted as f64 / proposed as f64,
        envelope: log_env.exp(),
        proposed,
    })
}
