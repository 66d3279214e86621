use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::Flow;
use crate::rng::{stream, Purpose};
use crate::quad::integrate_panels;
use crate::targets::{energies, Target};

/// Which energy enters the moment estimates of the beta update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaConvention {
    /// `E` itself: `c3 + c4` then estimates `KL(q_beta || p)`.
    #[default]
    Untempered,
    /// `beta_k E` throughout. The KL estimate collapses to Monte Carlo
    /// noise around zero; kept for comparison.
    Tempered,
}

/// How the flow draws are averaged into the moments of `q_beta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMoments {
    /// Plain averages over flow draws.
    #[default]
    Flow,
    /// `c1`, `c2`, `c3` self-normalized with weights `exp(-beta_k E) / p_theta`,
    /// so rare draws far into the energy tails of an imperfect flow do not
    /// dominate `Var E`. `c4` stays the plain importance estimate.
    Reweighted,
}

/// Moment conventions for [`estimate_beta`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BetaOptions {
    pub convention: BetaConvention,
    pub moments: BetaMoments,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    /// Proposed next inverse temperature, before clamping at 1.
    pub beta: f64,
    /// `c3 + c4`, the estimate of `l(beta_k)`.
    pub kl: f64,
    /// `c2 - c1^2`.
    pub energy_var: f64,
}

/// One step of the adaptive schedule: moves `gamma = log beta` so that
/// `log l` drops by about `1 - alpha`, using the flow (trained at
/// `beta_k`) as a stand-in for the tempered law.
pub fn estimate_beta(
    beta_k: f64,
    flow: &Flow,
    target: &dyn Target,
    m: usize,
    alpha: f64,
    opts: BetaOptions,
    seed: u64,
) -> Result<BetaEstimate> {
    if !(beta_k > 0.0 && beta_k < 1.0) {
        return Err(Error::Config(format!("beta_k must lie in (0, 1), got {beta_k}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if m < 2 {
        return Err(Error::Config("need at least two draws".into()));
    }
    let (x, log_p) = flow.sample_with_log_prob(m, &mut stream(seed, Purpose::Eval, 0))?;
    let raw = energies(target, &x, flow.exec());
    let scale = match opts.convention {
        BetaConvention::Untempered => 1.0,
        BetaConvention::Tempered => beta_k,
    };
    let e: Vec<f64> = raw.iter().map(|v| scale * v).collect();
    let n = m as f64;
    let w: Vec<f64> = match opts.moments {
        BetaMoments::Flow => vec![1.0 / n; m],
        BetaMoments::Reweighted => {
            let lw: Vec<f64> = raw.iter().zip(&log_p).map(|(e, lp)| -beta_k * e - lp).collect();
            let mx = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !mx.is_finite() {
                return Err(Error::DegenerateWeights(format!("largest log weight is {mx}")));
            }
            let w: Vec<f64> = lw.iter().map(|v| (v - mx).exp()).collect();
            let total: f64 = w.iter().sum();
            w.into_iter().map(|v| v / total).collect()
        }
    };
    let c1: f64 = w.iter().zip(&e).map(|(w, e)| w * e).sum();
    let c2: f64 = w.iter().zip(&e).map(|(w, e)| w * e * e).sum();
    let u: Vec<f64> = log_p.iter().zip(&e).map(|(lp, e)| lp + e).collect();
    let c3: f64 = w.iter().zip(&u).map(|(w, u)| w * u).sum();
    let mn = u.iter().copied().fold(f64::INFINITY, f64::min);
    let c4 = -mn + (u.iter().map(|v| (mn - v).exp()).sum::<f64>() / n).ln();
    let var = c2 - c1 * c1;
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::DegenerateVariance(var));
    }
    let kl = c3 + c4;
    let gamma = beta_k.ln() + (1.0 - alpha) * kl / (beta_k * (1.0 - beta_k) * var);
    Ok(BetaEstimate {
        beta: gamma.exp(),
        kl,
        energy_var: var,
    })
}

/// Moments of the tempered law `q_beta ~ exp(-beta E)` of a 1-D target,
/// computed by quadrature on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperedCurve {
    pub beta: f64,
    /// `l(beta) = KL(q_beta || p)`
    pub kl: f64,
    pub mean_energy: f64,
    pub energy_var: f64,
}

impl TemperedCurve {
    /// `d log l / d gamma` at `gamma = log beta`, which equals
    /// `-beta (1 - beta) Var E / l`.
    pub fn log_kl_slope(&self) -> f64 {
        -self.beta * (1.0 - self.beta) * self.energy_var / self.kl
    }
}

fn log_partition(e: &dyn Fn(f64) -> f64, beta: f64, lo: f64, hi: f64, shift: f64) -> f64 {
    integrate_panels(|x| (-beta * (e(x) - shift)).exp(), lo, hi, PANELS, 1e-14).ln() - beta * shift
}

const PANELS: usize = 400;

pub fn tempered_curve(target: &dyn Target, beta: f64, lo: f64, hi: f64) -> Result<TemperedCurve> {
    if target.dim() != 1 {
        return Err(Error::Unsupported("quadrature curve needs a 1-D target".into()));
    }
    if !(beta > 0.0 && beta <= 1.0) || !(lo < hi) {
        return Err(Error::Config(format!("need beta in (0, 1] and lo < hi, got {beta} on [{lo}, {hi}]")));
    }
    let e = |x: f64| target.energy(&[x]);
    // Energy minimum on a coarse grid keeps the exponentials in range.
    let shift = (0..=2000)
        .map(|i| e(lo + (hi - lo) * i as f64 / 2000.0))
        .fold(f64::INFINITY, f64::min);
    let log_zb = log_partition(&e, beta, lo, hi, shift);
    let log_z1 = log_partition(&e, 1.0, lo, hi, shift);
    let q = |x: f64| (-beta * e(x) - log_zb).exp();
    let mean = integrate_panels(|x| q(x) * e(x), lo, hi, PANELS, 1e-14);
    let var = integrate_panels(|x| q(x) * (e(x) - mean).powi(2), lo, hi, PANELS, 1e-14);
    let kl = if beta == 1.0 { 0.0 } else { (1.0 - beta) * mean + log_z1 - log_zb };
    if !(kl.is_finite() && var.is_finite()) {
        return Err(Error::NonFiniteValue { context: format!("tempered curve at beta {beta}") });
    }
    Ok(TemperedCurve {
        beta,
        kl,
        mean_energy: mean,
        energy_var: var,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::make_standard_normal;

    #[test]
    fn gaussian_closed_form() {
        // Flow equal to q_beta = N(0, 1/beta) for E = x^2/2.
        let (beta, alpha) = (0.5f64, 0.9);
        let flow = Flow::constant_affine(&[0.0], &[(1.0 / beta).sqrt()]).unwrap();
        let est = estimate_beta(beta, &flow, &make_standard_normal(1), 400_000, alpha, BetaOptions::default(), 1).unwrap();
        let l = 0.5 * (1.0 / beta - 1.0 + beta.ln());
        let var = 1.0 / (2.0 * beta * beta);
        let expect = (beta.ln() + (1.0 - alpha) * l / (beta * (1.0 - beta) * var)).exp();
        assert!((est.kl - l).abs() < 0.01, "{} vs {l}", est.kl);
        assert!((est.energy_var - var).abs() < 0.05);
        assert!((est.beta - expect).abs() < 0.005, "{} vs {expect}", est.beta);
        assert!(est.beta > beta);
    }

    #[test]
    fn reweighting_is_neutral_for_an_exact_flow() {
        let beta = 0.3f64;
        let flow = Flow::constant_affine(&[0.0], &[(1.0 / beta).sqrt()]).unwrap();
        let t = make_standard_normal(1);
        let plain = estimate_beta(beta, &flow, &t, 20_000, 0.7, BetaOptions::default(), 4).unwrap();
        let opts = BetaOptions {
            moments: BetaMoments::Reweighted,
            ..BetaOptions::default()
        };
        let rw = estimate_beta(beta, &flow, &t, 20_000, 0.7, opts, 4).unwrap();
        assert!((plain.energy_var - rw.energy_var).abs() < 1e-9 * plain.energy_var);
        assert!((plain.beta - rw.beta).abs() < 1e-9);
    }

    #[test]
    fn reweighting_discounts_tail_draws() {
        // A flow twice as wide as q_beta inflates the plain variance.
        let beta = 0.5f64;
        let flow = Flow::constant_affine(&[0.0], &[2.0 * (1.0 / beta).sqrt()]).unwrap();
        let t = make_standard_normal(1);
        let truth = 1.0 / (2.0 * beta * beta);
        let plain = estimate_beta(beta, &flow, &t, 200_000, 0.7, BetaOptions::default(), 5).unwrap();
        let opts = BetaOptions {
            moments: BetaMoments::Reweighted,
            ..BetaOptions::default()
        };
        let rw = estimate_beta(beta, &flow, &t, 200_000, 0.7, opts, 5).unwrap();
        assert!(plain.energy_var > 10.0 * truth);
        assert!((rw.energy_var - truth).abs() < 0.1 * truth, "{} vs {truth}", rw.energy_var);
    }

    #[test]
    fn argument_checks() {
        let flow = Flow::constant_affine(&[0.0], &[1.0]).unwrap();
        let t = make_standard_normal(1);
        for (b, a) in [(0.0, 0.5), (1.0, 0.5), (0.5, 0.0), (0.5, 1.0)] {
            assert!(estimate_beta(b, &flow, &t, 100, a, BetaOptions::default(), 0).is_err());
        }
    }

    #[test]
    fn quadrature_curve_matches_gaussian_closed_form() {
        let t = make_standard_normal(1);
        for beta in [0.1f64, 0.5, 0.9, 1.0] {
            let c = tempered_curve(&t, beta, -40.0, 40.0).unwrap();
            let l = 0.5 * (1.0 / beta - 1.0 + beta.ln());
            assert!((c.kl - l).abs() < 1e-10, "{beta}: {} vs {l}", c.kl);
            assert!((c.energy_var - 0.5 / (beta * beta)).abs() < 1e-8);
        }
    }
}
