//! Transport-map learning: the KL and L² samplers, importance-sampling
//! utilities, adaptive inverse-temperature selection and the TemperFlow
//! driver that ties them together.

mod beta;
mod importance;
mod objective;
mod temperflow;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use beta::{estimate_beta, tempered_curve, BetaConvention, BetaEstimate, BetaMoments, BetaOptions, TemperedCurve};
pub use importance::{cv_diagnostic, estimate_normalizer, rejection_refine, Normalizer, Refined};
pub use temperflow::{temperflow, BetaLadder, StageObjective, StageReport, TemperFlowConfig, TemperFlowRun};

use crate::diff::{OptimState, OptimizerSpec};
use crate::error::{Error, Result};
use crate::flows::Flow;
use crate::rng::{stream, Purpose};
use crate::targets::Target;
use crate::Tensor;
use objective::{kl_gradient, l2_gradient, nll_gradient, L2Batch};

/// Settings for one optimization stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Monte Carlo batch size per step.
    pub batch: usize,
    pub max_iters: usize,
    /// Rolling-mean window for the stopping rule; `0` disables it.
    pub window: usize,
    /// Relative change of the rolling mean that counts as converged.
    pub tol: f64,
    pub optimizer: OptimizerSpec,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 256,
            max_iters: 1000,
            window: 50,
            tol: 1e-3,
            optimizer: OptimizerSpec::adam(1e-3),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::Config(format!("batch must be at least 2, got {}", self.batch)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Outcome of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub losses: Vec<f64>,
    pub converged: bool,
    pub seconds: f64,
}

impl TrainResult {
    pub fn iterations(&self) -> usize {
        self.losses.len()
    }

    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// True once the mean of the last `window` losses differs from the mean of
/// the window before it by less than `tol` relative. The scale is floored
/// at 1 so losses near zero can still converge.
pub fn rolling_mean_converged(losses: &[f64], window: usize, tol: f64) -> bool {
    if window == 0 || losses.len() < 2 * window {
        return false;
    }
    let n = losses.len();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let cur = mean(&losses[n - window..]);
    let prev = mean(&losses[n - 2 * window..n - window]);
    (cur - prev).abs() < tol * prev.abs().max(1.0)
}

/// Generic stochastic-gradient loop. `step(k)` returns the loss and
/// gradients at iteration `k`; `observe(k, flow)` sees the flow before
/// iteration `k` and once more after the last one.
fn train_loop<S, O>(flow: &mut Flow, cfg: &TrainConfig, mut step: S, mut observe: O) -> Result<TrainResult>
where
    S: FnMut(&Flow, usize) -> Result<(f64, Vec<Tensor>)>,
    O: FnMut(usize, &Flow),
{
    cfg.validate()?;
    let start = Instant::now();
    let mut state = OptimState::new(cfg.optimizer, flow.params());
    let mut losses = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    for k in 0..cfg.max_iters {
        observe(k, flow);
        let (loss, grads) = step(flow, k)?;
        losses.push(loss);
        state.step(flow.params_mut(), &grads)?;
        if rolling_mean_converged(&losses, cfg.window, cfg.tol) {
            converged = true;
            break;
        }
    }
    observe(losses.len(), flow);
    Ok(TrainResult {
        losses,
        converged,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Minimizes `mean[E(T(Z)) - log det dT(Z)]` over fresh base batches.
pub fn kl_sampler(target: &dyn Target, flow: &mut Flow, cfg: &TrainConfig) -> Result<TrainResult> {
    kl_sampler_observed(target, flow, cfg, |_, _| {})
}

pub fn kl_sampler_observed(
    target: &dyn Target,
    flow: &mut Flow,
    cfg: &TrainConfig,
    observe: impl FnMut(usize, &Flow),
) -> Result<TrainResult> {
    check_dims(target, flow)?;
    let mut rng = stream(cfg.seed, Purpose::Batch, 0);
    train_loop(
        flow,
        cfg,
        |f, _| {
            let z = f.base_sample(cfg.batch, &mut rng);
            kl_gradient(f, target, &z)
        },
        observe,
    )
}

/// Minimizes the log-domain L² surrogate with draws from the flow as it was
/// when the stage started. `log_u` is the log normalizer estimate of
/// `exp(-E)`.
pub fn l2_sampler(target: &dyn Target, log_u: f64, flow: &mut Flow, cfg: &TrainConfig) -> Result<TrainResult> {
    l2_sampler_observed(target, log_u, flow, cfg, |_, _| {})
}

pub fn l2_sampler_observed(
    target: &dyn Target,
    log_u: f64,
    flow: &mut Flow,
    cfg: &TrainConfig,
    observe: impl FnMut(usize, &Flow),
) -> Result<TrainResult> {
    check_dims(target, flow)?;
    if !log_u.is_finite() {
        return Err(Error::Config(format!("normalizer estimate must be positive and finite, got log {log_u}")));
    }
    let proposal = flow.clone();
    let mut rng = stream(cfg.seed, Purpose::Batch, 0);
    train_loop(
        flow,
        cfg,
        |f, _| {
            let (x, log_h) = proposal.sample_with_log_prob(cfg.batch, &mut rng)?;
            l2_gradient(f, &L2Batch::new(x, log_h, target, log_u))
        },
        observe,
    )
}

/// Maximum-likelihood fit of the flow to data rows, by minibatches drawn
/// with replacement.
pub fn fit_maximum_likelihood(flow: &mut Flow, data: &Tensor, cfg: &TrainConfig) -> Result<TrainResult> {
    if data.cols() != flow.dim() || data.rows() == 0 {
        return Err(Error::shape("fit_maximum_likelihood", "data must be non-empty with flow dimension"));
    }
    use rand::Rng as _;
    let mut rng = stream(cfg.seed, Purpose::Batch, 0);
    train_loop(
        flow,
        cfg,
        |f, _| {
            let rows: Vec<Vec<f64>> = (0..cfg.batch)
                .map(|_| data.row(rng.random_range(0..data.rows())).to_vec())
                .collect();
            nll_gradient(f, &Tensor::from_rows(&rows)?)
        },
        |_, _| {},
    )
}

fn check_dims(target: &dyn Target, flow: &Flow) -> Result<()> {
    if target.dim() != flow.dim() {
        return Err(Error::Config(format!(
            "flow dimension {} does not match target dimension {}",
            flow.dim(),
            target.dim()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{Architecture, Base};
    use crate::targets::make_standard_normal;

    #[test]
    fn convergence_rule() {
        let flat = vec![1.0; 100];
        assert!(rolling_mean_converged(&flat, 50, 1e-3));
        assert!(!rolling_mean_converged(&flat[..99], 50, 1e-3));
        let falling: Vec<f64> = (0..100).map(|i| 10.0 - 0.05 * i as f64).collect();
        assert!(!rolling_mean_converged(&falling, 50, 1e-3));
        assert!(!rolling_mean_converged(&flat, 0, 1e-3));
    }

    #[test]
    fn kl_on_standard_normal_stays_put() {
        let target = make_standard_normal(1);
        let mut flow = Flow::init_identity(Architecture::affine(1, 4, 1), 1, Base::StandardNormal, 0).unwrap();
        let cfg = TrainConfig {
            max_iters: 200,
            optimizer: OptimizerSpec::adam(5e-3),
            ..TrainConfig::default()
        };
        kl_sampler(&target, &mut flow, &cfg).unwrap();
        let x = flow.sample(10_000, &mut stream(1, Purpose::Eval, 0)).unwrap();
        let m = x.mean();
        let v = x.data().iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 9_999.0;
        assert!(m.abs() < 0.05, "mean {m}");
        assert!((v - 1.0).abs() < 0.05, "var {v}");
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let target = make_standard_normal(2);
        let mut flow = Flow::init_identity(Architecture::affine(1, 4, 1), 1, Base::StandardNormal, 0).unwrap();
        assert!(matches!(
            kl_sampler(&target, &mut flow, &TrainConfig::default()),
            Err(Error::Config(_))
        ));
    }
}
