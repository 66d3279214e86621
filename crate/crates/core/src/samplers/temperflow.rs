use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    estimate_beta, estimate_normalizer, kl_sampler, l2_sampler, BetaConvention, BetaMoments, BetaOptions, TrainConfig,
    TrainResult,
};
use crate::error::{Error, Result};
use crate::flows::{Architecture, Base, Flow};
use crate::rng::derive;
use crate::targets::{temper, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageObjective {
    L2,
    Kl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperFlowConfig {
    pub beta0: f64,
    pub alpha: f64,
    /// Batch, optimizer, stopping rule and seed for every stage; the
    /// iteration cap comes from the two budgets below.
    pub train: TrainConfig,
    pub iters_low_beta: usize,
    pub iters_high_beta: usize,
    pub max_stages: usize,
    pub beta_samples: usize,
    pub normalizer_samples: usize,
    pub convention: BetaConvention,
    pub moments: BetaMoments,
    /// Objective for the stages after the first (which is always KL).
    pub objective: StageObjective,
    /// Extra stage at `beta = 1` with a fresh normalizer estimate.
    pub polish: bool,
    /// Replaces adaptive selection with a given ladder ending at 1.
    pub fixed_ladder: Option<Vec<f64>>,
    /// Geometric step used when the adaptive estimate is unusable.
    pub fallback_factor: f64,
    /// Keep a copy of the flow after every stage.
    pub keep_snapshots: bool,
}

impl Default for TemperFlowConfig {
    fn default() -> Self {
        Self {
            beta0: 0.1,
            alpha: 0.5,
            train: TrainConfig::default(),
            iters_low_beta: 2000,
            iters_high_beta: 1000,
            max_stages: 100,
            beta_samples: 5000,
            normalizer_samples: 5000,
            convention: BetaConvention::Untempered,
            moments: BetaMoments::Flow,
            objective: StageObjective::L2,
            polish: true,
            fixed_ladder: None,
            fallback_factor: 1.5,
            keep_snapshots: false,
        }
    }
}

impl TemperFlowConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let Some(l) = &self.fixed_ladder {
            let increasing = l.windows(2).all(|w| w[0] < w[1]);
            if l.is_empty() || !increasing || l[0] <= 0.0 || *l.last().unwrap() != 1.0 {
                return Err(Error::Config("fixed ladder must increase strictly within (0, 1] and end at 1".into()));
            }
        } else if !(self.beta0 > 0.0 && self.beta0 <= 1.0) {
            return Err(Error::Config(format!("beta0 must lie in (0, 1], got {}", self.beta0)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.max_stages == 0 || self.beta_samples < 2 || self.normalizer_samples < 2 {
            return Err(Error::Config("stage cap and sample counts must be positive".into()));
        }
        if !(self.fallback_factor > 1.0) {
            return Err(Error::Config("fallback factor must exceed 1".into()));
        }
        Ok(())
    }

    fn budget(&self, beta: f64) -> usize {
        if beta < 0.5 {
            self.iters_low_beta
        } else {
            self.iters_high_beta
        }
    }
}

/// Diagnostics for one optimization stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub beta: f64,
    pub objective: StageObjective,
    pub polish: bool,
    /// The adaptive estimate was unusable and the geometric step was taken.
    pub fallback: bool,
    pub iterations: usize,
    pub converged: bool,
    pub first_loss: f64,
    pub final_loss: f64,
    /// `log U-hat` for the stage's tempered target.
    pub log_normalizer: Option<f64>,
    pub normalizer_cv: Option<f64>,
    /// Estimate of `l(beta)` at the previous rung.
    pub kl_estimate: Option<f64>,
    pub seconds: f64,
    #[serde(skip)]
    pub losses: Vec<f64>,
}

/// Realized inverse temperatures with per-stage records.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BetaLadder {
    pub betas: Vec<f64>,
    pub stages: Vec<StageReport>,
}

impl BetaLadder {
    /// Strictly increasing and ending at exactly 1.
    pub fn is_valid(&self) -> bool {
        !self.betas.is_empty()
            && self.betas[0] > 0.0
            && self.betas.windows(2).all(|w| w[0] < w[1])
            && *self.betas.last().unwrap() == 1.0
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct TemperFlowRun {
    pub flow: Flow,
    pub ladder: BetaLadder,
    /// False when the stage cap stopped the ladder short of `beta = 1`.
    pub complete: bool,
    /// Latest `log U-hat` at `beta = 1`, if one was computed.
    pub log_normalizer: Option<f64>,
    /// Flow after each stage, aligned with `ladder.stages`, when requested.
    pub snapshots: Vec<Flow>,
    pub seconds: f64,
}

struct Stage {
    beta: f64,
    objective: StageObjective,
    polish: bool,
    fallback: bool,
    kl_estimate: Option<f64>,
}

/// Learns a transport map for `exp(-E)` by walking a ladder of tempered
/// targets from `beta0` up to 1: a KL stage at `beta0`, then one stage per
/// rung with the previous rung's flow as importance proposal.
pub fn temperflow(
    target: Arc<dyn Target>,
    arch: Architecture,
    base: Base,
    cfg: &TemperFlowConfig,
) -> Result<TemperFlowRun> {
    cfg.validate()?;
    let start = Instant::now();
    let seed = cfg.train.seed;
    let mut flow = Flow::init_identity(arch, target.dim(), base, derive(seed, 1))?;
    let mut ladder = BetaLadder::default();
    let mut log_normalizer = None;
    let mut snapshots = Vec::new();

    let mut run_stage = |flow: &mut Flow, ladder: &mut BetaLadder, st: Stage| -> Result<Option<f64>> {
        let k = ladder.stages.len();
        let tempered = temper(target.clone(), st.beta)?;
        let tcfg = TrainConfig {
            max_iters: cfg.budget(st.beta),
            seed: derive(seed, 1000 + k as u64),
            ..cfg.train.clone()
        };
        let (res, norm): (TrainResult, _) = match st.objective {
            StageObjective::Kl => (kl_sampler(&tempered, flow, &tcfg)?, None),
            StageObjective::L2 => {
                let u = estimate_normalizer(&tempered, flow, cfg.normalizer_samples, derive(seed, 2000 + k as u64))?;
                (l2_sampler(&tempered, u.log_value, flow, &tcfg)?, Some(u))
            }
        };
        if !st.polish {
            ladder.betas.push(st.beta);
        }
        ladder.stages.push(StageReport {
            stage: k,
            beta: st.beta,
            objective: st.objective,
            polish: st.polish,
            fallback: st.fallback,
            iterations: res.iterations(),
            converged: res.converged,
            first_loss: res.losses.first().copied().unwrap_or(f64::NAN),
            final_loss: res.final_loss(),
            log_normalizer: norm.map(|u| u.log_value),
            normalizer_cv: norm.map(|u| u.cv),
            kl_estimate: st.kl_estimate,
            seconds: res.seconds,
            losses: res.losses,
        });
        if let Some(r) = ladder.stages.last() {
            log::info!(target: "temperflow::stage", "{}", serde_json::to_string(r).unwrap_or_default());
        }
        if cfg.keep_snapshots {
            snapshots.push(flow.clone());
        }
        Ok(norm.map(|u| u.log_value))
    };

    let fixed = cfg.fixed_ladder.as_deref();
    let beta0 = fixed.map_or(cfg.beta0, |l| l[0]);
    run_stage(
        &mut flow,
        &mut ladder,
        Stage {
            beta: beta0,
            objective: StageObjective::Kl,
            polish: false,
            fallback: false,
            kl_estimate: None,
        },
    )?;

    let mut beta = beta0;
    let mut complete = beta == 1.0;
    while !complete {
        if ladder.len() >= cfg.max_stages {
            break;
        }
        let (next, fallback, kl_estimate) = match fixed {
            Some(l) => (l[ladder.len()], false, None),
            None => {
                let est = estimate_beta(
                    beta,
                    &flow,
                    target.as_ref(),
                    cfg.beta_samples,
                    cfg.alpha,
                    BetaOptions {
                        convention: cfg.convention,
                        moments: cfg.moments,
                    },
                    derive(seed, 3000 + ladder.len() as u64),
                );
                match est {
                    Ok(e) if e.beta.is_finite() && e.beta > beta => (e.beta.min(1.0), false, Some(e.kl)),
                    Ok(e) => ((cfg.fallback_factor * beta).min(1.0), true, Some(e.kl)),
                    Err(_) => ((cfg.fallback_factor * beta).min(1.0), true, None),
                }
            }
        };
        let lu = run_stage(
            &mut flow,
            &mut ladder,
            Stage {
                beta: next,
                objective: cfg.objective,
                polish: false,
                fallback,
                kl_estimate,
            },
        )?;
        beta = next;
        if beta == 1.0 {
            complete = true;
            log_normalizer = lu.or(log_normalizer);
        }
    }

    if complete && cfg.polish {
        let lu = run_stage(
            &mut flow,
            &mut ladder,
            Stage {
                beta: 1.0,
                objective: cfg.objective,
                polish: true,
                fallback: false,
                kl_estimate: None,
            },
        )?;
        log_normalizer = lu.or(log_normalizer);
    }

    Ok(TemperFlowRun {
        flow,
        ladder,
        complete,
        log_normalizer,
        snapshots,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::make_standard_normal;

    fn quick(beta0: f64) -> TemperFlowConfig {
        TemperFlowConfig {
            beta0,
            train: TrainConfig {
                batch: 64,
                ..TrainConfig::default()
            },
            iters_low_beta: 20,
            iters_high_beta: 20,
            beta_samples: 500,
            normalizer_samples: 500,
            ..TemperFlowConfig::default()
        }
    }

    #[test]
    fn beta_one_runs_kl_then_polish() {
        let run = temperflow(
            Arc::new(make_standard_normal(1)),
            Architecture::affine(1, 4, 1),
            Base::StandardNormal,
            &quick(1.0),
        )
        .unwrap();
        assert_eq!(run.ladder.betas, vec![1.0]);
        let objectives: Vec<_> = run.ladder.stages.iter().map(|s| (s.objective, s.polish)).collect();
        assert_eq!(objectives, vec![(StageObjective::Kl, false), (StageObjective::L2, true)]);
        assert!(run.complete);
    }

    #[test]
    fn ladder_is_strictly_increasing_to_one() {
        let run = temperflow(
            Arc::new(make_standard_normal(1)),
            Architecture::affine(1, 4, 1),
            Base::StandardNormal,
            &quick(0.1),
        )
        .unwrap();
        assert!(run.complete);
        assert!(run.ladder.is_valid(), "{:?}", run.ladder.betas);
    }

    #[test]
    fn stage_cap_returns_incomplete() {
        let cfg = TemperFlowConfig {
            max_stages: 2,
            fixed_ladder: Some(vec![0.1, 0.2, 0.5, 1.0]),
            ..quick(0.1)
        };
        let run = temperflow(Arc::new(make_standard_normal(1)), Architecture::affine(1, 4, 1), Base::StandardNormal, &cfg).unwrap();
        assert!(!run.complete);
        assert_eq!(run.ladder.betas, vec![0.1, 0.2]);
    }

    #[test]
    fn bad_fixed_ladder_is_rejected() {
        let cfg = TemperFlowConfig {
            fixed_ladder: Some(vec![0.3, 0.2, 1.0]),
            ..quick(0.1)
        };
        assert!(cfg.validate().is_err());
    }
}
