//! Runs one sampling method on one target and returns its draws.

use std::time::Instant;

use temperflow::flows::Flow;
use temperflow::mcmc::{hmc_chain, mh_chain, normal_init, parallel_tempering, PtConfig};
use temperflow::rng::{derive, stream, Purpose};
use temperflow::samplers::{
    estimate_normalizer, kl_sampler, rejection_refine, temperflow, BetaLadder, StageObjective, TemperFlowRun,
};
use temperflow::targets::SharedTarget;
use temperflow::Tensor;

use crate::config::{ExperimentConfig, Method};
use crate::Result;

/// Draws of one method in one replication.
#[derive(Debug, Clone)]
pub struct MethodSamples {
    pub method: Method,
    /// `n_samples` rows, scored by the adjusted metrics.
    pub samples: Tensor,
    /// Larger draw for the occupancy audit; MCMC methods reuse `samples`.
    pub occupancy_samples: Tensor,
    pub train_seconds: f64,
    pub generate_seconds: f64,
    pub ladder: Option<BetaLadder>,
    pub complete: Option<bool>,
    pub acceptance: Option<f64>,
}

pub struct Runner<'a> {
    pub cfg: &'a ExperimentConfig,
    pub target: SharedTarget,
}

/// Seed offsets so methods in one replication use disjoint streams.
fn method_tag(m: Method) -> u64 {
    match m {
        Method::TemperFlow | Method::TemperFlowRej | Method::KlTempering => 1,
        Method::Kl => 2,
        Method::Mh | Method::MhLong => 3,
        Method::Hmc | Method::HmcLong => 4,
        Method::Pt | Method::PtLong => 5,
    }
}

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a ExperimentConfig, target: SharedTarget) -> Self {
        Self { cfg, target }
    }

    fn occupancy_draws(&self) -> usize {
        self.cfg.metrics.occupancy_samples.max(self.cfg.n_samples)
    }

    /// TemperFlow with the configured architecture; `alpha` and `ladder`
    /// override the config when given. A given ladder switches every stage
    /// after the first to the KL objective.
    pub fn train_temperflow(&self, seed: u64, alpha: Option<f64>, ladder: Option<Vec<f64>>) -> Result<TemperFlowRun> {
        let mut tc = self.cfg.temperflow.config(seed);
        if let Some(a) = alpha {
            tc.alpha = a;
        }
        if let Some(l) = ladder {
            tc.fixed_ladder = Some(l);
            tc.objective = StageObjective::Kl;
        }
        Ok(temperflow(self.target.clone(), self.cfg.flow.architecture(), self.cfg.flow.base(), &tc)?)
    }

    /// `n_samples` draws plus the occupancy draw, timing the former.
    fn flow_draws(&self, flow: &Flow, seed: u64) -> Result<(Tensor, Tensor, f64)> {
        let t = Instant::now();
        let samples = flow.sample(self.cfg.n_samples, &mut stream(seed, Purpose::Eval, 0))?;
        let secs = t.elapsed().as_secs_f64();
        let occ = flow.sample(self.occupancy_draws(), &mut stream(seed, Purpose::Eval, 1))?;
        Ok((samples, occ, secs))
    }

    fn samples_of_run(&self, method: Method, run: &TemperFlowRun, seed: u64) -> Result<MethodSamples> {
        let (samples, occupancy_samples, generate_seconds) = self.flow_draws(&run.flow, seed)?;
        Ok(MethodSamples {
            method,
            samples,
            occupancy_samples,
            train_seconds: run.seconds,
            generate_seconds,
            ladder: Some(run.ladder.clone()),
            complete: Some(run.complete),
            acceptance: None,
        })
    }

    fn refined(&self, run: &TemperFlowRun, seed: u64) -> Result<MethodSamples> {
        let log_u = match run.log_normalizer {
            Some(u) => u,
            None => {
                estimate_normalizer(self.target.as_ref(), &run.flow, self.cfg.temperflow.normalizer_samples, derive(seed, 7))?
                    .log_value
            }
        };
        let t = Instant::now();
        let r = rejection_refine(&run.flow, self.target.as_ref(), log_u, self.cfg.n_samples, derive(seed, 8))?;
        let generate_seconds = t.elapsed().as_secs_f64();
        let occ = rejection_refine(&run.flow, self.target.as_ref(), log_u, self.occupancy_draws(), derive(seed, 9))?;
        Ok(MethodSamples {
            method: Method::TemperFlowRej,
            samples: r.samples,
            occupancy_samples: occ.samples,
            train_seconds: run.seconds,
            generate_seconds,
            ladder: Some(run.ladder.clone()),
            complete: Some(run.complete),
            acceptance: Some(r.acceptance_rate),
        })
    }

    fn kl(&self, seed: u64) -> Result<MethodSamples> {
        let mut flow = Flow::init_identity(
            self.cfg.flow.architecture(),
            self.target.dim(),
            self.cfg.flow.base(),
            derive(seed, 1),
        )?;
        let res = kl_sampler(self.target.as_ref(), &mut flow, &self.cfg.kl.train(seed))?;
        let (samples, occupancy_samples, generate_seconds) = self.flow_draws(&flow, seed)?;
        Ok(MethodSamples {
            method: Method::Kl,
            samples,
            occupancy_samples,
            train_seconds: res.seconds,
            generate_seconds,
            ladder: None,
            complete: None,
            acceptance: None,
        })
    }

    fn mcmc(&self, method: Method, seed: u64) -> Result<MethodSamples> {
        let m = &self.cfg.mcmc;
        let (thin, burnin) = if matches!(method, Method::MhLong | Method::HmcLong | Method::PtLong) {
            (m.thin * m.long_thin, m.burnin * m.long_thin)
        } else {
            (m.thin, m.burnin)
        };
        let n = self.cfg.n_samples;
        let d = self.target.dim();
        let t = Instant::now();
        let (samples, acceptance) = match method {
            Method::Mh | Method::MhLong => {
                let init = normal_init(1, d, seed);
                let out = mh_chain(self.target.as_ref(), init.row(0), m.sigma_mh, n, burnin, thin, seed)?;
                (out.samples, out.acceptance_rate)
            }
            Method::Hmc | Method::HmcLong => {
                let init = normal_init(1, d, seed);
                let out = hmc_chain(self.target.as_ref(), init.row(0), m.hmc_eps, m.hmc_steps, n, burnin, thin, seed)?;
                (out.samples, out.acceptance_rate)
            }
            _ => {
                let pt = PtConfig::geometric(m.pt_chains, m.pt_beta_min, m.sigma_pt)?;
                let init = normal_init(m.pt_chains, d, seed);
                let out = parallel_tempering(self.target.as_ref(), &pt, &init, n, burnin, thin, seed)?;
                let cold = *out.acceptance.last().unwrap_or(&0.0);
                (out.samples, cold)
            }
        };
        Ok(MethodSamples {
            method,
            occupancy_samples: samples.clone(),
            samples,
            train_seconds: 0.0,
            generate_seconds: t.elapsed().as_secs_f64(),
            ladder: None,
            complete: None,
            acceptance: Some(acceptance),
        })
    }

    /// Every method in `methods`, in order. TemperFlow is trained once and
    /// shared by the rejection variant and by the KL-with-tempering arm,
    /// which walks the same ladder.
    pub fn run_methods(&self, methods: &[Method], seed: u64) -> Result<Vec<MethodSamples>> {
        let needs_tf = methods
            .iter()
            .any(|m| matches!(m, Method::TemperFlow | Method::TemperFlowRej | Method::KlTempering));
        let tf_seed = derive(seed, method_tag(Method::TemperFlow));
        let tf = if needs_tf {
            Some(self.train_temperflow(tf_seed, None, None)?)
        } else {
            None
        };
        let mut out = Vec::with_capacity(methods.len());
        for &m in methods {
            let s = derive(seed, method_tag(m));
            let res = match (m, tf.as_ref()) {
                (Method::TemperFlow, Some(run)) => self.samples_of_run(m, run, s)?,
                (Method::TemperFlowRej, Some(run)) => self.refined(run, s)?,
                (Method::KlTempering, Some(run)) => {
                    let arm = self.train_temperflow(tf_seed, None, Some(run.ladder.betas.clone()))?;
                    self.samples_of_run(m, &arm, derive(s, 2))?
                }
                (Method::Kl, _) => self.kl(s)?,
                _ => self.mcmc(m, s)?,
            };
            out.push(res);
        }
        Ok(out)
    }
}
