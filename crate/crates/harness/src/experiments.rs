//! The experiment drivers behind `run`: figure replications, the sampler
//! comparisons, the KL-with-tempering ablation, the alpha sweep and the
//! timing bench.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use temperflow::exec::Exec;
use temperflow::flows::Flow;
use temperflow::mcmc::{mh_chain, normal_init};
use temperflow::metrics::{adjusted_metrics, mode_occupancy, AdjustedMetrics};
use temperflow::quad::integrate_panels;
use temperflow::rng::{derive, stream, Purpose};
use temperflow::samplers::{
    estimate_normalizer, fit_maximum_likelihood, kl_sampler_observed, l2_sampler_observed, BetaLadder, StageObjective,
    TrainConfig,
};
use temperflow::diff::OptimizerSpec;
use temperflow::targets::{GaussianMixture, SharedTarget, Target};
use temperflow::Tensor;

use crate::config::{ExperimentConfig, ExperimentKind, Method, TargetSpec};
use crate::methods::{MethodSamples, Runner};
use crate::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub target: String,
    pub rep: usize,
    pub adj_w1: f64,
    pub adj_mmd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyRecord {
    pub method: String,
    pub target: String,
    pub rep: usize,
    pub radius: f64,
    pub draws: usize,
    pub fractions: Vec<f64>,
    pub unassigned: f64,
    pub min_fraction: f64,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub beta: f64,
    pub objective: StageObjective,
    pub polish: bool,
    pub fallback: bool,
    pub iterations: usize,
    pub converged: bool,
    pub final_loss: f64,
    pub log_normalizer: Option<f64>,
    pub normalizer_cv: Option<f64>,
}

/// One line of `betas.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRecord {
    pub method: String,
    pub target: String,
    pub rep: usize,
    pub alpha: f64,
    pub betas: Vec<f64>,
    pub complete: bool,
    pub stages: Vec<StageSummary>,
}

impl LadderRecord {
    fn new(method: Method, target: &str, rep: usize, alpha: f64, ladder: &BetaLadder, complete: bool) -> Self {
        Self {
            method: method.as_str().into(),
            target: target.into(),
            rep,
            alpha,
            betas: ladder.betas.clone(),
            complete,
            stages: ladder
                .stages
                .iter()
                .map(|s| StageSummary {
                    beta: s.beta,
                    objective: s.objective,
                    polish: s.polish,
                    fallback: s.fallback,
                    iterations: s.iterations,
                    converged: s.converged,
                    final_loss: s.final_loss,
                    log_normalizer: s.log_normalizer,
                    normalizer_cv: s.normalizer_cv,
                })
                .collect(),
        }
    }

    /// Strictly increasing and ending at exactly 1.
    pub fn is_valid(&self) -> bool {
        self.betas.windows(2).all(|w| w[0] < w[1]) && self.betas.last() == Some(&1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    pub target: String,
    pub rep: usize,
    pub train_seconds: f64,
    pub generate_seconds: f64,
}

/// Per-iteration statistics of the figure experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub run: String,
    pub target: String,
    pub rep: usize,
    pub iteration: usize,
    /// Mass beyond the midpoint between the two modes (bimodal targets).
    pub right_mode_mass: Option<f64>,
    pub adj_w1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub target: String,
    pub median_adj_w1: f64,
    pub median_adj_mmd: f64,
    /// Smallest mode occupancy over all replications.
    pub min_occupancy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRecord {
    pub target: String,
    pub alpha: f64,
    pub mean_ladder_length: f64,
    pub incomplete_runs: usize,
    pub median_adj_w1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingBench {
    pub target: String,
    pub draws: usize,
    pub mh_iterations: usize,
    pub train_seconds: f64,
    pub generate_seconds: f64,
    pub mh_seconds: f64,
    /// `mh_seconds / generate_seconds`
    pub speedup: f64,
    pub deterministic: bool,
}

/// A soft assertion; failures are reported, not raised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct DensityGrid {
    pub name: String,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    pub truth: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SampleSet {
    pub method: String,
    pub target: String,
    pub rep: usize,
    pub samples: Tensor,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub replications: usize,
    pub n_samples: usize,
    pub metrics: Vec<MetricRow>,
    pub summary: Vec<MethodSummary>,
    pub occupancy: Vec<OccupancyRecord>,
    pub ladders: Vec<LadderRecord>,
    pub timings: Vec<TimingRow>,
    pub snapshots: Vec<SnapshotRecord>,
    pub alpha_sweep: Vec<AlphaRecord>,
    pub timing_bench: Option<TimingBench>,
    pub checks: Vec<Check>,
    #[serde(skip)]
    pub grids: Vec<DensityGrid>,
    #[serde(skip)]
    pub samples: Vec<SampleSet>,
}

impl RunReport {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            experiment: cfg.experiment.as_str().into(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            replications: cfg.replications,
            n_samples: cfg.n_samples,
            ..Self::default()
        }
    }

    fn merge(&mut self, other: RunReport) {
        self.metrics.extend(other.metrics);
        self.occupancy.extend(other.occupancy);
        self.ladders.extend(other.ladders);
        self.timings.extend(other.timings);
        self.snapshots.extend(other.snapshots);
        self.checks.extend(other.checks);
        self.grids.extend(other.grids);
        self.samples.extend(other.samples);
    }

    pub fn metric_values(&self, method: &str, target: &str) -> Vec<&MetricRow> {
        self.metrics.iter().filter(|r| r.method == method && r.target == target).collect()
    }

    pub fn occupancy_of(&self, method: &str, target: &str) -> Vec<&OccupancyRecord> {
        self.occupancy.iter().filter(|r| r.method == method && r.target == target).collect()
    }

    fn summarize(&mut self) {
        let mut groups: BTreeMap<(String, String), Vec<&MetricRow>> = BTreeMap::new();
        for r in &self.metrics {
            groups.entry((r.target.clone(), r.method.clone())).or_default().push(r);
        }
        let mut order: Vec<(String, String)> = Vec::new();
        for r in &self.metrics {
            let key = (r.target.clone(), r.method.clone());
            if !order.contains(&key) {
                order.push(key);
            }
        }
        self.summary = order
            .into_iter()
            .map(|key| {
                let rows = &groups[&key];
                let occ = self.occupancy_of(&key.1, &key.0);
                MethodSummary {
                    method: key.1.clone(),
                    target: key.0.clone(),
                    median_adj_w1: median(rows.iter().map(|r| r.adj_w1).collect()),
                    median_adj_mmd: median(rows.iter().map(|r| r.adj_mmd).collect()),
                    min_occupancy: (!occ.is_empty())
                        .then(|| occ.iter().map(|o| o.min_fraction).fold(f64::INFINITY, f64::min)),
                }
            })
            .collect();
    }

    pub fn summary_of(&self, method: &str, target: &str) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method && s.target == target)
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn replication_seed(seed: u64, rep: usize) -> u64 {
    derive(seed, 10_000 + rep as u64)
}

/// Occupancy radius: configured, or half the closest pair of centers.
fn occupancy_radius(cfg: &ExperimentConfig, centers: &[Vec<f64>]) -> f64 {
    cfg.metrics.occupancy_radius.unwrap_or_else(|| {
        let mut best = f64::INFINITY;
        for (i, a) in centers.iter().enumerate() {
            for b in &centers[i + 1..] {
                let d: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
                best = best.min(d);
            }
        }
        if best.is_finite() {
            0.5 * best
        } else {
            1.0
        }
    })
}

/// Metric, occupancy, ladder and timing records for one method's draws.
fn score(
    cfg: &ExperimentConfig,
    target: &dyn Target,
    label: &str,
    rep: usize,
    metric_seed: u64,
    m: &MethodSamples,
) -> Result<RunReport> {
    let mut r = RunReport::default();
    let adj: AdjustedMetrics = adjusted_metrics(&m.samples, target, cfg.metrics.bandwidth, metric_seed)?;
    let method = m.method.as_str().to_string();
    r.metrics.push(MetricRow {
        method: method.clone(),
        target: label.into(),
        rep,
        adj_w1: adj.w1,
        adj_mmd: adj.mmd,
    });
    if let Some(centers) = target.mode_centers() {
        let radius = occupancy_radius(cfg, &centers);
        let occ = mode_occupancy(&m.occupancy_samples, &centers, radius)?;
        r.occupancy.push(OccupancyRecord {
            method: method.clone(),
            target: label.into(),
            rep,
            radius,
            draws: m.occupancy_samples.rows(),
            min_fraction: occ.fractions.iter().copied().fold(f64::INFINITY, f64::min),
            max_deviation: occ.max_deviation_from_uniform(),
            fractions: occ.fractions,
            unassigned: occ.unassigned,
        });
    }
    if let (Some(ladder), Some(complete)) = (&m.ladder, m.complete) {
        r.ladders.push(LadderRecord::new(m.method, label, rep, cfg.temperflow.alpha, ladder, complete));
    }
    r.timings.push(TimingRow {
        method: method.clone(),
        target: label.into(),
        rep,
        train_seconds: m.train_seconds,
        generate_seconds: m.generate_seconds,
    });
    if cfg.write_samples {
        r.samples.push(SampleSet {
            method,
            target: label.into(),
            rep,
            samples: m.samples.clone(),
        });
    }
    Ok(r)
}

/// Runs replications through the worker pool and merges them in order.
fn replicate<F>(cfg: &ExperimentConfig, f: F) -> Result<RunReport>
where
    F: Fn(usize, u64) -> Result<RunReport> + Sync + Send,
{
    let reps: Vec<usize> = (0..cfg.replications).collect();
    let parts = Exec::default().map_vec(reps, |rep| f(rep, replication_seed(cfg.seed, rep)));
    let mut out = RunReport::new(cfg);
    for p in parts {
        out.merge(p?);
    }
    Ok(out)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let mut report = match cfg.experiment {
        ExperimentKind::Fig1 => fig1(cfg)?,
        ExperimentKind::Fig2 => fig2(cfg)?,
        ExperimentKind::Gmm2d | ExperimentKind::Copula => compare(cfg)?,
        ExperimentKind::AblationKlTempering => ablation_kl_tempering(cfg)?,
        ExperimentKind::AlphaSweep => alpha_sweep(cfg)?,
        ExperimentKind::Timing => timing_bench(cfg)?,
    };
    report.summarize();
    Ok(report)
}

fn built_targets(cfg: &ExperimentConfig) -> Result<Vec<(TargetSpec, SharedTarget)>> {
    cfg.targets.iter().map(|t| Ok((t.clone(), t.build()?))).collect()
}

/// Every method on every target, `replications` times.
pub fn compare(cfg: &ExperimentConfig) -> Result<RunReport> {
    let targets = built_targets(cfg)?;
    let mut out = RunReport::new(cfg);
    for (spec, target) in &targets {
        let label = spec.label();
        let part = replicate(cfg, |rep, seed| {
            let runner = Runner::new(cfg, target.clone());
            let draws = runner.run_methods(&cfg.methods, seed)?;
            let mut r = RunReport::default();
            for m in &draws {
                r.merge(score(cfg, target.as_ref(), &label, rep, derive(seed, 99), m)?);
            }
            Ok(r)
        })?;
        out.merge(part);
    }
    out.checks.extend(ladder_checks(&out.ladders));
    Ok(out)
}

fn ladder_checks(ladders: &[LadderRecord]) -> Vec<Check> {
    if ladders.is_empty() {
        return Vec::new();
    }
    let bad: Vec<String> = ladders
        .iter()
        .filter(|l| !l.is_valid())
        .map(|l| format!("{}/{}/rep{}", l.method, l.target, l.rep))
        .collect();
    vec![Check {
        name: "ladders increase strictly and end at 1".into(),
        passed: bad.is_empty(),
        detail: if bad.is_empty() {
            format!("{} ladders", ladders.len())
        } else {
            format!("invalid: {}", bad.join(", "))
        },
    }]
}

#[derive(Debug, Clone, Copy)]
struct Grid1d {
    lo: f64,
    hi: f64,
    points: usize,
}

impl Grid1d {
    fn xs(&self) -> Vec<f64> {
        (0..self.points)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.points - 1) as f64)
            .collect()
    }
}

fn density_grid(name: String, flow: &Flow, target: &dyn Target, grid: Grid1d) -> Result<DensityGrid> {
    let x = grid.xs();
    let density = flow.log_prob(&Tensor::column(x.clone()))?.into_iter().map(f64::exp).collect();
    let e = |v: f64| target.energy(&[v]);
    let z = integrate_panels(|v| (-e(v)).exp(), grid.lo, grid.hi, 200, 1e-12);
    let truth = x.iter().map(|&v| (-e(v)).exp() / z).collect();
    Ok(DensityGrid { name, x, density, truth })
}

/// Fraction of `n` flow draws above `split`.
pub fn right_mass(flow: &Flow, split: f64, n: usize, seed: u64) -> Result<f64> {
    let x = flow.sample(n, &mut stream(seed, Purpose::Eval, 5))?;
    Ok(x.data().iter().filter(|&&v| v > split).count() as f64 / n as f64)
}

fn split_of(spec: &TargetSpec) -> Option<f64> {
    match spec {
        TargetSpec::Bimodal1d { gap } => Some(0.5 * (1.0 + gap)),
        _ => None,
    }
}

fn one_d_targets(cfg: &ExperimentConfig, default: Vec<TargetSpec>) -> Result<Vec<(TargetSpec, SharedTarget)>> {
    if cfg.targets.is_empty() {
        default.into_iter().map(|t| Ok((t.clone(), t.build()?))).collect()
    } else {
        built_targets(cfg)
    }
}

fn full_run(batch: usize, iters: usize, lr: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        batch,
        max_iters: iters,
        window: 0,
        optimizer: OptimizerSpec::adam(lr),
        seed,
        ..TrainConfig::default()
    }
}

const MASS_DRAWS: usize = 10_000;

/// Snapshot statistics of `flow` at `iteration`.
fn snapshot(
    cfg: &ExperimentConfig,
    run: &str,
    spec: &TargetSpec,
    target: &dyn Target,
    rep: usize,
    iteration: usize,
    flow: &Flow,
    seed: u64,
) -> Result<SnapshotRecord> {
    let right_mode_mass = match split_of(spec) {
        Some(s) => Some(right_mass(flow, s, MASS_DRAWS, derive(seed, iteration as u64))?),
        None => None,
    };
    let adj_w1 = if target.truth_sample(1, &mut stream(0, Purpose::Truth, 0)).is_some() {
        let x = flow.sample(cfg.n_samples, &mut stream(derive(seed, iteration as u64), Purpose::Eval, 6))?;
        Some(adjusted_metrics(&x, target, cfg.metrics.bandwidth, derive(seed, 99))?.w1)
    } else {
        None
    };
    Ok(SnapshotRecord {
        run: run.into(),
        target: spec.label(),
        rep,
        iteration,
        right_mode_mass,
        adj_w1,
    })
}

/// KL sampler on the one-dimensional targets with density snapshots.
pub fn fig1(cfg: &ExperimentConfig) -> Result<RunReport> {
    let targets = one_d_targets(cfg, vec![TargetSpec::Unimodal1d, TargetSpec::Bimodal1d { gap: 8.0 }])?;
    let snaps = &cfg.fig1.snapshots;
    let iters = snaps.iter().copied().max().unwrap_or(0);
    let grid = Grid1d {
        lo: cfg.fig1.grid[0],
        hi: cfg.fig1.grid[1],
        points: cfg.fig1.grid_points,
    };
    let mut out = RunReport::new(cfg);
    for (spec, target) in &targets {
        let part = replicate(cfg, |rep, seed| {
            let mut flow = Flow::init_identity(cfg.flow.architecture(), 1, cfg.flow.base(), derive(seed, 1))?;
            let mut kept: Vec<(usize, Flow)> = Vec::new();
            let tc = full_run(cfg.kl.batch, iters, cfg.kl.lr, seed);
            kl_sampler_observed(target.as_ref(), &mut flow, &tc, |k, f| {
                if snaps.contains(&k) {
                    kept.push((k, f.clone()));
                }
            })?;
            let mut r = RunReport::default();
            for (k, f) in &kept {
                r.snapshots.push(snapshot(cfg, "kl", spec, target.as_ref(), rep, *k, f, seed)?);
                if rep == 0 {
                    r.grids.push(density_grid(format!("fig1_{}_iter{k}", spec.label()), f, target.as_ref(), grid)?);
                }
            }
            let final_flow = &kept.last().map(|(_, f)| f.clone()).unwrap_or(flow);
            let x = final_flow.sample(cfg.n_samples, &mut stream(seed, Purpose::Eval, 0))?;
            let adj = adjusted_metrics(&x, target.as_ref(), cfg.metrics.bandwidth, derive(seed, 99))?;
            r.metrics.push(MetricRow {
                method: Method::Kl.as_str().into(),
                target: spec.label(),
                rep,
                adj_w1: adj.w1,
                adj_mmd: adj.mmd,
            });
            Ok(r)
        })?;
        out.merge(part);
    }
    Ok(out)
}

/// L² and KL samplers started from a mis-weighted fit of the bimodal target.
pub fn fig2(cfg: &ExperimentConfig) -> Result<RunReport> {
    let targets = one_d_targets(cfg, vec![TargetSpec::Bimodal1d { gap: 8.0 }])?;
    let f2 = &cfg.fig2;
    let grid = Grid1d {
        lo: f2.grid[0],
        hi: f2.grid[1],
        points: f2.grid_points,
    };
    let mut out = RunReport::new(cfg);
    for (spec, target) in &targets {
        let TargetSpec::Bimodal1d { gap } = *spec else {
            return Err(HarnessError::Config("fig2 needs a bimodal1d target".into()));
        };
        let w = f2.init_right_weight;
        let start = GaussianMixture::new(vec![1.0 - w, w], vec![vec![1.0], vec![gap]], vec![vec![1.0], vec![0.25]])?;
        let part = replicate(cfg, |rep, seed| {
            let data = start
                .truth_sample(f2.pretrain_samples, &mut stream(seed, Purpose::Truth, 7))
                .expect("mixtures have exact samplers");
            let mut init = Flow::init_identity(cfg.flow.architecture(), 1, cfg.flow.base(), derive(seed, 1))?;
            fit_maximum_likelihood(&mut init, &data, &full_run(256, f2.pretrain_iters, cfg.kl.lr, derive(seed, 2)))?;

            let mut r = RunReport::default();
            let record = |r: &mut RunReport, run: &str, k: usize, f: &Flow| -> Result<()> {
                r.snapshots.push(snapshot(cfg, run, spec, target.as_ref(), rep, k, f, seed)?);
                if rep == 0 {
                    r.grids.push(density_grid(format!("fig2_{run}_iter{k}"), f, target.as_ref(), grid)?);
                }
                Ok(())
            };

            let mut kept: Vec<(usize, Flow)> = Vec::new();
            let u = estimate_normalizer(target.as_ref(), &init, cfg.temperflow.normalizer_samples, derive(seed, 3))?;
            let mut l2 = init.clone();
            let tc = full_run(cfg.temperflow.batch, f2.l2_iters, cfg.temperflow.lr, derive(seed, 4));
            l2_sampler_observed(target.as_ref(), u.log_value, &mut l2, &tc, |k, f| {
                if f2.snapshots.contains(&k) {
                    kept.push((k, f.clone()));
                }
            })?;
            for (k, f) in &kept {
                record(&mut r, "l2", *k, f)?;
            }

            kept.clear();
            let mut kl = init.clone();
            let tc = full_run(cfg.kl.batch, f2.kl_iters, cfg.kl.lr, derive(seed, 5));
            kl_sampler_observed(target.as_ref(), &mut kl, &tc, |k, f| {
                if f2.snapshots.contains(&k) || k == f2.kl_iters {
                    kept.push((k, f.clone()));
                }
            })?;
            for (k, f) in &kept {
                record(&mut r, "kl", *k, f)?;
            }

            for (method, flow) in [("l2", &l2), ("kl", &kl)] {
                let x = flow.sample(cfg.n_samples, &mut stream(seed, Purpose::Eval, 0))?;
                let adj = adjusted_metrics(&x, target.as_ref(), cfg.metrics.bandwidth, derive(seed, 99))?;
                r.metrics.push(MetricRow {
                    method: method.into(),
                    target: spec.label(),
                    rep,
                    adj_w1: adj.w1,
                    adj_mmd: adj.mmd,
                });
            }
            Ok(r)
        })?;
        out.merge(part);
    }
    Ok(out)
}

/// Reads `betas.jsonl` and returns the TemperFlow ladders keyed by
/// `(target, rep)`.
pub fn read_ladders(path: &Path) -> Result<BTreeMap<(String, usize), Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(crate::io_err(path))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: LadderRecord = serde_json::from_str(line)
            .map_err(|e| HarnessError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if rec.method == Method::TemperFlow.as_str() {
            out.insert((rec.target, rec.rep), rec.betas);
        }
    }
    Ok(out)
}

/// TemperFlow against the KL objective on the same ladder, plus plain KL.
pub fn ablation_kl_tempering(cfg: &ExperimentConfig) -> Result<RunReport> {
    let targets = built_targets(cfg)?;
    let ladders = match &cfg.ablation.ladder_file {
        Some(p) => Some(read_ladders(p)?),
        None => None,
    };
    let mut out = RunReport::new(cfg);
    for (spec, target) in &targets {
        let label = spec.label();
        let part = replicate(cfg, |rep, seed| {
            let runner = Runner::new(cfg, target.clone());
            let draws = match &ladders {
                None => runner.run_methods(&[Method::TemperFlow, Method::KlTempering, Method::Kl], seed)?,
                Some(map) => {
                    let betas = map.get(&(label.clone(), rep)).ok_or_else(|| {
                        HarnessError::Config(format!("ladder file has no temperflow ladder for {label} rep {rep}"))
                    })?;
                    let tf_seed = derive(seed, 1);
                    let arm = runner.train_temperflow(tf_seed, None, Some(betas.clone()))?;
                    let mut v = vec![ablation_arm(&runner, arm, seed)?];
                    v.extend(runner.run_methods(&[Method::Kl], seed)?);
                    v
                }
            };
            let mut r = RunReport::default();
            for m in &draws {
                r.merge(score(cfg, target.as_ref(), &label, rep, derive(seed, 99), m)?);
            }
            Ok(r)
        })?;
        out.merge(part);
        out.checks.extend(ablation_checks(&out, &label));
    }
    Ok(out)
}

fn ablation_arm(runner: &Runner, run: temperflow::samplers::TemperFlowRun, seed: u64) -> Result<MethodSamples> {
    let s = derive(derive(seed, 1), 2);
    let samples = run.flow.sample(runner.cfg.n_samples, &mut stream(s, Purpose::Eval, 0))?;
    let occ = run.flow.sample(
        runner.cfg.metrics.occupancy_samples.max(runner.cfg.n_samples),
        &mut stream(s, Purpose::Eval, 1),
    )?;
    Ok(MethodSamples {
        method: Method::KlTempering,
        samples,
        occupancy_samples: occ,
        train_seconds: run.seconds,
        generate_seconds: 0.0,
        ladder: Some(run.ladder),
        complete: Some(run.complete),
        acceptance: None,
    })
}

fn ablation_checks(report: &RunReport, label: &str) -> Vec<Check> {
    let mut checks = Vec::new();
    let tf = report.occupancy_of(Method::TemperFlow.as_str(), label);
    let klt = report.occupancy_of(Method::KlTempering.as_str(), label);
    if !tf.is_empty() && tf.len() == klt.len() {
        let worse = tf.iter().zip(&klt).filter(|(a, b)| b.max_deviation > a.max_deviation).count();
        checks.push(Check {
            name: format!("{label}: kl+tempering occupancy error above temperflow"),
            passed: 5 * worse >= 4 * tf.len(),
            detail: format!("{worse}/{} replications", tf.len()),
        });
        let tl: Vec<_> = report.ladders.iter().filter(|l| l.target == label && l.method == "temperflow").collect();
        let kl: Vec<_> = report.ladders.iter().filter(|l| l.target == label && l.method == "kl+tempering").collect();
        let same = tl.len() == kl.len() && tl.iter().zip(&kl).all(|(a, b)| a.betas == b.betas);
        checks.push(Check {
            name: format!("{label}: both arms share the beta ladder"),
            passed: same,
            detail: format!("{} ladders", tl.len()),
        });
    }
    checks
}

/// TemperFlow for each alpha; reports ladder lengths.
pub fn alpha_sweep(cfg: &ExperimentConfig) -> Result<RunReport> {
    let targets = built_targets(cfg)?;
    let mut out = RunReport::new(cfg);
    for (spec, target) in &targets {
        let label = spec.label();
        let mut lengths = Vec::new();
        for &alpha in &cfg.alpha_sweep.alphas {
            let part = replicate(cfg, |rep, seed| {
                let runner = Runner::new(cfg, target.clone());
                let run = runner.train_temperflow(derive(seed, 1), Some(alpha), None)?;
                let mut r = RunReport::default();
                r.ladders.push(LadderRecord::new(Method::TemperFlow, &label, rep, alpha, &run.ladder, run.complete));
                if target.truth_sample(1, &mut stream(0, Purpose::Truth, 0)).is_some() {
                    let x = run.flow.sample(cfg.n_samples, &mut stream(seed, Purpose::Eval, 0))?;
                    let adj = adjusted_metrics(&x, target.as_ref(), cfg.metrics.bandwidth, derive(seed, 99))?;
                    r.metrics.push(MetricRow {
                        method: format!("temperflow_alpha{alpha}"),
                        target: label.clone(),
                        rep,
                        adj_w1: adj.w1,
                        adj_mmd: adj.mmd,
                    });
                }
                Ok(r)
            })?;
            let n = part.ladders.len() as f64;
            let rec = AlphaRecord {
                target: label.clone(),
                alpha,
                mean_ladder_length: part.ladders.iter().map(|l| l.betas.len() as f64).sum::<f64>() / n,
                incomplete_runs: part.ladders.iter().filter(|l| !l.complete).count(),
                median_adj_w1: (!part.metrics.is_empty()).then(|| median(part.metrics.iter().map(|m| m.adj_w1).collect())),
            };
            lengths.push(rec.mean_ladder_length);
            out.alpha_sweep.push(rec);
            out.merge(part);
        }
        let monotone = lengths.windows(2).all(|w| w[0] <= w[1]);
        out.checks.push(Check {
            name: format!("{label}: ladder length nondecreasing in alpha"),
            passed: monotone,
            detail: format!("{lengths:?}"),
        });
    }
    out.checks.extend(ladder_checks(&out.ladders));
    Ok(out)
}

fn median_time(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut t = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let s = Instant::now();
        f()?;
        t.push(s.elapsed().as_secs_f64());
    }
    Ok(median(t))
}

const TIMING_REPEATS: usize = 5;

/// Post-training generation time of TemperFlow against a fixed-length MH run
/// on the first target.
pub fn timing_bench(cfg: &ExperimentConfig) -> Result<RunReport> {
    let (spec, target) = built_targets(cfg)?.into_iter().next().expect("validated");
    let label = spec.label();
    let mut out = RunReport::new(cfg);
    let seed = replication_seed(cfg.seed, 0);
    let runner = Runner::new(cfg, target.clone());
    let run = runner.train_temperflow(derive(seed, 1), None, None)?;
    let draws = cfg.timing.draws;
    let gen = median_time(TIMING_REPEATS, || {
        run.flow.sample(draws, &mut stream(seed, Purpose::Eval, 0))?;
        Ok(())
    })?;
    let a = run.flow.sample(draws, &mut stream(seed, Purpose::Eval, 0))?;
    let b = run.flow.sample(draws, &mut stream(seed, Purpose::Eval, 0))?;
    let m = &cfg.mcmc;
    let keep = cfg.timing.mh_iters - m.burnin;
    let init = normal_init(1, target.dim(), derive(seed, 3));
    let mh = median_time(TIMING_REPEATS, || {
        mh_chain(target.as_ref(), init.row(0), m.sigma_mh, keep, m.burnin, 1, derive(seed, 3))?;
        Ok(())
    })?;
    let bench = TimingBench {
        target: label.clone(),
        draws,
        mh_iterations: cfg.timing.mh_iters,
        train_seconds: run.seconds,
        generate_seconds: gen,
        mh_seconds: mh,
        speedup: mh / gen,
        deterministic: a == b,
    };
    out.timings.push(TimingRow {
        method: Method::TemperFlow.as_str().into(),
        target: label.clone(),
        rep: 0,
        train_seconds: run.seconds,
        generate_seconds: gen,
    });
    out.timings.push(TimingRow {
        method: Method::Mh.as_str().into(),
        target: label,
        rep: 0,
        train_seconds: 0.0,
        generate_seconds: mh,
    });
    out.checks.push(Check {
        name: "generation at least 100x faster than MH".into(),
        passed: bench.speedup >= 100.0,
        detail: format!("generate {gen:.4}s, MH {mh:.4}s, ratio {:.2}", bench.speedup),
    });
    out.checks.push(Check {
        name: "generation is deterministic per seed".into(),
        passed: bench.deterministic,
        detail: String::new(),
    });
    out.ladders.push(LadderRecord::new(Method::TemperFlow, &bench.target, 0, cfg.temperflow.alpha, &run.ladder, run.complete));
    out.timing_bench = Some(bench);
    Ok(out)
}
