//! Experiment configuration, read from TOML. Every section is optional and
//! falls back to the desk-scale defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use temperflow::flows::{Architecture, Base, SplineKind};
use temperflow::metrics::Bandwidth;
use temperflow::samplers::{BetaConvention, BetaMoments, TemperFlowConfig, TrainConfig};
use temperflow::diff::OptimizerSpec;
use temperflow::targets::{
    make_bimodal_1d, make_copula_target, make_gaussian, make_gmm2d_with, make_unimodal_1d, Layout, SharedTarget,
};

use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Fig1,
    Fig2,
    Gmm2d,
    Copula,
    AblationKlTempering,
    AlphaSweep,
    Timing,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Fig1 => "fig1",
            ExperimentKind::Fig2 => "fig2",
            ExperimentKind::Gmm2d => "gmm2d",
            ExperimentKind::Copula => "copula",
            ExperimentKind::AblationKlTempering => "ablation_kl_tempering",
            ExperimentKind::AlphaSweep => "alpha_sweep",
            ExperimentKind::Timing => "timing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "temperflow")]
    TemperFlow,
    #[serde(rename = "temperflow+rej")]
    TemperFlowRej,
    #[serde(rename = "kl")]
    Kl,
    #[serde(rename = "kl+tempering")]
    KlTempering,
    #[serde(rename = "mh")]
    Mh,
    #[serde(rename = "hmc")]
    Hmc,
    #[serde(rename = "pt")]
    Pt,
    /// Ten times the iterations, keeping every tenth state.
    #[serde(rename = "mh_long")]
    MhLong,
    #[serde(rename = "hmc_long")]
    HmcLong,
    #[serde(rename = "pt_long")]
    PtLong,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::TemperFlow => "temperflow",
            Method::TemperFlowRej => "temperflow+rej",
            Method::Kl => "kl",
            Method::KlTempering => "kl+tempering",
            Method::Mh => "mh",
            Method::Hmc => "hmc",
            Method::Pt => "pt",
            Method::MhLong => "mh_long",
            Method::HmcLong => "hmc_long",
            Method::PtLong => "pt_long",
        }
    }

    pub fn is_mcmc(self) -> bool {
        matches!(
            self,
            Method::Mh | Method::Hmc | Method::Pt | Method::MhLong | Method::HmcLong | Method::PtLong
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Unimodal1d,
    Bimodal1d {
        #[serde(default = "default_gap")]
        gap: f64,
    },
    Gmm2d {
        layout: Layout,
        #[serde(default)]
        sigma: Option<f64>,
    },
    Copula {
        s: usize,
        d: usize,
        #[serde(default = "default_theta")]
        theta: f64,
    },
    Gaussian {
        mean: Vec<f64>,
        #[serde(default = "one")]
        sd: f64,
    },
}

fn default_gap() -> f64 {
    8.0
}
fn default_theta() -> f64 {
    2.0
}
fn one() -> f64 {
    1.0
}

impl TargetSpec {
    pub fn build(&self) -> Result<SharedTarget> {
        Ok(match self {
            TargetSpec::Unimodal1d => Arc::new(make_unimodal_1d()),
            TargetSpec::Bimodal1d { gap } => Arc::new(make_bimodal_1d(*gap)),
            TargetSpec::Gmm2d { layout, sigma } => Arc::new(make_gmm2d_with(*layout, *sigma)?),
            TargetSpec::Copula { s, d, theta } => Arc::new(make_copula_target(*s, *d, *theta)?),
            TargetSpec::Gaussian { mean, sd } => Arc::new(make_gaussian(mean, *sd)?),
        })
    }

    /// Short label used in CSV rows.
    pub fn label(&self) -> String {
        match self {
            TargetSpec::Unimodal1d => "unimodal1d".into(),
            TargetSpec::Bimodal1d { gap } => format!("bimodal1d_gap{gap}"),
            TargetSpec::Gmm2d { layout, .. } => layout.as_str().into(),
            TargetSpec::Copula { s, d, .. } => format!("copula_s{s}_d{d}"),
            TargetSpec::Gaussian { mean, .. } => format!("gaussian{}", mean.len()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Affine,
    Lrs,
    Qrs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSpec {
    pub transform: TransformKind,
    pub bins: usize,
    pub bound: f64,
    pub layers: usize,
    pub hidden: usize,
    pub depth: usize,
    /// Uniform base on `[lo, hi]^d` instead of the standard normal.
    pub base_box: Option<[f64; 2]>,
}

impl Default for FlowSpec {
    fn default() -> Self {
        Self {
            transform: TransformKind::Lrs,
            bins: 16,
            bound: 6.0,
            layers: 6,
            hidden: 64,
            depth: 2,
            base_box: None,
        }
    }
}

impl FlowSpec {
    pub fn architecture(&self) -> Architecture {
        match self.transform {
            TransformKind::Affine => Architecture::affine(self.layers, self.hidden, self.depth),
            TransformKind::Lrs => Architecture::spline(
                SplineKind::LinearRational,
                self.bins,
                self.bound,
                self.layers,
                self.hidden,
                self.depth,
            ),
            TransformKind::Qrs => Architecture::spline(
                SplineKind::QuadraticRational,
                self.bins,
                self.bound,
                self.layers,
                self.hidden,
                self.depth,
            ),
        }
    }

    pub fn base(&self) -> Base {
        match self.base_box {
            Some([lo, hi]) => Base::UniformBox { lo, hi },
            None => Base::StandardNormal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemperFlowSpec {
    pub beta0: f64,
    pub alpha: f64,
    pub batch: usize,
    pub lr: f64,
    pub iters_low_beta: usize,
    pub iters_high_beta: usize,
    /// Rolling-mean window of the stopping rule; 0 runs every stage to its
    /// full budget.
    pub window: usize,
    pub tol: f64,
    pub max_stages: usize,
    pub beta_samples: usize,
    pub normalizer_samples: usize,
    pub polish: bool,
    pub convention: BetaConvention,
    pub moments: BetaMoments,
}

impl Default for TemperFlowSpec {
    fn default() -> Self {
        let d = TemperFlowConfig::default();
        Self {
            beta0: d.beta0,
            alpha: d.alpha,
            batch: d.train.batch,
            lr: 1e-3,
            iters_low_beta: d.iters_low_beta,
            iters_high_beta: d.iters_high_beta,
            window: d.train.window,
            tol: d.train.tol,
            max_stages: d.max_stages,
            beta_samples: d.beta_samples,
            normalizer_samples: d.normalizer_samples,
            polish: d.polish,
            convention: d.convention,
            moments: d.moments,
        }
    }
}

impl TemperFlowSpec {
    pub fn config(&self, seed: u64) -> TemperFlowConfig {
        TemperFlowConfig {
            beta0: self.beta0,
            alpha: self.alpha,
            train: TrainConfig {
                batch: self.batch,
                max_iters: self.iters_high_beta,
                window: self.window,
                tol: self.tol,
                optimizer: OptimizerSpec::adam(self.lr),
                seed,
            },
            iters_low_beta: self.iters_low_beta,
            iters_high_beta: self.iters_high_beta,
            max_stages: self.max_stages,
            beta_samples: self.beta_samples,
            normalizer_samples: self.normalizer_samples,
            convention: self.convention,
            moments: self.moments,
            polish: self.polish,
            ..TemperFlowConfig::default()
        }
    }
}

/// Plain KL sampler at `beta = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KlSpec {
    pub iters: usize,
    pub batch: usize,
    pub lr: f64,
    pub window: usize,
}

impl Default for KlSpec {
    fn default() -> Self {
        Self {
            iters: 2000,
            batch: 256,
            lr: 1e-3,
            window: 50,
        }
    }
}

impl KlSpec {
    pub fn train(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch: self.batch,
            max_iters: self.iters,
            window: self.window,
            optimizer: OptimizerSpec::adam(self.lr),
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSpec {
    pub sigma_mh: f64,
    pub hmc_eps: f64,
    pub hmc_steps: usize,
    pub pt_chains: usize,
    pub pt_beta_min: f64,
    /// Proposal sd of the `beta = 1` tempering chain.
    pub sigma_pt: f64,
    pub burnin: usize,
    pub thin: usize,
    /// Thinning of the `*_long` variants.
    pub long_thin: usize,
}

impl Default for McmcSpec {
    fn default() -> Self {
        Self {
            sigma_mh: 0.2,
            hmc_eps: 0.2,
            hmc_steps: 5,
            pt_chains: 5,
            pt_beta_min: 0.1,
            sigma_pt: 0.2,
            burnin: 200,
            thin: 1,
            long_thin: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSpec {
    pub bandwidth: Bandwidth,
    /// Occupancy radius; defaults to half the smallest distance between
    /// mode centers.
    pub occupancy_radius: Option<f64>,
    /// Draws from flow-based samplers for the occupancy audit.
    pub occupancy_samples: usize,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self {
            bandwidth: Bandwidth::Median,
            occupancy_radius: None,
            occupancy_samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig1Spec {
    pub snapshots: Vec<usize>,
    pub grid: [f64; 2],
    pub grid_points: usize,
}

impl Default for Fig1Spec {
    fn default() -> Self {
        Self {
            snapshots: vec![0, 10, 50, 100, 500],
            grid: [-8.0, 12.0],
            grid_points: 401,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig2Spec {
    /// Mixing weight of the right component in the starting sampler.
    pub init_right_weight: f64,
    pub l2_iters: usize,
    pub kl_iters: usize,
    pub snapshots: Vec<usize>,
    /// Maximum-likelihood iterations used to place the starting sampler.
    pub pretrain_iters: usize,
    pub pretrain_samples: usize,
    pub grid: [f64; 2],
    pub grid_points: usize,
}

impl Default for Fig2Spec {
    fn default() -> Self {
        Self {
            init_right_weight: 0.1,
            l2_iters: 2000,
            kl_iters: 100,
            snapshots: vec![0, 10, 50, 100, 500, 1000, 2000],
            pretrain_iters: 3000,
            pretrain_samples: 20_000,
            grid: [-4.0, 12.0],
            grid_points: 321,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaSweepSpec {
    pub alphas: Vec<f64>,
}

impl Default for AlphaSweepSpec {
    fn default() -> Self {
        Self {
            alphas: vec![0.5, 0.7, 0.9],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingSpec {
    pub draws: usize,
    pub mh_iters: usize,
}

impl Default for TimingSpec {
    fn default() -> Self {
        Self {
            draws: 10_000,
            mh_iters: 10_200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSpec {
    /// `betas.jsonl` of an earlier TemperFlow run whose ladders are reused;
    /// without it the experiment trains the TemperFlow arm itself.
    pub ladder_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub write_samples: bool,
    #[serde(default)]
    pub targets: Vec<TargetSpec>,
    #[serde(default)]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub flow: FlowSpec,
    #[serde(default)]
    pub temperflow: TemperFlowSpec,
    #[serde(default)]
    pub kl: KlSpec,
    #[serde(default)]
    pub mcmc: McmcSpec,
    #[serde(default)]
    pub metrics: MetricsSpec,
    #[serde(default)]
    pub fig1: Fig1Spec,
    #[serde(default)]
    pub fig2: Fig2Spec,
    #[serde(default)]
    pub alpha_sweep: AlphaSweepSpec,
    #[serde(default)]
    pub timing: TimingSpec,
    #[serde(default)]
    pub ablation: AblationSpec,
}

fn default_replications() -> usize {
    10
}
fn default_n_samples() -> usize {
    1000
}
fn default_output() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.replications == 0 {
            return bad("replications must be positive".into());
        }
        if self.n_samples < 2 || self.n_samples > temperflow::metrics::MAX_W1_SIZE {
            return bad(format!(
                "n_samples must lie in 2..={}, got {}",
                temperflow::metrics::MAX_W1_SIZE,
                self.n_samples
            ));
        }
        for t in &self.targets {
            t.build()?;
        }
        self.flow.architecture().validate()?;
        if let Some([lo, hi]) = self.flow.base_box {
            if !(lo < hi) {
                return bad("base_box needs lo < hi".into());
            }
        }
        self.temperflow.config(self.seed).validate()?;
        self.kl.train(self.seed).validate()?;
        let m = &self.mcmc;
        if !(m.sigma_mh > 0.0 && m.hmc_eps > 0.0 && m.sigma_pt > 0.0) || m.hmc_steps == 0 {
            return bad("MCMC step sizes and leapfrog count must be positive".into());
        }
        if m.thin == 0 || m.long_thin == 0 || m.pt_chains == 0 {
            return bad("thinning and chain counts must be positive".into());
        }
        temperflow::mcmc::PtConfig::geometric(m.pt_chains, m.pt_beta_min, m.sigma_pt)?.validate()?;
        if let Some(r) = self.metrics.occupancy_radius {
            if !(r > 0.0) {
                return bad(format!("occupancy_radius must be positive, got {r}"));
            }
        }
        if self.alpha_sweep.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return bad("every alpha must lie in (0, 1)".into());
        }
        if self.methods.contains(&Method::KlTempering) && !self.methods.contains(&Method::TemperFlow) {
            return bad("kl+tempering reuses the temperflow ladder; list temperflow too".into());
        }
        self.validate_for_experiment()
    }

    fn validate_for_experiment(&self) -> Result<()> {
        let need_targets = |min: usize| -> Result<()> {
            if self.targets.len() < min {
                return Err(HarnessError::Config(format!(
                    "{} needs at least {min} target(s)",
                    self.experiment.as_str()
                )));
            }
            Ok(())
        };
        let need_methods = || -> Result<()> {
            if self.methods.is_empty() {
                return Err(HarnessError::Config(format!("{} needs a method list", self.experiment.as_str())));
            }
            Ok(())
        };
        match self.experiment {
            ExperimentKind::Fig1 | ExperimentKind::Fig2 => {
                if self.targets.iter().any(|t| !matches!(t, TargetSpec::Unimodal1d | TargetSpec::Bimodal1d { .. })) {
                    return Err(HarnessError::Config("fig1/fig2 use the one-dimensional targets".into()));
                }
                if self.experiment == ExperimentKind::Fig2 {
                    let w = self.fig2.init_right_weight;
                    if !(w > 0.0 && w < 1.0) {
                        return Err(HarnessError::Config("fig2.init_right_weight must lie in (0, 1)".into()));
                    }
                }
                Ok(())
            }
            ExperimentKind::Gmm2d | ExperimentKind::Copula => {
                need_targets(1)?;
                need_methods()
            }
            ExperimentKind::AblationKlTempering => need_targets(1),
            ExperimentKind::AlphaSweep => {
                need_targets(1)?;
                if self.alpha_sweep.alphas.is_empty() {
                    return Err(HarnessError::Config("alpha_sweep.alphas is empty".into()));
                }
                Ok(())
            }
            ExperimentKind::Timing => {
                need_targets(1)?;
                if self.timing.draws == 0 || self.timing.mh_iters <= self.mcmc.burnin {
                    return Err(HarnessError::Config("timing needs draws > 0 and mh_iters > burnin".into()));
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GMM: &str = r#"
experiment = "gmm2d"
seed = 3
replications = 2
methods = ["temperflow", "temperflow+rej", "mh", "pt"]

[[targets]]
kind = "gmm2d"
layout = "grid"

[flow]
layers = 4
hidden = 32
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_toml(GMM).unwrap();
        assert_eq!(c.experiment, ExperimentKind::Gmm2d);
        assert_eq!(c.n_samples, 1000);
        assert_eq!(c.flow.bins, 16);
        assert_eq!(c.mcmc.sigma_mh, 0.2);
        assert_eq!(c.methods[1], Method::TemperFlowRej);
        assert_eq!(c.targets[0].label(), "grid");
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = ExperimentConfig::from_toml(&GMM.replace("hidden = 32", "hiden = 32")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("hiden") && msg.contains("line"), "{msg}");
        assert!(ExperimentConfig::from_toml(&format!("{GMM}\nbogus = 1\n")).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let with = |from: &str, to: &str| ExperimentConfig::from_toml(&GMM.replace(from, to));
        assert!(with("replications = 2", "replications = 0").is_err());
        assert!(with("\"temperflow\", \"temperflow+rej\", \"mh\", \"pt\"", "\"kl+tempering\"").is_err());
        assert!(with("layout = \"grid\"", "layout = \"ring\"").is_err());
        let alpha = format!("{GMM}\n[alpha_sweep]\nalphas = [0.5, 1.2]\n");
        assert!(ExperimentConfig::from_toml(&alpha).is_err());
        assert!(ExperimentConfig::from_toml("").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::from_toml(GMM).unwrap();
        let b = ExperimentConfig::from_toml(&GMM.replace("seed = 3", "seed = 4")).unwrap();
        assert_eq!(a.hash(), ExperimentConfig::from_toml(GMM).unwrap().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
