use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::normal::LN_SQRT_2PI;
use super::Target;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::Tensor;

/// Mixture of axis-aligned Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    /// `K x d`
    means: Vec<Vec<f64>>,
    /// `K x d` variances
    variances: Vec<Vec<f64>>,
    name: String,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::Config("mixture: component counts disagree".into()));
        }
        let d = means[0].len();
        if d == 0 || means.iter().chain(&variances).any(|r| r.len() != d) {
            return Err(Error::Config("mixture: inconsistent dimension".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Config("mixture: weights must be positive and sum to 1".into()));
        }
        if variances.iter().flatten().any(|&v| !(v > 0.0)) {
            return Err(Error::Config("mixture: variances must be positive".into()));
        }
        Ok(Self {
            weights,
            means,
            variances,
            name: format!("gmm{k}x{d}"),
        })
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    /// Per-component log joint `ln w_k + ln N(x; m_k, V_k)`.
    fn component_logs(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| {
                let mut acc = w.ln();
                for ((xi, mi), vi) in x.iter().zip(m).zip(v) {
                    let r = xi - mi;
                    acc -= 0.5 * r * r / vi + 0.5 * vi.ln() + LN_SQRT_2PI;
                }
                acc
            })
            .collect()
    }

    pub fn ln_density(&self, x: &[f64]) -> f64 {
        let c = self.component_logs(x);
        let m = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + c.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
    }
}

impl Target for GaussianMixture {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn energy(&self, x: &[f64]) -> f64 {
        -self.ln_density(x)
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let c = self.component_logs(x);
        let m = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = c.iter().map(|v| (v - m).exp()).sum();
        out.iter_mut().for_each(|o| *o = 0.0);
        for ((ck, mean), var) in c.iter().zip(&self.means).zip(&self.variances) {
            let r = (ck - m).exp() / z;
            for (((o, xi), mi), vi) in out.iter_mut().zip(x).zip(mean).zip(var) {
                *o += r * (xi - mi) / vi;
            }
        }
        Ok(())
    }

    fn truth_sample(&self, n: usize, rng: &mut Rng) -> Option<Tensor> {
        let d = self.dim();
        let mut out = Tensor::zeros(n, d);
        for i in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = self.weights.len() - 1;
            for (j, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    k = j;
                    break;
                }
            }
            let row = out.row_mut(i);
            for (j, r) in row.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *r = self.means[k][j] + self.variances[k][j].sqrt() * z;
            }
        }
        Some(out)
    }

    fn mode_centers(&self) -> Option<Vec<Vec<f64>>> {
        Some(self.means.clone())
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

/// Isotropic normal `N(mean, sd^2 I)`.
pub fn make_gaussian(mean: &[f64], sd: f64) -> Result<GaussianMixture> {
    Ok(GaussianMixture::new(vec![1.0], vec![mean.to_vec()], vec![vec![sd * sd; mean.len()]])?
        .named(format!("normal{}", mean.len())))
}

pub fn make_standard_normal(dim: usize) -> GaussianMixture {
    make_gaussian(&vec![0.0; dim], 1.0).expect("valid")
}

/// `0.7 N(1, 1) + 0.3 N(gap, 0.5^2)`.
pub fn make_bimodal_1d(gap: f64) -> GaussianMixture {
    GaussianMixture::new(vec![0.7, 0.3], vec![vec![1.0], vec![gap]], vec![vec![1.0], vec![0.25]])
        .expect("valid")
        .named(format!("bimodal{gap}"))
}

/// Layout of the equal-weight 2-D test mixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Circle,
    Cross,
    Grid,
}

impl Layout {
    pub const ALL: [Layout; 3] = [Layout::Circle, Layout::Cross, Layout::Grid];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(Layout::Circle),
            "cross" => Ok(Layout::Cross),
            "grid" => Ok(Layout::Grid),
            other => Err(Error::Config(format!(
                "unknown mixture layout `{other}` (expected circle, cross or grid)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Layout::Circle => "circle",
            Layout::Cross => "cross",
            Layout::Grid => "grid",
        }
    }

    /// Mode centers and the per-mode standard deviation.
    pub fn geometry(self) -> (Vec<Vec<f64>>, f64) {
        match self {
            Layout::Circle => {
                let c = (0..8)
                    .map(|k| {
                        let a = 2.0 * PI * k as f64 / 8.0;
                        vec![5.0 * a.cos(), 5.0 * a.sin()]
                    })
                    .collect();
                (c, 0.25)
            }
            Layout::Grid => {
                let ticks = [-4.0, -2.0, 0.0, 2.0, 4.0];
                let c = ticks
                    .iter()
                    .flat_map(|&x| ticks.iter().map(move |&y| vec![x, y]))
                    .collect();
                (c, 0.2)
            }
            Layout::Cross => {
                let mut c = vec![vec![0.0, 0.0]];
                for t in [-4.0, -8.0 / 3.0, -4.0 / 3.0, 4.0 / 3.0, 8.0 / 3.0, 4.0] {
                    c.push(vec![t, t]);
                    c.push(vec![t, -t]);
                }
                (c, 0.2)
            }
        }
    }
}

/// Equal-weight mixture with the layout's default geometry; `sigma`
/// overrides the per-mode standard deviation.
pub fn make_gmm2d_with(layout: Layout, sigma: Option<f64>) -> Result<GaussianMixture> {
    let (centers, default_sigma) = layout.geometry();
    let s = sigma.unwrap_or(default_sigma);
    let k = centers.len();
    let var = vec![vec![s * s; 2]; k];
    Ok(GaussianMixture::new(vec![1.0 / k as f64; k], centers, var)?.named(layout.as_str()))
}

pub fn make_gmm2d(layout: &str) -> Result<GaussianMixture> {
    make_gmm2d_with(Layout::parse(layout)?, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn bimodal_density_at_one() {
        let t = make_bimodal_1d(8.0);
        let p = (-t.energy(&[1.0])).exp();
        assert!((p - 0.279_26).abs() < 1e-5, "{p}");
    }

    #[test]
    fn bimodal_truth_right_mass() {
        let t = make_bimodal_1d(8.0);
        let x = t.truth_sample(100_000, &mut stream(1, Purpose::Truth, 0)).unwrap();
        let frac = x.data().iter().filter(|&&v| v > 4.5).count() as f64 / 1e5;
        assert!((frac - 0.3).abs() < 0.01, "{frac}");
    }

    #[test]
    fn circle_density_vanishes_at_origin() {
        let t = make_gmm2d("circle").unwrap();
        assert!((-t.energy(&[0.0, 0.0])).exp() < 1e-10);
    }

    #[test]
    fn grid_truth_occupancy_is_uniform() {
        let t = make_gmm2d("grid").unwrap();
        let x = t.truth_sample(100_000, &mut stream(2, Purpose::Truth, 0)).unwrap();
        let mut counts = [0usize; 25];
        for r in x.iter_rows() {
            let i = ((r[0] + 5.0) / 2.0).floor().clamp(0.0, 4.0) as usize;
            let j = ((r[1] + 5.0) / 2.0).floor().clamp(0.0, 4.0) as usize;
            counts[i * 5 + j] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e5 - 0.04).abs() < 0.01);
        }
    }

    #[test]
    fn cross_has_thirteen_modes_with_unit_mass() {
        let t = make_gmm2d("cross").unwrap();
        assert_eq!(t.means().len(), 13);
        assert!((t.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_layout_is_rejected() {
        assert!(matches!(make_gmm2d("spiral"), Err(Error::Config(_))));
    }
}
