//! Sample-quality metrics: exact discrete 1-Wasserstein distance under the
//! L1 ground cost, the unbiased MMD U-statistic with a Gaussian kernel,
//! their truth-adjusted forms and a mode-occupancy audit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{stream, Purpose};
use crate::targets::Target;
use crate::Tensor;

/// Largest sample size accepted by [`wasserstein1`].
pub const MAX_W1_SIZE: usize = 4096;
/// Slack allowed on reduced costs by the optimality certificate.
pub const DUAL_TOL: f64 = 1e-9;

/// Dense `n x m` matrix of pairwise L1 distances.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CostMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_cols(op: &'static str, x: &Tensor, y: &Tensor) -> Result<()> {
    if x.cols() != y.cols() {
        return Err(Error::shape(op, format!("dimensions {} and {} differ", x.cols(), y.cols())));
    }
    Ok(())
}

pub fn cost_matrix(x: &Tensor, y: &Tensor, exec: Exec) -> Result<CostMatrix> {
    check_cols("cost_matrix", x, y)?;
    let m = y.rows();
    let mut data = vec![0.0; x.rows() * m];
    exec.fill_chunks(&mut data, m.max(1), |i, row| {
        for (j, c) in row.iter_mut().enumerate() {
            *c = l1(x.row(i), y.row(j));
        }
    });
    Ok(CostMatrix {
        rows: x.rows(),
        cols: m,
        data,
    })
}

/// Optimal assignment with the dual potentials that certify it.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Column matched to each row.
    pub col_of_row: Vec<usize>,
    pub cost: f64,
    pub row_potential: Vec<f64>,
    pub col_potential: Vec<f64>,
}

impl Assignment {
    /// Smallest reduced cost `C_ij - u_i - v_j`.
    pub fn min_reduced_cost(&self, c: &CostMatrix) -> f64 {
        let mut lo = f64::INFINITY;
        for i in 0..c.rows {
            for j in 0..c.cols {
                lo = lo.min(c.get(i, j) - self.row_potential[i] - self.col_potential[j]);
            }
        }
        lo
    }
}

/// Square assignment by shortest augmenting paths (Hungarian method with
/// potentials). Errors if the final potentials fail dual feasibility.
pub fn solve_assignment(c: &CostMatrix) -> Result<Assignment> {
    let n = c.rows;
    if n != c.cols {
        return Err(Error::Unsupported(format!("assignment needs a square matrix, got {n}x{}", c.cols)));
    }
    if c.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue {
            context: "cost matrix".into(),
        });
    }
    // 1-based with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &c.data[(i0 - 1) * n..i0 * n];
            let (mut delta, mut j1) = (f64::INFINITY, 0);
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0; n];
    for j in 1..=n {
        col_of_row[p[j] - 1] = j - 1;
    }
    let cost = col_of_row.iter().enumerate().map(|(i, &j)| c.get(i, j)).sum();
    let out = Assignment {
        col_of_row,
        cost,
        row_potential: u[1..].to_vec(),
        col_potential: v[1..].to_vec(),
    };
    let slack = out.min_reduced_cost(c);
    if slack < -DUAL_TOL * (1.0 + cost.abs()) {
        return Err(Error::Domain(format!("assignment certificate failed: reduced cost {slack}")));
    }
    Ok(out)
}

/// Exact W1 between equal-size empirical measures under the L1 cost.
pub fn wasserstein1(x: &Tensor, y: &Tensor) -> Result<f64> {
    wasserstein1_with(x, y, Exec::default())
}

pub fn wasserstein1_with(x: &Tensor, y: &Tensor, exec: Exec) -> Result<f64> {
    let n = x.rows();
    if n != y.rows() {
        return Err(Error::Unsupported(format!("W1 needs equal sample sizes, got {n} and {}", y.rows())));
    }
    if n == 0 || n > MAX_W1_SIZE {
        return Err(Error::Config(format!("W1 sample size must lie in 1..={MAX_W1_SIZE}, got {n}")));
    }
    let c = cost_matrix(x, y, exec)?;
    Ok(solve_assignment(&c)?.cost / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise Euclidean distance of a reference sample.
    Median,
}

/// Gaussian kernel `exp(-|a - b|^2 / (2 h^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rbf {
    pub bandwidth: f64,
}

impl Rbf {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Config(format!("kernel bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { bandwidth })
    }

    /// Median heuristic on the rows of `x`.
    pub fn median(x: &Tensor) -> Result<Self> {
        let n = x.rows();
        let mut d: Vec<f64> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                d.push(sq_dist(x.row(i), x.row(j)));
            }
        }
        if d.is_empty() {
            return Err(Error::Config("median bandwidth needs at least two points".into()));
        }
        let mid = d.len() / 2;
        let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
        Self::new(m.sqrt())
    }

    pub fn resolve(spec: Bandwidth, reference: &Tensor) -> Result<Self> {
        match spec {
            Bandwidth::Fixed(h) => Self::new(h),
            Bandwidth::Median => Self::median(reference),
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        (-sq_dist(a, b) / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }
}

/// Unbiased squared MMD with an arbitrary kernel. May be negative.
pub fn mmd_with<K>(x: &Tensor, y: &Tensor, kernel: K, exec: Exec) -> Result<f64>
where
    K: Fn(&[f64], &[f64]) -> f64 + Sync + Send,
{
    check_cols("mmd", x, y)?;
    let (n, m) = (x.rows(), y.rows());
    if n < 2 || m < 2 {
        return Err(Error::Config("MMD needs at least two rows per sample".into()));
    }
    let within = |a: &Tensor| {
        let k = a.rows();
        exec.sum(k, |i| (0..k).filter(|&j| j != i).map(|j| kernel(a.row(i), a.row(j))).sum())
            / (k * (k - 1)) as f64
    };
    let cross = exec.sum(n, |i| (0..m).map(|j| kernel(x.row(i), y.row(j))).sum()) / (n * m) as f64;
    Ok(within(x) + within(y) - 2.0 * cross)
}

pub fn mmd(x: &Tensor, y: &Tensor, kernel: &Rbf) -> Result<f64> {
    let k = *kernel;
    mmd_with(x, y, move |a, b| k.eval(a, b), Exec::default())
}

/// Metrics of `X` net of the same metrics between two truth samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustedMetrics {
    pub w1: f64,
    pub mmd: f64,
    pub w1_raw: f64,
    pub mmd_raw: f64,
    pub w1_truth: f64,
    pub mmd_truth: f64,
    pub bandwidth: f64,
}

/// Draws `Y` and `Y~` of the size of `x` from the target's exact sampler and
/// returns `W(X, Y) - W(Y, Y~)` and `MMD(X, Y) - MMD(Y, Y~)`. The kernel
/// bandwidth comes from the pooled truth draws, so it does not depend on `x`.
pub fn adjusted_metrics(x: &Tensor, target: &dyn Target, bandwidth: Bandwidth, seed: u64) -> Result<AdjustedMetrics> {
    let n = x.rows();
    let draw = |k| {
        target
            .truth_sample(n, &mut stream(seed, Purpose::Truth, k))
            .ok_or_else(|| Error::Unsupported(format!("{} has no exact sampler", target.name())))
    };
    let y = draw(0)?;
    let y2 = draw(1)?;
    let kernel = Rbf::resolve(bandwidth, &Tensor::vstack(&[y.clone(), y2.clone()])?)?;
    let w1_raw = wasserstein1(x, &y)?;
    let w1_truth = wasserstein1(&y, &y2)?;
    let mmd_raw = mmd(x, &y, &kernel)?;
    let mmd_truth = mmd(&y, &y2, &kernel)?;
    Ok(AdjustedMetrics {
        w1: w1_raw - w1_truth,
        mmd: mmd_raw - mmd_truth,
        w1_raw,
        mmd_raw,
        w1_truth,
        mmd_truth,
        bandwidth: kernel.bandwidth,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    /// Fraction of rows within the radius of each center.
    pub fractions: Vec<f64>,
    pub unassigned: f64,
}

impl Occupancy {
    /// Largest `|fraction - 1/K|` over the modes.
    pub fn max_deviation_from_uniform(&self) -> f64 {
        let k = self.fractions.len() as f64;
        self.fractions.iter().map(|f| (f - 1.0 / k).abs()).fold(0.0, f64::max)
    }
}

pub fn mode_occupancy(x: &Tensor, centers: &[Vec<f64>], radius: f64) -> Result<Occupancy> {
    if x.rows() == 0 {
        return Err(Error::Config("occupancy needs at least one row".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::Config(format!("radius must be positive, got {radius}")));
    }
    if centers.iter().any(|c| c.len() != x.cols()) {
        return Err(Error::shape("mode_occupancy", "center dimension differs from sample"));
    }
    for (i, a) in centers.iter().enumerate() {
        for b in &centers[i + 1..] {
            if sq_dist(a, b).sqrt() < 2.0 * radius {
                return Err(Error::Config("mode balls overlap at this radius".into()));
            }
        }
    }
    let r2 = radius * radius;
    let mut counts = vec![0usize; centers.len()];
    for row in x.iter_rows() {
        if let Some(k) = centers.iter().position(|c| sq_dist(row, c) <= r2) {
            counts[k] += 1;
        }
    }
    let n = x.rows() as f64;
    let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let unassigned = 1.0 - counts.iter().sum::<usize>() as f64 / n;
    Ok(Occupancy { fractions, unassigned })
}
