//! Invertible transport maps built from autoregressive layers.
//!
//! A [`Flow`] composes affine or monotone-spline autoregressive layers,
//! separated by coordinate reversals. Each layer's conditioner is a masked
//! dense network (see `made`), so the forward map needs one network pass
//! while the inverse is sequential in the coordinate index.
//!
//! Every map is written in tape primitives. The `*_on` methods record onto
//! a caller's [`Tape`] for training; the plain methods evaluate batches in
//! row chunks on throwaway tapes, fanned out with [`Exec`].

mod io;
mod made;
mod spline;

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use io::{read_container, write_container, MAGIC};
pub use spline::{SplineKind, SplineSpec};

use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{stream, Purpose, Rng};
use crate::targets::normal::LN_SQRT_2PI;
use crate::Tensor;
use made::Made;

const SIGMA_FLOOR: f64 = 1e-4;
const CHUNK: usize = 256;

/// Elementwise transform applied by each autoregressive layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Transform {
    /// `y = mu + sigma * x`.
    Affine,
    Spline(SplineSpec),
}

impl Transform {
    fn params_per_dim(&self) -> usize {
        match self {
            Transform::Affine => 2,
            Transform::Spline(s) => s.params_per_dim(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub transform: Transform,
    pub layers: usize,
    pub hidden: usize,
    pub depth: usize,
    /// Reverse coordinates between consecutive layers.
    pub permute: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            transform: Transform::Spline(SplineSpec {
                kind: SplineKind::LinearRational,
                bins: 16,
                bound: 6.0,
            }),
            layers: 6,
            hidden: 64,
            depth: 2,
            permute: true,
        }
    }
}

impl Architecture {
    pub fn affine(layers: usize, hidden: usize, depth: usize) -> Self {
        Self {
            transform: Transform::Affine,
            layers,
            hidden,
            depth,
            permute: true,
        }
    }

    pub fn spline(kind: SplineKind, bins: usize, bound: f64, layers: usize, hidden: usize, depth: usize) -> Self {
        Self {
            transform: Transform::Spline(SplineSpec { kind, bins, bound }),
            layers,
            hidden,
            depth,
            permute: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.depth == 0 {
            return Err(Error::Config("flow needs at least one layer, hidden unit and hidden layer".into()));
        }
        if let Transform::Spline(s) = self.transform {
            if s.bins < 2 {
                return Err(Error::Config(format!("spline needs at least 2 bins, got {}", s.bins)));
            }
            if !(s.bound > 0.0 && s.bound.is_finite()) {
                return Err(Error::Config(format!("spline bound must be positive, got {}", s.bound)));
            }
        }
        Ok(())
    }
}

/// Base measure of the flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Base {
    StandardNormal,
    /// Uniform on `[lo, hi]^d`. The flow then runs in logit space between a
    /// fixed logit pre-layer and a matching sigmoid post-layer, so its
    /// image stays inside the box.
    UniformBox { lo: f64, hi: f64 },
}

#[derive(Debug, Clone)]
enum Layer {
    Autoregressive { first_param: usize },
    Reverse,
}

#[derive(Debug, Clone)]
pub struct Flow {
    dim: usize,
    arch: Architecture,
    base: Base,
    made: Made,
    layers: Vec<Layer>,
    params: Vec<Tensor>,
    exec: Exec,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    dim: usize,
    architecture: Architecture,
    base: Base,
    n_tensors: usize,
}

fn affine_offset() -> f64 {
    // softplus(c) + SIGMA_FLOOR == 1
    ((1.0 - SIGMA_FLOOR).exp() - 1.0).ln()
}

fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

impl Flow {
    /// A flow that is exactly the identity map, with hidden weights drawn
    /// from `seed`.
    pub fn init_identity(arch: Architecture, dim: usize, base: Base, seed: u64) -> Result<Self> {
        arch.validate()?;
        if dim == 0 {
            return Err(Error::Config("flow dimension must be positive".into()));
        }
        if let Base::UniformBox { lo, hi } = base {
            if !(lo < hi) {
                return Err(Error::Config(format!("empty base box [{lo}, {hi}]")));
            }
        }
        let made = Made::new(dim, arch.hidden, arch.depth, arch.transform.params_per_dim());
        let mut rng = stream(seed, Purpose::Init, 0);
        let mut layers = Vec::new();
        let mut params = Vec::new();
        for l in 0..arch.layers {
            if l > 0 && arch.permute && dim > 1 {
                layers.push(Layer::Reverse);
            }
            layers.push(Layer::Autoregressive {
                first_param: params.len(),
            });
            params.extend(made.init(&mut rng));
        }
        // Restore the original coordinate order so the initial map is I.
        if layers.iter().filter(|l| matches!(l, Layer::Reverse)).count() % 2 == 1 {
            layers.push(Layer::Reverse);
        }
        Ok(Self {
            dim,
            arch,
            base,
            made,
            layers,
            params,
            exec: Exec::default(),
        })
    }

    /// One unconditional affine layer `x = mu + sigma * z`.
    pub fn constant_affine(mu: &[f64], sigma: &[f64]) -> Result<Self> {
        if mu.len() != sigma.len() || sigma.iter().any(|&s| s <= SIGMA_FLOOR) {
            return Err(Error::Config("affine needs matching mu/sigma with sigma > 1e-4".into()));
        }
        let mut f = Self::init_identity(Architecture::affine(1, 2, 1), mu.len(), Base::StandardNormal, 0)?;
        let bias = f.params.len() - 1;
        for (j, (&m, &s)) in mu.iter().zip(sigma).enumerate() {
            f.params[bias].set(0, 2 * j, m);
            f.params[bias].set(0, 2 * j + 1, inverse_softplus(s - SIGMA_FLOOR) - affine_offset());
        }
        Ok(f)
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn base(&self) -> Base {
        self.base
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len() || params.iter().zip(&self.params).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::shape("set_params", "parameter shapes differ from architecture"));
        }
        self.params = params;
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Adds `N(0, scale^2)` noise to every parameter.
    pub fn perturb(&mut self, scale: f64, rng: &mut Rng) {
        for p in &mut self.params {
            for v in p.data_mut() {
                let e: f64 = StandardNormal.sample(&mut *rng);
                *v += scale * e;
            }
        }
    }

    fn transform(&self, t: &Tape, vars: &[Var], h: Var, first: usize, inverse: bool) -> (Var, Var) {
        let n = t.shape(h)[0];
        let p = &vars[first..first + self.made.n_tensors()];
        let d = self.dim;
        let k = self.arch.transform.params_per_dim();
        if !inverse {
            let raw = self.made.forward(t, p, h);
            let raw = t.reshape(raw, n * d, k);
            let flat = t.reshape(h, n * d, 1);
            let (y, ld) = self.elementwise(t, raw, flat, false);
            return (t.reshape(y, n, d), t.row_sum(t.reshape(ld, n, d)));
        }
        let mut cur = h;
        let mut done: Vec<Var> = Vec::with_capacity(d);
        let mut ld_total: Option<Var> = None;
        for j in 0..d {
            let raw = self.made.forward(t, p, cur);
            let raw_j = t.gather_cols(raw, (j * k..(j + 1) * k).collect());
            let y_j = t.gather_cols(h, vec![j]);
            let (x_j, ld) = self.elementwise(t, raw_j, y_j, true);
            done.push(x_j);
            ld_total = Some(ld_total.map_or(ld, |acc| t.add(acc, ld)));
            let mut parts = done.clone();
            if j + 1 < d {
                parts.push(t.gather_cols(h, (j + 1..d).collect()));
            }
            cur = t.concat_cols(&parts);
        }
        (cur, ld_total.expect("dim > 0"))
    }

    /// Per-coordinate map on `[m, 1]` inputs with raw parameters `[m, k]`.
    fn elementwise(&self, t: &Tape, raw: Var, v: Var, inverse: bool) -> (Var, Var) {
        match &self.arch.transform {
            Transform::Affine => {
                let mu = t.gather_cols(raw, vec![0]);
                let s = t.gather_cols(raw, vec![1]);
                let sigma = t.shift(t.softplus(t.shift(s, affine_offset())), SIGMA_FLOOR);
                let log_sigma = t.log(sigma);
                if inverse {
                    (t.div(t.sub(v, mu), sigma), t.neg(log_sigma))
                } else {
                    (t.add(mu, t.mul(sigma, v)), log_sigma)
                }
            }
            Transform::Spline(spec) => spline::apply(t, spec, raw, v, inverse),
        }
    }

    fn box_width(&self) -> Option<(f64, f64)> {
        match self.base {
            Base::StandardNormal => None,
            Base::UniformBox { lo, hi } => Some((lo, hi - lo)),
        }
    }

    /// Box to logit space.
    fn logit_layer(t: &Tape, x: Var, lo: f64, width: f64) -> (Var, Var) {
        let u = t.scale(t.shift(x, -lo), 1.0 / width);
        let lu = t.log(u);
        let l1u = t.log(t.one_minus(u));
        let y = t.sub(lu, l1u);
        let ld = t.shift(t.neg(t.add(lu, l1u)), -width.ln());
        (y, t.row_sum(ld))
    }

    /// Logit space to box.
    fn sigmoid_layer(t: &Tape, y: Var, lo: f64, width: f64) -> (Var, Var) {
        let x = t.shift(t.scale(t.sigmoid(y), width), lo);
        // log s + log(1 - s) = -softplus(-y) - softplus(y)
        let ls = t.neg(t.add(t.softplus(t.neg(y)), t.softplus(y)));
        (x, t.row_sum(t.shift(ls, width.ln())))
    }

    fn check(t: &Tape, v: Var, layer: usize) -> Result<()> {
        if t.with_value(v, Tensor::all_finite) {
            Ok(())
        } else {
            Err(Error::NonFiniteValue {
                context: format!("flow layer {layer}"),
            })
        }
    }

    /// Records `x = T(z)` and `log det dT/dz` (`[n, 1]`) on `t`.
    pub fn forward_on(&self, t: &Tape, vars: &[Var], z: Var) -> Result<(Var, Var)> {
        let n = t.shape(z)[0];
        let mut ld = t.leaf(Tensor::zeros(n, 1));
        let mut h = z;
        if let Some((lo, w)) = self.box_width() {
            let (y, l) = Self::logit_layer(t, h, lo, w);
            h = y;
            ld = t.add(ld, l);
        }
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Reverse => h = t.gather_cols(h, (0..self.dim).rev().collect()),
                Layer::Autoregressive { first_param } => {
                    let (y, l) = self.transform(t, vars, h, *first_param, false);
                    h = y;
                    ld = t.add(ld, l);
                }
            }
            Self::check(t, h, i)?;
        }
        if let Some((lo, w)) = self.box_width() {
            let (y, l) = Self::sigmoid_layer(t, h, lo, w);
            h = y;
            ld = t.add(ld, l);
        }
        Ok((h, ld))
    }

    /// Records `z = T^{-1}(x)` and `log det dT^{-1}/dx` on `t`.
    pub fn inverse_on(&self, t: &Tape, vars: &[Var], x: Var) -> Result<(Var, Var)> {
        let n = t.shape(x)[0];
        let mut ld = t.leaf(Tensor::zeros(n, 1));
        let mut h = x;
        if let Some((lo, w)) = self.box_width() {
            let (y, l) = Self::logit_layer(t, h, lo, w);
            h = y;
            ld = t.add(ld, l);
        }
        for (i, layer) in self.layers.iter().enumerate().rev() {
            match layer {
                Layer::Reverse => h = t.gather_cols(h, (0..self.dim).rev().collect()),
                Layer::Autoregressive { first_param } => {
                    let (y, l) = self.transform(t, vars, h, *first_param, true);
                    h = y;
                    ld = t.add(ld, l);
                }
            }
            Self::check(t, h, i)?;
        }
        if let Some((lo, w)) = self.box_width() {
            let (y, l) = Self::sigmoid_layer(t, h, lo, w);
            h = y;
            ld = t.add(ld, l);
        }
        Ok((h, ld))
    }

    /// Base log-density of the rows of `z`, as `[n, 1]`.
    pub fn base_log_prob_on(&self, t: &Tape, z: Var) -> Var {
        let n = t.shape(z)[0];
        match self.base {
            Base::StandardNormal => {
                let q = t.scale(t.row_sum(t.square(z)), -0.5);
                t.shift(q, -(self.dim as f64) * LN_SQRT_2PI)
            }
            Base::UniformBox { lo, hi } => t.leaf(Tensor::filled(n, 1, -(self.dim as f64) * (hi - lo).ln())),
        }
    }

    /// `log g(x)` for the pushforward density `g`, as `[n, 1]`.
    pub fn log_prob_on(&self, t: &Tape, vars: &[Var], x: Var) -> Result<Var> {
        let (z, ld) = self.inverse_on(t, vars, x)?;
        Ok(t.add(self.base_log_prob_on(t, z), ld))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.dim {
            return Err(Error::shape("flow", format!("expected {} columns, got {}", self.dim, x.cols())));
        }
        Ok(())
    }

    /// Evaluates `f` on row chunks and stitches the per-chunk outputs.
    fn chunked<F>(&self, x: &Tensor, width: usize, f: F) -> Result<Tensor>
    where
        F: Fn(&Tape, &[Var], Var) -> Result<Var> + Sync + Send,
    {
        self.check_input(x)?;
        let n = x.rows();
        let chunks = self.exec.map(n.div_ceil(CHUNK), |c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let t = Tape::new();
            let vars: Vec<Var> = self.params.iter().map(|p| t.leaf(p.clone())).collect();
            let xv = t.leaf(x.slice_rows(lo, hi));
            f(&t, &vars, xv).map(|v| t.value(v))
        });
        let parts = chunks.into_iter().collect::<Result<Vec<_>>>()?;
        if parts.is_empty() {
            return Ok(Tensor::zeros(0, width));
        }
        Tensor::vstack(&parts)
    }

    fn split(out: Tensor, d: usize) -> (Tensor, Vec<f64>) {
        let n = out.rows();
        let mut x = Vec::with_capacity(n * d);
        let mut ld = Vec::with_capacity(n);
        for r in out.iter_rows() {
            x.extend_from_slice(&r[..d]);
            ld.push(r[d]);
        }
        (Tensor::new(n, d, x).expect("shape"), ld)
    }

    /// `T(z)` and the forward log-determinant per row.
    pub fn forward(&self, z: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let out = self.chunked(z, self.dim + 1, |t, p, zv| {
            let (x, ld) = self.forward_on(t, p, zv)?;
            Ok(t.concat_cols(&[x, ld]))
        })?;
        Ok(Self::split(out, self.dim))
    }

    /// `T^{-1}(x)` and the inverse log-determinant per row.
    pub fn inverse(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let out = self.chunked(x, self.dim + 1, |t, p, xv| {
            let (z, ld) = self.inverse_on(t, p, xv)?;
            Ok(t.concat_cols(&[z, ld]))
        })?;
        Ok(Self::split(out, self.dim))
    }

    fn outside_box(&self, row: &[f64]) -> bool {
        match self.base {
            Base::StandardNormal => false,
            Base::UniformBox { lo, hi } => row.iter().any(|&v| v <= lo || v >= hi),
        }
    }

    /// Log-density of the pushforward at each row; `-inf` outside a box base.
    pub fn log_prob(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let inside: Vec<usize> = (0..x.rows()).filter(|&i| !self.outside_box(x.row(i))).collect();
        if inside.len() == x.rows() {
            let out = self.chunked(x, 1, |t, p, xv| self.log_prob_on(t, p, xv))?;
            return Ok(out.into_data());
        }
        let rows: Vec<Vec<f64>> = inside.iter().map(|&i| x.row(i).to_vec()).collect();
        let mut lp = vec![f64::NEG_INFINITY; x.rows()];
        if !rows.is_empty() {
            let sub = Tensor::from_rows(&rows)?;
            let out = self.chunked(&sub, 1, |t, p, xv| self.log_prob_on(t, p, xv))?;
            for (&i, v) in inside.iter().zip(out.data()) {
                lp[i] = *v;
            }
        }
        Ok(lp)
    }

    pub fn base_sample(&self, n: usize, rng: &mut Rng) -> Tensor {
        match self.base {
            Base::StandardNormal => Tensor::from_fn(n, self.dim, |_, _| StandardNormal.sample(&mut *rng)),
            Base::UniformBox { lo, hi } => {
                let u = rand_distr::Uniform::new(lo, hi).expect("valid box");
                Tensor::from_fn(n, self.dim, |_, _| u.sample(&mut *rng))
            }
        }
    }

    pub fn base_log_prob(&self, z: &Tensor) -> Vec<f64> {
        z.iter_rows()
            .map(|r| match self.base {
                Base::StandardNormal => -0.5 * r.iter().map(|v| v * v).sum::<f64>() - self.dim as f64 * LN_SQRT_2PI,
                Base::UniformBox { lo, hi } => -(self.dim as f64) * (hi - lo).ln(),
            })
            .collect()
    }

    /// `n` draws of `T(Z)`.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        Ok(self.sample_with_log_prob(n, rng)?.0)
    }

    /// Draws together with their log-density, read off the forward pass.
    pub fn sample_with_log_prob(&self, n: usize, rng: &mut Rng) -> Result<(Tensor, Vec<f64>)> {
        let z = self.base_sample(n, rng);
        let lp0 = self.base_log_prob(&z);
        let (x, ld) = self.forward(&z)?;
        Ok((x, lp0.iter().zip(&ld).map(|(a, b)| a - b).collect()))
    }

    /// JSON description of the architecture.
    pub fn manifest(&self) -> serde_json::Value {
        serde_json::to_value(Manifest {
            format: "TFLW1".into(),
            dim: self.dim,
            architecture: self.arch,
            base: self.base,
            n_tensors: self.params.len(),
        })
        .expect("manifest serializes")
    }

    pub fn write_to(&self, w: impl std::io::Write) -> Result<()> {
        write_container(w, &self.manifest(), &self.params)
    }

    pub fn read_from(r: impl std::io::Read) -> Result<Self> {
        let (manifest, tensors) = read_container(r)?;
        let m: Manifest = serde_json::from_value(manifest)?;
        if m.format != "TFLW1" || m.n_tensors != tensors.len() {
            return Err(Error::Format("manifest does not match payload".into()));
        }
        let mut flow = Self::init_identity(m.architecture, m.dim, m.base, 0)?;
        flow.set_params(tensors).map_err(|e| Error::Format(e.to_string()))?;
        Ok(flow)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        std::io::Write::flush(&mut w)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spline(kind: SplineKind) -> Architecture {
        Architecture::spline(kind, 5, 4.0, 2, 8, 2)
    }

    #[test]
    fn identity_init_is_exact() {
        for arch in [
            Architecture::default(),
            Architecture::affine(3, 8, 1),
            small_spline(SplineKind::QuadraticRational),
        ] {
            let f = Flow::init_identity(arch, 3, Base::StandardNormal, 4).unwrap();
            let z = f.base_sample(100, &mut stream(1, Purpose::Eval, 0));
            let (x, ld) = f.forward(&z).unwrap();
            assert!(x.max_abs_diff(&z) <= 1e-12, "{arch:?}: {}", x.max_abs_diff(&z));
            assert!(ld.iter().all(|l| l.abs() <= 1e-12));
            let lp = f.log_prob(&x).unwrap();
            for (a, b) in lp.iter().zip(f.base_log_prob(&z)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_log_prob_at_origin() {
        let f = Flow::init_identity(Architecture::default(), 2, Base::StandardNormal, 0).unwrap();
        let lp = f.log_prob(&Tensor::zeros(1, 2)).unwrap();
        assert!((lp[0] + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn constant_affine_formula() {
        let f = Flow::constant_affine(&[1.0], &[2.0]).unwrap();
        let (x, ld) = f.forward(&Tensor::scalar(0.5)).unwrap();
        assert!((x.get(0, 0) - 2.0).abs() < 1e-12);
        assert!((ld[0] - 2f64.ln()).abs() < 1e-12);
        let g = Flow::constant_affine(&[0.0], &[2.0]).unwrap();
        for v in [-1.0, 0.3, 2.5] {
            let lp = g.log_prob(&Tensor::scalar(v)).unwrap()[0];
            let expect = crate::targets::normal::ln_pdf(v / 2.0) - 2f64.ln();
            assert!((lp - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_shifts() {
        let f = Flow::constant_affine(&[3.0], &[1.0]).unwrap();
        let a = f.sample(20_000, &mut stream(8, Purpose::Eval, 0)).unwrap();
        let b = f.sample(20_000, &mut stream(8, Purpose::Eval, 0)).unwrap();
        assert_eq!(a, b);
        let id = Flow::init_identity(Architecture::affine(1, 2, 1), 1, Base::StandardNormal, 0).unwrap();
        let z = id.sample(20_000, &mut stream(8, Purpose::Eval, 0)).unwrap();
        assert!((a.mean() - z.mean() - 3.0).abs() < 1e-9);
        assert!((a.mean() - 3.0).abs() < 3.0 * 3.0 / (20_000f64).sqrt());
    }

    #[test]
    fn box_base_stays_inside_and_round_trips() {
        let mut f = Flow::init_identity(small_spline(SplineKind::LinearRational), 2, Base::UniformBox { lo: -5.0, hi: 5.0 }, 1).unwrap();
        f.perturb(0.3, &mut stream(2, Purpose::Init, 1));
        let mut rng = stream(3, Purpose::Eval, 0);
        let z = f.base_sample(200, &mut rng);
        let (x, ldf) = f.forward(&z).unwrap();
        assert!(x.data().iter().all(|v| v.abs() < 5.0));
        let (zb, ldi) = f.inverse(&x).unwrap();
        assert!(zb.max_abs_diff(&z) < 1e-8);
        for (a, b) in ldf.iter().zip(&ldi) {
            assert!((a + b).abs() < 1e-8);
        }
        let lp = f.log_prob(&Tensor::from_rows(&[vec![6.0, 0.0], vec![0.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(lp[0], f64::NEG_INFINITY);
        assert!(lp[1].is_finite());
    }

    #[test]
    fn serialization_round_trip() {
        let mut f = Flow::init_identity(small_spline(SplineKind::LinearRational), 3, Base::StandardNormal, 5).unwrap();
        f.perturb(0.2, &mut stream(5, Purpose::Init, 9));
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        let g = Flow::read_from(buf.as_slice()).unwrap();
        assert_eq!(f.params(), g.params());
        assert_eq!(f.architecture(), g.architecture());
        let x = f.base_sample(10, &mut stream(1, Purpose::Eval, 0));
        assert_eq!(f.log_prob(&x).unwrap(), g.log_prob(&x).unwrap());
    }

    #[test]
    fn execution_strategy_does_not_change_results() {
        let mut f = Flow::init_identity(small_spline(SplineKind::LinearRational), 2, Base::StandardNormal, 5).unwrap();
        f.perturb(0.3, &mut stream(5, Purpose::Init, 3));
        let z = f.base_sample(700, &mut stream(1, Purpose::Eval, 0));
        let a = f.clone().with_exec(Exec::Sequential).forward(&z).unwrap();
        let b = f.with_exec(Exec::default()).forward(&z).unwrap();
        assert_eq!(a, b);
    }
}
