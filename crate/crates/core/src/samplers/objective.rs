//! Batch objectives whose loss is a reduction `F(r_1, ..., r_M)` of
//! per-row terms. Rows are split into chunks, each recorded on its own
//! tape; the reduction weights `dF/dr_i` are applied afterwards.

use std::ops::Range;

use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::flows::Flow;
use crate::targets::{energies, energies_and_gradients, Target};
use crate::Tensor;

const CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Reduce {
    Mean,
    /// `log(M^{-1} sum exp r_i)`
    LogMeanExp,
}

struct Recorded {
    tape: Tape,
    params: Vec<Var>,
    rows: Var,
}

/// Loss value and parameter gradients of `F(r)` where `build` records the
/// terms for a range of rows as an `[m, 1]` node.
pub(crate) fn row_gradient<B>(flow: &Flow, n_rows: usize, reduce: Reduce, build: B) -> Result<(f64, Vec<Tensor>)>
where
    B: Fn(&Tape, &[Var], Range<usize>) -> Result<Var> + Sync + Send,
{
    let exec = flow.exec();
    let n_chunks = n_rows.div_ceil(CHUNK);
    let recorded = exec
        .map(n_chunks, |c| {
            let range = c * CHUNK..((c + 1) * CHUNK).min(n_rows);
            let tape = Tape::new();
            let params: Vec<Var> = flow.params().iter().map(|p| tape.leaf(p.clone())).collect();
            let rows = build(&tape, &params, range)?;
            Ok(Recorded { tape, params, rows })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let r: Vec<f64> = recorded.iter().flat_map(|c| c.tape.value(c.rows).into_data()).collect();
    if let Some(c) = recorded
        .iter()
        .find(|c| !c.tape.with_value(c.rows, Tensor::all_finite))
    {
        // Let the tape name the first primitive that went non-finite.
        let s = c.tape.sum(c.rows);
        c.tape.backward(s)?;
        return Err(Error::NonFinite { op: "unknown" });
    }
    let m = r.len() as f64;
    let (loss, weights) = match reduce {
        Reduce::Mean => (r.iter().sum::<f64>() / m, vec![1.0 / m; r.len()]),
        Reduce::LogMeanExp => {
            let mx = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r.iter().map(|v| (v - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            (mx + s.ln() - m.ln(), e.iter().map(|v| v / s).collect())
        }
    };

    let jobs: Vec<(usize, Recorded)> = recorded.into_iter().enumerate().collect();
    let grads = exec
        .map_vec(jobs, |(c, rec)| {
            let lo = c * CHUNK;
            let w = Tensor::column(weights[lo..lo + rec.tape.shape(rec.rows)[0]].to_vec());
            let wv = rec.tape.leaf(w);
            let s = rec.tape.sum(rec.tape.mul(rec.rows, wv));
            let g = rec.tape.backward(s)?;
            Ok(rec.params.iter().map(|&p| g.wrt(p)).collect::<Vec<_>>())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut total: Vec<Tensor> = flow.params().iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
    for chunk in grads {
        for (acc, g) in total.iter_mut().zip(chunk) {
            acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
        }
    }
    Ok((loss, total))
}

/// `E(T(z_i)) - log det dT(z_i)` for base draws `z`.
pub(crate) fn kl_gradient(flow: &Flow, target: &dyn Target, z: &Tensor) -> Result<(f64, Vec<Tensor>)> {
    row_gradient(flow, z.rows(), Reduce::Mean, |t, p, range| {
        let zv = t.leaf(z.slice_rows(range.start, range.end));
        let (x, ld) = flow.forward_on(t, p, zv)?;
        let xv = t.value(x);
        let (e, g) = energies_and_gradients(target, &xv, Exec::Sequential)?;
        let ev = t.row_fn(x, e, g);
        Ok(t.sub(ev, ld))
    })
}

/// Frozen proposal draws for one L² stage.
pub(crate) struct L2Batch {
    pub x: Tensor,
    pub log_h: Vec<f64>,
    /// `-E(x_i) - log U`
    pub log_f: Vec<f64>,
}

impl L2Batch {
    pub fn new(x: Tensor, log_h: Vec<f64>, target: &dyn Target, log_u: f64) -> Self {
        let log_f = energies(target, &x, Exec::Sequential)
            .into_iter()
            .map(|e| -e - log_u)
            .collect();
        Self { x, log_h, log_f }
    }
}

/// Log-domain L² objective: `log mean exp W_i` with
/// `W_i = 2 log|g(x_i) - f(x_i)| - log h(x_i)`.
pub(crate) fn l2_gradient(flow: &Flow, batch: &L2Batch) -> Result<(f64, Vec<Tensor>)> {
    row_gradient(flow, batch.x.rows(), Reduce::LogMeanExp, |t, p, range| {
        let m = range.len();
        let x = t.leaf(batch.x.slice_rows(range.start, range.end));
        let lg = flow.log_prob_on(t, p, x)?;
        let lf = t.leaf(Tensor::column(batch.log_f[range.clone()].to_vec()));
        let lh = t.leaf(Tensor::column(batch.log_h[range].to_vec()));
        let top = t.max(lg, lf);
        let gap = t.max(t.abs(t.sub(lg, lf)), t.leaf(Tensor::filled(m, 1, 1e-10)));
        // log|g - f| = max + log(1 - exp(-|log g - log f|))
        let log_abs = t.add(top, t.log(t.one_minus(t.exp(t.neg(gap)))));
        Ok(t.sub(t.scale(log_abs, 2.0), lh))
    })
}

/// Negative mean log-likelihood of data rows.
pub(crate) fn nll_gradient(flow: &Flow, x: &Tensor) -> Result<(f64, Vec<Tensor>)> {
    row_gradient(flow, x.rows(), Reduce::Mean, |t, p, range| {
        let xv = t.leaf(x.slice_rows(range.start, range.end));
        Ok(t.neg(flow.log_prob_on(t, p, xv)?))
    })
}
