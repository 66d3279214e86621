use rand_distr::{Distribution, Normal};

use crate::diff::{Tape, Var};
use crate::rng::Rng;
use crate::Tensor;

/// Masked dense network whose output block `j` depends only on inputs
/// `0..j`.
#[derive(Debug, Clone)]
pub(crate) struct Made {
    depth: usize,
    masks: Vec<Tensor>,
}

impl Made {
    pub fn new(dim: usize, hidden: usize, depth: usize, per_dim: usize) -> Self {
        let in_deg: Vec<usize> = (1..=dim).collect();
        let hid_deg: Vec<usize> = (0..hidden).map(|u| 1 + u % dim.saturating_sub(1).max(1)).collect();
        let out_deg: Vec<usize> = (0..dim * per_dim).map(|c| c / per_dim + 1).collect();
        let mut masks = Vec::with_capacity(depth + 1);
        let mask = |rows: &[usize], cols: &[usize], strict: bool| {
            Tensor::from_fn(rows.len(), cols.len(), |i, j| {
                let ok = if strict { cols[j] > rows[i] } else { cols[j] >= rows[i] };
                if ok {
                    1.0
                } else {
                    0.0
                }
            })
        };
        masks.push(mask(&in_deg, &hid_deg, false));
        for _ in 1..depth {
            masks.push(mask(&hid_deg, &hid_deg, false));
        }
        masks.push(mask(&hid_deg, &out_deg, true));
        Self { depth, masks }
    }

    /// Number of parameter tensors (weight and bias per layer).
    pub fn n_tensors(&self) -> usize {
        2 * (self.depth + 1)
    }

    /// Hidden layers get scaled normal weights; the output layer starts at
    /// zero so the conditioner emits all-zero raw parameters.
    pub fn init(&self, rng: &mut Rng) -> Vec<Tensor> {
        let mut out = Vec::with_capacity(self.n_tensors());
        for (l, m) in self.masks.iter().enumerate() {
            let [r, c] = m.shape();
            if l == self.depth {
                out.push(Tensor::zeros(r, c));
            } else {
                let n = Normal::new(0.0, 1.0 / (r as f64).sqrt()).expect("valid normal");
                let w = Tensor::from_fn(r, c, |i, j| m.get(i, j) * n.sample(&mut *rng));
                out.push(w);
            }
            out.push(Tensor::zeros(1, c));
        }
        out
    }

    /// Raw outputs `[n, dim * per_dim]` for inputs `[n, dim]`.
    pub fn forward(&self, t: &Tape, params: &[Var], x: Var) -> Var {
        let mut h = x;
        for (l, m) in self.masks.iter().enumerate() {
            let w = t.mul(params[2 * l], t.leaf(m.clone()));
            let z = t.add(t.matmul(h, w), params[2 * l + 1]);
            h = if l == self.depth { z } else { t.tanh(z) };
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn outputs_are_autoregressive() {
        let made = Made::new(4, 12, 2, 3);
        let mut rng = stream(1, Purpose::Init, 0);
        let mut params = made.init(&mut rng);
        // Non-zero output layer so dependence is visible.
        let k = params.len() - 2;
        params[k] = params[k].map(|_| 0.3);
        let eval = |x: Vec<f64>| {
            let t = Tape::new();
            let vars: Vec<Var> = params.iter().map(|p| t.leaf(p.clone())).collect();
            let xv = t.leaf(Tensor::new(1, 4, x).unwrap());
            t.value(made.forward(&t, &vars, xv))
        };
        let base = eval(vec![0.1, -0.4, 0.8, 0.3]);
        for i in 0..4 {
            let mut x = vec![0.1, -0.4, 0.8, 0.3];
            x[i] += 1.0;
            let moved = eval(x);
            for c in 0..12 {
                let j = c / 3;
                let changed = (moved.get(0, c) - base.get(0, c)).abs() > 1e-12;
                if j <= i {
                    assert!(!changed, "output of coord {j} depends on input {i}");
                }
            }
        }
        // The last block sees every earlier input.
        let mut x = vec![0.1, -0.4, 0.8, 0.3];
        x[0] += 1.0;
        assert!((eval(x).get(0, 11) - base.get(0, 11)).abs() > 1e-9);
    }
}
