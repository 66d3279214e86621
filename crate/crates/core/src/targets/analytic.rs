use rand_distr::{Distribution, Gamma};

use super::Target;
use crate::error::Result;
use crate::rng::Rng;
use crate::Tensor;

/// Log-concave density `exp{x - exp(x/3)} / 6`.
///
/// With `t = exp(x/3)` the density becomes `t^2 e^{-t} / 2`, i.e.
/// `t ~ Gamma(3, 1)`, which gives an exact sampler `x = 3 ln t`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Unimodal1d;

pub fn make_unimodal_1d() -> Unimodal1d {
    Unimodal1d
}

impl Target for Unimodal1d {
    fn dim(&self) -> usize {
        1
    }

    fn energy(&self, x: &[f64]) -> f64 {
        -x[0] + (x[0] / 3.0).exp() + 6f64.ln()
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = -1.0 + (x[0] / 3.0).exp() / 3.0;
        Ok(())
    }

    fn truth_sample(&self, n: usize, rng: &mut Rng) -> Option<Tensor> {
        let g = Gamma::<f64>::new(3.0, 1.0).expect("valid gamma");
        Some(Tensor::column(
            (0..n).map(|_| 3.0 * g.sample(rng).ln()).collect(),
        ))
    }

    fn mode_centers(&self) -> Option<Vec<Vec<f64>>> {
        Some(vec![vec![3.0 * 3f64.ln()]])
    }

    fn name(&self) -> String {
        "unimodal".into()
    }
}
