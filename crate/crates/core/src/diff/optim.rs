use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sgd,
    Adam,
}

/// Step size `alpha_k` as a function of the step count `k` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// `lr / (1 + decay * (k - 1))`
    InverseTime { lr: f64, decay: f64 },
}

impl LrSchedule {
    pub fn at(&self, k: u64) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::InverseTime { lr, decay } => lr / (1.0 + decay * (k.saturating_sub(1)) as f64),
        }
    }
}

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub method: Method,
    pub schedule: LrSchedule,
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
    /// Rescales the joint gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
}

impl OptimizerSpec {
    pub fn adam(lr: f64) -> Self {
        Self {
            method: Method::Adam,
            schedule: LrSchedule::Constant { lr },
            b1: 0.9,
            b2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self {
            method: Method::Sgd,
            ..Self::adam(lr)
        }
    }

    pub fn with_clip(mut self, norm: f64) -> Self {
        self.clip_norm = Some(norm);
        self
    }
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

#[derive(Debug, Clone)]
pub struct OptimState {
    pub spec: OptimizerSpec,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl OptimState {
    pub fn new(spec: OptimizerSpec, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self {
            spec,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// Applies whichever method the spec names.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        match self.spec.method {
            Method::Adam => adam_step(params, grads, self),
            Method::Sgd => sgd_step(params, grads, self),
        }
    }
}

fn check_shapes(params: &[Tensor], grads: &[Tensor], state: &OptimState) -> Result<()> {
    let ok = params.len() == grads.len()
        && params.len() == state.m.len()
        && params
            .iter()
            .zip(grads)
            .zip(&state.m)
            .all(|((p, g), m)| p.shape() == g.shape() && p.shape() == m.shape());
    if ok {
        Ok(())
    } else {
        Err(Error::Config("optimizer: parameter/gradient/state shapes disagree".into()))
    }
}

fn clip_factor(grads: &[Tensor], clip: Option<f64>) -> f64 {
    match clip {
        Some(max) => {
            let norm = grads
                .iter()
                .flat_map(|g| g.data())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    }
}

fn guard(params: &[Tensor]) -> Result<()> {
    match params.iter().position(|p| !p.all_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::NonFiniteValue {
            context: format!("parameter tensor {i} after optimizer step"),
        }),
    }
}

/// Adam with bias correction.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut OptimState) -> Result<()> {
    check_shapes(params, grads, state)?;
    if state.spec.method != Method::Adam {
        return Err(Error::Config("adam_step called with a non-adam state".into()));
    }
    state.step += 1;
    let spec = state.spec;
    let lr = spec.schedule.at(state.step);
    let t = state.step as i32;
    let c1 = 1.0 - spec.b1.powi(t);
    let c2 = 1.0 - spec.b2.powi(t);
    let scale = clip_factor(grads, spec.clip_norm);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let gi = gi * scale;
            *mi = spec.b1 * *mi + (1.0 - spec.b1) * gi;
            *vi = spec.b2 * *vi + (1.0 - spec.b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *pi -= lr * mhat / (vhat.sqrt() + spec.eps);
        }
    }
    guard(params)
}

/// Plain gradient step `p <- p - alpha_k g`.
pub fn sgd_step(params: &mut [Tensor], grads: &[Tensor], state: &mut OptimState) -> Result<()> {
    check_shapes(params, grads, state)?;
    state.step += 1;
    let lr = state.spec.schedule.at(state.step);
    let scale = clip_factor(grads, state.spec.clip_norm);
    for (p, g) in params.iter_mut().zip(grads) {
        for (pi, gi) in p.data_mut().iter_mut().zip(g.data()) {
            *pi -= lr * scale * gi;
        }
    }
    guard(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Tensor {
        Tensor::scalar(v)
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut p = vec![Tensor::new(1, 3, vec![1.0, -2.0, 3.0]).unwrap()];
        let mut st = OptimState::new(OptimizerSpec::adam(0.1), &p);
        for _ in 0..5 {
            st.step(&mut p, &[Tensor::zeros(1, 3)]).unwrap();
        }
        assert_eq!(p[0].data(), &[1.0, -2.0, 3.0]);
        assert!(st.first_moments()[0].data().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn adam_moments_decay_under_zero_gradient() {
        let mut p = vec![s(0.0)];
        let mut st = OptimState::new(OptimizerSpec::adam(0.1), &p);
        st.step(&mut p, &[s(1.0)]).unwrap();
        let (m1, v1) = (st.first_moments()[0].get(0, 0), st.second_moments()[0].get(0, 0));
        st.step(&mut p, &[s(0.0)]).unwrap();
        assert!(st.first_moments()[0].get(0, 0) < m1);
        assert!(st.second_moments()[0].get(0, 0) < v1);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        let mut p = vec![s(0.0)];
        let mut st = OptimState::new(OptimizerSpec::adam(0.1), &p);
        adam_step(&mut p, &[s(1.0)], &mut st).unwrap();
        // m_hat = 1, v_hat = 1: step = 0.1 / (1 + 1e-8)
        assert!((p[0].get(0, 0) + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut p = vec![s(0.3)];
            let mut st = OptimState::new(OptimizerSpec::adam(0.05), &p);
            adam_step(&mut p, &[s(0.7)], &mut st).unwrap();
            adam_step(&mut p, &[s(-0.2)], &mut st).unwrap();
            p[0].get(0, 0)
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn sgd_examples() {
        let mut p = vec![s(1.0)];
        let mut st = OptimState::new(OptimizerSpec::sgd(0.5), &p);
        sgd_step(&mut p, &[s(2.0)], &mut st).unwrap();
        assert_eq!(p[0].get(0, 0), 0.0);
        sgd_step(&mut p, &[s(0.0)], &mut st).unwrap();
        assert_eq!(p[0].get(0, 0), 0.0);
    }

    #[test]
    fn sgd_quadratic_contraction() {
        // f(p) = (p - 3)^2, error contracts by (1 - 2 alpha) = 0.5 per step.
        let mut p = vec![s(0.0)];
        let mut st = OptimState::new(OptimizerSpec::sgd(0.25), &p);
        for _ in 0..50 {
            let g = 2.0 * (p[0].get(0, 0) - 3.0);
            sgd_step(&mut p, &[s(g)], &mut st).unwrap();
        }
        assert!((p[0].get(0, 0) - 3.0).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let mut p = vec![Tensor::zeros(2, 2)];
        let mut st = OptimState::new(OptimizerSpec::adam(0.1), &p);
        let err = adam_step(&mut p, &[Tensor::zeros(1, 2)], &mut st).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn non_finite_parameter_aborts() {
        let mut p = vec![s(0.0)];
        let mut st = OptimState::new(OptimizerSpec::sgd(1.0), &p);
        assert!(sgd_step(&mut p, &[s(f64::NAN)], &mut st).is_err());
    }
}
