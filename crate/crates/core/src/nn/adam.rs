use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::scalar::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self {
            config,
            step: 0,
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
        }
    }

    pub fn cast<U: Real>(&self) -> AdamState<U> {
        AdamState {
            config: self.config,
            step: self.step,
            m: self.m.iter().map(|x| U::lit(x.as_f64())).collect(),
            v: self.v.iter().map(|x| U::lit(x.as_f64())).collect(),
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Shape(format!(
            "adam: {n} parameters, {} gradients, {}/{} moments",
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    state.step += 1;
    let c = state.config;
    let b1 = T::lit(c.beta1);
    let b2 = T::lit(c.beta2);
    let one = T::one();
    let bc1 = T::lit(1.0 - c.beta1.powf(state.step as f64));
    let bc2 = T::lit(1.0 - c.beta2.powf(state.step as f64));
    let lr = T::lit(c.lr);
    let eps = T::lit(c.epsilon);
    let p = params.values_mut();
    let g = grads.values();
    for i in 0..n {
        let gi = g[i];
        let m = b1 * state.m[i] + (one - b1) * gi;
        let v = b2 * state.v[i] + (one - b2) * gi * gi;
        state.m[i] = m;
        state.v[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Architecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> ModelParams<f64> {
        ModelParams::init(Architecture::tiny(2, 2), &mut ChaCha8Rng::seed_from_u64(3))
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = model();
        let before = p.clone();
        let g = ModelParams::zeros(*p.arch());
        let mut st = AdamState::new(AdamConfig::default(), p.len());
        for _ in 0..7 {
            adam_step(&mut p, &g, &mut st).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step, 7);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = model();
        let before = p.clone();
        let mut g = ModelParams::zeros(*p.arch());
        for (i, v) in g.values_mut().iter_mut().enumerate() {
            *v = if i % 2 == 0 { 0.37 } else { -2.5 };
        }
        let mut st = AdamState::new(AdamConfig::default(), p.len());
        adam_step(&mut p, &g, &mut st).unwrap();
        for i in 0..p.len() {
            let delta = p.values()[i] - before.values()[i];
            let expect = -1e-3 * g.values()[i].signum();
            assert!((delta - expect).abs() < 1e-9, "{delta} vs {expect}");
        }
    }

    #[test]
    fn identical_streams_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let grads: Vec<ModelParams<f64>> = (0..5)
            .map(|_| ModelParams::init(Architecture::tiny(2, 2), &mut rng))
            .collect();
        let run = || {
            let mut p = model();
            let mut st = AdamState::new(AdamConfig::default(), p.len());
            for g in &grads {
                adam_step(&mut p, g, &mut st).unwrap();
            }
            p
        };
        assert_eq!(run().values(), run().values());
    }

    #[test]
    fn shape_mismatch() {
        let mut p = model();
        let g = ModelParams::<f64>::zeros(Architecture::tiny(3, 2));
        let mut st = AdamState::new(AdamConfig::default(), p.len());
        assert!(adam_step(&mut p, &g, &mut st).is_err());
    }
}
