use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParameterStore, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers for every parameter, keyed by name.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: BTreeMap<String, Vec<S>>,
    pub second: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig, params: &ParameterStore<S>) -> Self {
        let zeros = |_: ()| {
            params
                .iter()
                .map(|(n, t)| (n.to_string(), vec![S::zero(); t.numel()]))
                .collect::<BTreeMap<_, _>>()
        };
        AdamState {
            config,
            step: 0,
            first: zeros(()),
            second: zeros(()),
        }
    }

    /// One bias-corrected Adam update using the gradients held by `params`.
    pub fn update(&mut self, params: &mut ParameterStore<S>) -> Result<()> {
        for (name, t) in params.iter() {
            if t.grad().is_none() {
                return Err(Error::contract(format!("parameter {name} has no gradient")));
            }
            let n = t.numel();
            if self.first.get(name).map(Vec::len) != Some(n)
                || self.second.get(name).map(Vec::len) != Some(n)
            {
                return Err(Error::contract(format!(
                    "optimizer state does not match parameter {name}"
                )));
            }
        }

        self.step += 1;
        let c = self.config;
        let (b1, b2) = (S::of(c.beta1), S::of(c.beta2));
        let lr = S::of(c.lr);
        let eps = S::of(c.eps);
        let bias1 = S::of(1.0 - c.beta1.powi(self.step as i32));
        let bias2 = S::of(1.0 - c.beta2.powi(self.step as i32));

        for (name, t) in params.iter_mut() {
            let m = self.first.get_mut(name).expect("checked above");
            let v = self.second.get_mut(name).expect("checked above");
            let grad = t.grad().expect("checked above").to_vec();
            for (i, p) in t.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = b1 * m[i] + (S::one() - b1) * g;
                v[i] = b2 * v[i] + (S::one() - b2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Applies one Adam step and clears the gradients.
pub fn adam_update<S: Scalar>(params: &mut ParameterStore<S>, state: &mut AdamState<S>) -> Result<()> {
    state.update(params)?;
    params.zero_grads();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn store(value: f64, grad: f64) -> ParameterStore<f64> {
        let mut s = ParameterStore::new();
        let mut t = Tensor::full(vec![3], value);
        t.set_grad(vec![grad; 3]).unwrap();
        s.insert("w", t).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate_times_sign() {
        for g in [0.37, -2.0] {
            let mut p = store(1.0, g);
            let mut st = AdamState::new(AdamConfig::default(), &p);
            st.update(&mut p).unwrap();
            // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps)
            let expected = 1.0 - 1e-4 * g / (g.abs() + 1e-8);
            for &v in p.get("w").unwrap().data() {
                assert!((v - expected).abs() < 1e-15);
                assert!(((1.0 - v) - 1e-4 * g.signum()).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = store(0.25, 0.0);
        let mut st = AdamState::new(AdamConfig::default(), &p);
        for _ in 0..3 {
            p.get_mut("w").unwrap().set_grad(vec![0.0; 3]).unwrap();
            st.update(&mut p).unwrap();
        }
        assert!(p.get("w").unwrap().data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn missing_gradient_is_rejected() {
        let mut p = store(1.0, 1.0);
        p.zero_grads();
        let mut st = AdamState::new(AdamConfig::default(), &p);
        assert!(matches!(st.update(&mut p), Err(Error::Contract(_))));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = store(0.5, 0.0);
            let mut st = AdamState::new(AdamConfig::default(), &p);
            for k in 0..20 {
                let g = ((k as f64) * 0.7).sin();
                p.get_mut("w").unwrap().set_grad(vec![g, -g, 2.0 * g]).unwrap();
                adam_update(&mut p, &mut st).unwrap();
            }
            p.get("w").unwrap().data().to_vec()
        };
        let (a, b) = (run(), run());
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
