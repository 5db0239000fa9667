use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 penalty folded into the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid ADAM hyperparameters {self:?}")))
        }
    }
}

/// Moment buffers keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub first: BTreeMap<String, Vec<T>>,
    pub second: BTreeMap<String, Vec<T>>,
}

/// ADAM with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub state: AdamState<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam {
            config,
            state: AdamState {
                step: 0,
                first: BTreeMap::new(),
                second: BTreeMap::new(),
            },
        })
    }

    /// Updates every parameter that holds a gradient. Parameters without a
    /// gradient are left untouched. Nothing is modified if any gradient is
    /// non-finite.
    pub fn step(&mut self, params: &[(String, Tensor<T>)]) -> Result<()> {
        for (name, p) in params {
            if let Some(g) = p.grad_ref().as_ref() {
                if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of `{name}` at index {i} is {}",
                        g[i]
                    )));
                }
            }
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let (lr, eps, wd) = (T::of(c.lr), T::of(c.epsilon), T::of(c.weight_decay));
        for (name, p) in params {
            let grad = p.grad_ref();
            let Some(g) = grad.as_ref() else { continue };
            let n = g.len();
            let m = self
                .state
                .first
                .entry(name.clone())
                .or_insert_with(|| vec![T::zero(); n]);
            let v = self
                .state
                .second
                .entry(name.clone())
                .or_insert_with(|| vec![T::zero(); n]);
            if m.len() != n || v.len() != n {
                return Err(Error::Shape(format!(
                    "optimizer state for `{name}` holds {} values, parameter has {n}",
                    m.len()
                )));
            }
            let mut data = p.data_mut();
            for i in 0..n {
                let gi = g[i] + wd * data[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                data[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn named(t: &Tensor<f64>) -> Vec<(String, Tensor<f64>)> {
        vec![("p".to_string(), t.clone())]
    }

    #[test]
    fn zero_gradient_no_decay_leaves_parameter() {
        let p = Tensor::<f64>::param(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        p.add_grad(&[0.0, 0.0, 0.0]);
        let mut opt = Adam::new(AdamConfig { weight_decay: 0.0, ..Default::default() }).unwrap();
        opt.step(&named(&p)).unwrap();
        assert_eq!(p.to_vec(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let p = Tensor::<f64>::param(&[1], vec![0.0]).unwrap();
        p.add_grad(&[1.0]);
        let mut opt = Adam::new(AdamConfig { lr: 1e-4, weight_decay: 0.0, ..Default::default() }).unwrap();
        opt.step(&named(&p)).unwrap();
        // m̂ = v̂ = 1, so the update is lr / (1 + eps)
        assert!((p.item() + 1e-4 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(opt.state.step, 1);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let p = Tensor::<f64>::param(&[2], vec![1.0, 1.0]).unwrap();
        p.add_grad(&[0.0, f64::NAN]);
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let err = opt.step(&named(&p)).unwrap_err();
        assert!(err.to_string().contains("`p`"), "{err}");
        assert_eq!(p.to_vec(), vec![1.0, 1.0]);
        assert_eq!(opt.state.step, 0);
    }

    #[test]
    fn deterministic_runs() {
        let run = || {
            let p = Tensor::<f32>::param(&[4], vec![0.1, 0.2, -0.3, 0.4]).unwrap();
            let mut opt = Adam::new(AdamConfig::default()).unwrap();
            for k in 0..100 {
                p.zero_grad();
                let g: Vec<f32> = p.data().iter().map(|v| v * 2.0 + (k as f32) * 1e-3).collect();
                p.add_grad(&g);
                opt.step(&[("p".into(), p.clone())]).unwrap();
            }
            p.to_vec()
        };
        let (a, b) = (run(), run());
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Adam::<f32>::new(AdamConfig { lr: 0.0, ..Default::default() }).is_err());
        assert!(Adam::<f32>::new(AdamConfig { beta1: 1.0, ..Default::default() }).is_err());
    }
}
