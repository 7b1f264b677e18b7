use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelBundle;

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Moment buffers for the trainable parameters, keyed by name.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Names of parameters that have optimizer state.
    pub fn tracked(&self) -> impl Iterator<Item = &str> {
        self.moments.keys().map(String::as_str)
    }

    /// One bias-corrected Adam update of every trainable parameter, then
    /// zeroes their gradients. Frozen parameters are not touched.
    pub fn step(&mut self, params: &mut ModelBundle) -> Result<()> {
        if let Some(p) = params.iter().find(|p| p.trainable && p.grad.is_none()) {
            return Err(Error::MissingGrad(p.name.clone()));
        }
        self.moments.retain(|name, _| params.get(name).is_ok_and(|p| p.trainable));
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for p in params.iter_mut().filter(|p| p.trainable) {
            let grad = p.grad.as_mut().expect("checked above");
            let n = p.value.numel();
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            for (((w, g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let update = lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
                if update != 0.0 {
                    *w -= update;
                }
            }
            grad.data_mut().fill(0.0);
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(params: &mut ModelBundle, state: &mut AdamState) -> Result<()> {
    state.step(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn bundle(g: f64) -> ModelBundle {
        let mut b = ModelBundle::new();
        b.insert("w", Tensor::scalar(1.0), true);
        b.get_mut("w").unwrap().grad = Some(Tensor::scalar(g));
        b
    }

    #[test]
    fn zero_grad_is_fixed_point() {
        let mut b = ModelBundle::new();
        b.insert("a", Tensor::from_fn([3], |i| i as f64 - 1.3), true);
        b.get_mut("a").unwrap().grad = Some(Tensor::zeros([3]));
        let before = b.clone();
        let mut s = AdamState::new(AdamConfig::with_lr(1e-2));
        s.step(&mut b).unwrap();
        assert_eq!(s.step_count(), 1);
        for (x, y) in b.get("a").unwrap().value.data().iter().zip(before.get("a").unwrap().value.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn first_step_closed_form() {
        let mut b = bundle(0.5);
        let mut s = AdamState::new(AdamConfig::with_lr(1e-2));
        s.step(&mut b).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps).
        let expected = 1.0 - 1e-2 * 0.5 / (0.5 + 1e-8);
        let w = b.get("w").unwrap().value.item();
        assert!((w - expected).abs() < 1e-15);
        assert!((w - 0.99).abs() < 1e-9);
        assert_eq!(b.get("w").unwrap().grad.as_ref().unwrap().item(), 0.0);
    }

    #[test]
    fn frozen_untouched_and_untracked() {
        let mut b = bundle(0.5);
        b.insert("frozen", Tensor::scalar(2.0), false);
        b.get_mut("frozen").unwrap().grad = Some(Tensor::scalar(3.0));
        let mut s = AdamState::new(AdamConfig::with_lr(1e-2));
        s.step(&mut b).unwrap();
        assert_eq!(b.get("frozen").unwrap().value.item().to_bits(), 2.0f64.to_bits());
        assert_eq!(s.tracked().collect::<Vec<_>>(), vec!["w"]);
    }

    #[test]
    fn missing_grad_errors() {
        let mut b = ModelBundle::new();
        b.insert("w", Tensor::scalar(1.0), true);
        let mut s = AdamState::new(AdamConfig::with_lr(1e-2));
        assert!(matches!(s.step(&mut b), Err(Error::MissingGrad(n)) if n == "w"));
    }
}
