use std::collections::BTreeMap;

use crate::{ParamStore, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates and per-parameter step counts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T> {
    pub steps: BTreeMap<String, u64>,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
}

/// Adam with bias correction. Parameters that receive no gradient in a step
/// are left untouched, moments included.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub state: AdamState<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            state: AdamState {
                steps: BTreeMap::new(),
                m: BTreeMap::new(),
                v: BTreeMap::new(),
            },
        }
    }

    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &BTreeMap<String, Tensor<T>>,
        lr: f64,
    ) {
        let b1 = T::from_f64_lossy(self.config.beta1);
        let b2 = T::from_f64_lossy(self.config.beta2);
        let eps = T::from_f64_lossy(self.config.eps);
        for (name, grad) in grads {
            let param = store
                .param_mut(name)
                .unwrap_or_else(|| panic!("gradient for unknown parameter {name}"));
            assert_eq!(param.shape(), grad.shape(), "gradient shape for {name}");
            let t = {
                let s = self.state.steps.entry(name.clone()).or_insert(0);
                *s += 1;
                *s
            };
            let m = self
                .state
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            let v = self
                .state
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            let c1 = T::from_f64_lossy(1.0 - self.config.beta1.powi(t as i32));
            let c2 = T::from_f64_lossy(1.0 - self.config.beta2.powi(t as i32));
            let step = T::from_f64_lossy(lr);
            for (((p, &g), m), v) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p = *p - step * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
