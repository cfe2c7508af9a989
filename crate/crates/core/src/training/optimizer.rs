use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::generator::ParamStore;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmsGradConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AmsGradConfig {
    fn default() -> Self {
        AmsGradConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub vhat: Tensor<T>,
}

/// AMSGrad without bias correction:
/// `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`, `v̂ ← max(v̂, v)`,
/// `θ ← θ − α·m/(√v̂ + ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmsGrad<T> {
    pub config: AmsGradConfig,
    pub step: u64,
    pub moments: BTreeMap<String, Moments<T>>,
}

impl<T: Element> AmsGrad<T> {
    pub fn new(config: AmsGradConfig) -> Self {
        AmsGrad {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Applies one update to every parameter in `trainable` (all of them when
    /// `None`). A parameter without a gradient is updated with `g = 0`.
    ///
    /// Returns `Ok(false)` and leaves everything untouched when any gradient
    /// is non-finite.
    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &Gradients<T>,
        trainable: Option<&BTreeSet<String>>,
    ) -> Result<bool> {
        if grads.values().any(|g| !g.all_finite()) {
            return Ok(false);
        }
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let (lr, eps) = (T::lit(c.learning_rate), T::lit(c.epsilon));
        for (name, theta) in params.iter_mut() {
            if trainable.is_some_and(|t| !t.contains(name)) {
                continue;
            }
            let g = grads.get(name);
            if let Some(g) = g {
                theta.check_same_shape(g)?;
            }
            let st = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: Tensor::zeros(theta.shape()),
                v: Tensor::zeros(theta.shape()),
                vhat: Tensor::zeros(theta.shape()),
            });
            if st.m.shape() != theta.shape() {
                return Err(Error::shape(format!(
                    "optimizer state for `{name}` has the wrong shape"
                )));
            }
            let gd = g.map(|g| g.data());
            let th = theta.data_mut();
            let (m, v, vh) = (st.m.data_mut(), st.v.data_mut(), st.vhat.data_mut());
            for i in 0..th.len() {
                let gi = gd.map_or(T::zero(), |d| d[i]);
                m[i] = b1 * m[i] + one_b1 * gi;
                v[i] = b2 * v[i] + one_b2 * gi * gi;
                if v[i] > vh[i] {
                    vh[i] = v[i];
                }
                th[i] -= lr * m[i] / (vh[i].sqrt() + eps);
            }
        }
        self.step += 1;
        Ok(true)
    }
}
