use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::network::{Gradients, Network, ParamId};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum UpdateRule {
    /// θ ← θ − lr·g
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Default for UpdateRule {
    fn default() -> Self {
        UpdateRule::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Gradient-descent optimizer with per-parameter moment state.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    rule: UpdateRule,
    steps: u64,
    first: BTreeMap<ParamId, Vec<T>>,
    second: BTreeMap<ParamId, Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(rule: UpdateRule) -> Self {
        Self {
            rule,
            steps: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn adam() -> Self {
        Self::new(UpdateRule::default())
    }

    pub fn sgd() -> Self {
        Self::new(UpdateRule::Sgd)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update. Every gradient component is checked before any
    /// parameter changes; a non-finite value aborts with the parameter name.
    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>, lr: T) -> Result<()> {
        if !(lr > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        for (id, g) in grads.iter() {
            if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient at {id}[{pos}]")));
            }
            let len = net
                .param(id)
                .ok_or_else(|| Error::Shape(format!("gradient for unknown parameter {id}")))?
                .len();
            if len != g.len() {
                return Err(Error::Shape(format!(
                    "gradient for {id} has {} values, parameter has {len}",
                    g.len()
                )));
            }
        }
        self.steps += 1;
        match self.rule {
            UpdateRule::Sgd => {
                for (id, g) in grads.iter() {
                    let p = net.param_mut(id).expect("checked above");
                    for (w, &gv) in p.iter_mut().zip(g) {
                        *w -= lr * gv;
                    }
                }
            }
            UpdateRule::Adam { beta1, beta2, eps } => {
                let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(eps));
                let t = i32::try_from(self.steps).unwrap_or(i32::MAX);
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                for (id, g) in grads.iter() {
                    let m = self.first.entry(id).or_insert_with(|| vec![T::zero(); g.len()]);
                    let v = self.second.entry(id).or_insert_with(|| vec![T::zero(); g.len()]);
                    let p = net.param_mut(id).expect("checked above");
                    for i in 0..g.len() {
                        m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                        v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
