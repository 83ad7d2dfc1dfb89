//! First-order optimizers for the toy policy: plain SGD and AdamW with
//! decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adamw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    default,
    bound(serialize = "F: Serialize", deserialize = "F: serde::Deserialize<'de> + Scalar")
)]
pub struct AdamWParams<F> {
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
    pub weight_decay: F,
}

impl<F: Scalar> Default for AdamWParams<F> {
    fn default() -> Self {
        Self {
            beta1: F::of(0.9),
            beta2: F::of(0.999),
            epsilon: F::of(1e-8),
            weight_decay: F::zero(),
        }
    }
}

impl<F: Scalar> AdamWParams<F> {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v >= F::zero() && v < F::one()) {
                return Err(Error::config(format!("adamw.{name} must lie in [0, 1)")));
            }
        }
        if !(self.epsilon > F::zero()) {
            return Err(Error::config("adamw.epsilon must be positive"));
        }
        if !(self.weight_decay >= F::zero() && self.weight_decay.is_finite()) {
            return Err(Error::config("adamw.weight_decay must be non-negative"));
        }
        Ok(())
    }
}

/// Optimizer state: kind, learning rate, AdamW moments and step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Serialize", deserialize = "F: serde::Deserialize<'de> + Scalar"))]
pub struct OptimizerState<F> {
    pub kind: OptimizerKind,
    pub learning_rate: F,
    pub adamw: AdamWParams<F>,
    m: Vec<F>,
    v: Vec<F>,
    step: u64,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(
        kind: OptimizerKind,
        learning_rate: F,
        adamw: AdamWParams<F>,
        n_params: usize,
    ) -> Result<Self> {
        if !(learning_rate > F::zero() && learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        adamw.validate()?;
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adamw => (vec![F::zero(); n_params], vec![F::zero(); n_params]),
        };
        Ok(Self {
            kind,
            learning_rate,
            adamw,
            m,
            v,
            step: 0,
        })
    }

    pub fn sgd(learning_rate: F) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate, AdamWParams::default(), 0)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One parameter update in place. Rejects shape mismatches and
    /// non-finite gradients.
    pub fn apply(&mut self, params: &mut [F], grad: &[F]) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::numeric(format!(
                "gradient length {} does not match parameter length {}",
                grad.len(),
                params.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::numeric("gradient contains non-finite entries"));
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.iter_mut().zip(grad) {
                    *p = *p - lr * g;
                }
            }
            OptimizerKind::Adamw => {
                if self.m.len() != params.len() {
                    return Err(Error::numeric(format!(
                        "optimizer moments sized {} do not match parameters {}",
                        self.m.len(),
                        params.len()
                    )));
                }
                let a = self.adamw;
                let t = F::of(self.step as f64);
                let bias1 = F::one() - a.beta1.powf(t);
                let bias2 = F::one() - a.beta2.powf(t);
                for i in 0..params.len() {
                    let g = grad[i];
                    params[i] = params[i] * (F::one() - lr * a.weight_decay);
                    self.m[i] = a.beta1 * self.m[i] + (F::one() - a.beta1) * g;
                    self.v[i] = a.beta2 * self.v[i] + (F::one() - a.beta2) * g * g;
                    let m_hat = self.m[i] / bias1;
                    let v_hat = self.v[i] / bias2;
                    params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + a.epsilon);
                }
            }
        }
        Ok(())
    }
}
