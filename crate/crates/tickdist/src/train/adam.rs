//! Adam with bias correction, one shared step counter across all parameter
//! tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamTensor;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment buffers, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState<E> {
    m: Vec<Tensor<E>>,
    v: Vec<Tensor<E>>,
    step: u64,
}

impl<E: Scalar> AdamState<E> {
    pub fn new(params: &[ParamTensor<E>]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update: `params[i] -= lr * m_hat / (sqrt(v_hat) + eps)` with
    /// bias-corrected moments. Entries with `None` gradients (frozen or
    /// disconnected parameters) are left untouched.
    pub fn step(
        &mut self,
        params: &mut [ParamTensor<E>],
        grads: &[Option<Tensor<E>>],
        hp: &AdamParams,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "adam state holds {} tensors, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = E::from_f64(hp.beta1);
        let b2 = E::from_f64(hp.beta2);
        let lr = E::from_f64(hp.learning_rate);
        let eps = E::from_f64(hp.epsilon);
        let one = E::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let Some(grad) = grad else { continue };
            if !param.trainable {
                continue;
            }
            if grad.shape() != param.value.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    detail: format!(
                        "gradient {:?} vs parameter {:?} for `{}`",
                        grad.shape(),
                        param.value.shape(),
                        param.name
                    ),
                });
            }
            for (((p, &g), m), v) in param
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
