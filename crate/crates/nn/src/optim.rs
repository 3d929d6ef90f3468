//! First-order optimizers.

use crate::error::{NnError, Result};
use crate::layers::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Method {
    /// Adam with the usual adversarial-training settings (β₁ = 0.5).
    pub fn adam() -> Self {
        Method::Adam {
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer hyper-parameters and per-parameter moment accumulators.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub method: Method,
    pub learning_rate: f64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(method: Method, learning_rate: f64) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        Self {
            method,
            learning_rate,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(Method::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(Method::adam(), learning_rate)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update to `params` given matching `grads`.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(NnError::ShapeMismatch {
                layer: "optimizer".into(),
                expected: format!("{} gradients", params.len()),
                found: format!("{} gradients", grads.len()),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(NnError::ShapeMismatch {
                    layer: format!("optimizer parameter {i}"),
                    expected: format!("{:?}", p.shape()),
                    found: format!("{:?}", g.shape()),
                });
            }
        }
        if let Method::Adam { .. } = self.method {
            if self.first.is_empty() {
                self.first = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
                self.second = self.first.clone();
            } else if self.first.len() != params.len()
                || self.first.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape())
            {
                return Err(NnError::ShapeMismatch {
                    layer: "optimizer".into(),
                    expected: "parameters matching the accumulated moments".into(),
                    found: format!("{} parameters of different shapes", params.len()),
                });
            }
        }
        self.step += 1;
        let lr = T::from_f64_lossy(self.learning_rate);
        match self.method {
            Method::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (v, &d) in p.data_mut().iter_mut().zip(g.data()) {
                        *v = *v - lr * d;
                    }
                }
            }
            Method::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let t = self.step as i32;
                let b1 = T::from_f64_lossy(beta1);
                let b2 = T::from_f64_lossy(beta2);
                let c1 = T::from_f64_lossy(1.0 - beta1.powi(t));
                let c2 = T::from_f64_lossy(1.0 - beta2.powi(t));
                let eps = T::from_f64_lossy(epsilon);
                let one = T::one();
                for (((p, g), m), s) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    for (((v, &d), mi), si) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(s.data_mut())
                    {
                        *mi = b1 * *mi + (one - b1) * d;
                        *si = b2 * *si + (one - b2) * d * d;
                        let m_hat = *mi / c1;
                        let s_hat = *si / c2;
                        *v = *v - lr * m_hat / (s_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }

    /// Update a network's parameters from their accumulated gradients.
    pub fn step_params(&mut self, params: Vec<&mut Param<T>>) -> Result<()> {
        let (mut values, grads): (Vec<&mut Tensor<T>>, Vec<&Tensor<T>>) =
            params.into_iter().map(|p| (&mut p.value, &p.grad)).unzip();
        self.step(&mut values, &grads)
    }
}
