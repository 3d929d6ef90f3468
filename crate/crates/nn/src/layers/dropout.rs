use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Mode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Inverted dropout: kept activations are scaled by `1 / (1 - rate)`.
#[derive(Clone, Debug)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
    mask: Option<Vec<bool>>,
}

impl Dropout {
    pub(crate) fn new(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
        }
    }

    pub(crate) fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub(crate) fn forward<T: Scalar>(&mut self, input: &Tensor<T>, mode: Mode) -> Tensor<T> {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.mask = None;
            return input.clone();
        }
        let scale = T::from_f64_lossy(1.0 / (1.0 - self.rate));
        let mask: Vec<bool> = (0..input.len())
            .map(|_| self.rng.random::<f64>() >= self.rate)
            .collect();
        let mut out = input.clone();
        for (v, &keep) in out.data_mut().iter_mut().zip(&mask) {
            *v = if keep { *v * scale } else { T::zero() };
        }
        self.mask = Some(mask);
        out
    }

    pub(crate) fn backward<T: Scalar>(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let Some(mask) = &self.mask else {
            return grad_out.clone();
        };
        let scale = T::from_f64_lossy(1.0 / (1.0 - self.rate));
        let mut g = grad_out.clone();
        for (v, &keep) in g.data_mut().iter_mut().zip(mask) {
            *v = if keep { *v * scale } else { T::zero() };
        }
        g
    }
}
