use rand::Rng;

use super::Param;
use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Fully connected layer on `[N, in]`, weight stored as `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub(crate) weight: Param<T>,
    pub(crate) bias: Param<T>,
    in_features: usize,
    out_features: usize,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub(crate) fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::new(Tensor::randn(&[out_features, in_features], 0.02, rng)),
            bias: Param::new(Tensor::zeros(&[out_features])),
            in_features,
            out_features,
            input: None,
        }
    }

    pub(crate) fn forward(&mut self, layer: &str, input: &Tensor<T>) -> Result<Tensor<T>> {
        let s = input.shape();
        if s.len() != 2 || s[1] != self.in_features {
            return Err(NnError::ShapeMismatch {
                layer: layer.to_string(),
                expected: format!("[N, {}]", self.in_features),
                found: format!("{s:?}"),
            });
        }
        let n = s[0];
        let mut out = Tensor::zeros(&[n, self.out_features]);
        for row in out.data_mut().chunks_mut(self.out_features) {
            row.copy_from_slice(self.bias.value.data());
        }
        // Y = X · Wᵀ + b
        T::gemm(
            n,
            self.in_features,
            self.out_features,
            T::one(),
            input.data(),
            self.in_features as isize,
            1,
            self.weight.value.data(),
            1,
            self.in_features as isize,
            T::one(),
            out.data_mut(),
            self.out_features as isize,
            1,
        );
        self.input = Some(input.clone());
        Ok(out)
    }

    pub(crate) fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let input = self.input.as_ref().expect("linear backward called before forward");
        let n = input.batch();
        let (fi, fo) = (self.in_features, self.out_features);
        for row in grad_out.data().chunks(fo) {
            for (b, &g) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *b = *b + g;
            }
        }
        // dW += dYᵀ · X
        T::gemm(
            fo,
            n,
            fi,
            T::one(),
            grad_out.data(),
            1,
            fo as isize,
            input.data(),
            fi as isize,
            1,
            T::one(),
            self.weight.grad.data_mut(),
            fi as isize,
            1,
        );
        // dX = dY · W
        let mut grad_in = Tensor::zeros(&[n, fi]);
        T::gemm(
            n,
            fo,
            fi,
            T::one(),
            grad_out.data(),
            fo as isize,
            1,
            self.weight.value.data(),
            fi as isize,
            1,
            T::zero(),
            grad_in.data_mut(),
            fi as isize,
            1,
        );
        grad_in
    }
}
