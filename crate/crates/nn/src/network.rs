use rand::Rng;

use crate::error::{NnError, Result};
use crate::layers::{Layer, LayerSpec, Mode, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Scalar loss value and its gradient with respect to the network output.
#[derive(Clone, Debug)]
pub struct Loss<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Loss<T> {
    pub fn new(value: T, grad: Tensor<T>) -> Self {
        Self {
            value: Tensor::scalar(value),
            grad,
        }
    }
}

/// Ordered stack of layers applied one after another.
#[derive(Clone, Debug)]
pub struct Sequential<T> {
    name: String,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            layers: Vec::new(),
        }
    }

    /// Build from specs, naming layers `<name>.<index>.<kind>`.
    pub fn from_specs<R: Rng + ?Sized>(name: impl Into<String>, specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let mut net = Self::new(name);
        for spec in specs {
            net.push(spec.clone(), rng)?;
        }
        Ok(net)
    }

    pub fn push<R: Rng + ?Sized>(&mut self, spec: LayerSpec, rng: &mut R) -> Result<()> {
        let label = format!("{}.{}.{:?}", self.name, self.layers.len(), spec.kind()).to_lowercase();
        self.layers.push(Layer::new(label, spec, rng)?);
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec().clone()).collect()
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = layer.forward(&x, mode)?;
        }
        Ok(x)
    }

    /// Backpropagate through every layer; returns the gradient for the input.
    pub fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_output.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    /// Forward, evaluate `loss`, backpropagate, and return the loss value
    /// together with one gradient per parameter (in [`Sequential::params`] order).
    ///
    /// Gradients are computed from zero; previously accumulated values are discarded.
    pub fn gradients<F>(&mut self, input: &Tensor<T>, mode: Mode, loss: F) -> Result<(T, Vec<Tensor<T>>)>
    where
        F: FnOnce(&Tensor<T>) -> Result<Loss<T>>,
    {
        self.zero_grad();
        let out = self.forward(input, mode)?;
        let Loss { value, grad } = loss(&out)?;
        if value.len() != 1 {
            return Err(NnError::NonScalarLoss(value.shape().to_vec()));
        }
        if grad.shape() != out.shape() {
            return Err(NnError::ShapeMismatch {
                layer: format!("{}.loss", self.name),
                expected: format!("{:?}", out.shape()),
                found: format!("{:?}", grad.shape()),
            });
        }
        let v = value.data()[0];
        if !v.is_finite() {
            return Err(NnError::NonFinite {
                layer: format!("{}.loss", self.name),
                stage: "forward",
            });
        }
        self.backward(&grad)?;
        let grads = self.params().into_iter().map(|p| p.grad.clone()).collect();
        Ok((v, grads))
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Clamp every parameter into `[-bound, bound]`.
    pub fn clip_params(&mut self, bound: f64) {
        let b = T::from_f64_lossy(bound);
        for p in self.params_mut() {
            for v in p.value.data_mut() {
                *v = v.max(-b).min(b);
            }
        }
    }

    /// Per-sample output shape for a given per-sample input shape, by a
    /// dry eval-mode run on a single zero sample of a cloned network.
    pub fn output_shape(&self, sample_shape: &[usize]) -> Result<Vec<usize>> {
        let mut probe = self.clone();
        let mut shape = vec![1];
        shape.extend_from_slice(sample_shape);
        let out = probe.forward(&Tensor::zeros(&shape), Mode::Eval)?;
        Ok(out.shape()[1..].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = Sequential::<f64>::from_specs(
            "net",
            &[
                LayerSpec::conv(2, 3, 3, 1),
                LayerSpec::Activation(Activation::LeakyRelu(0.2)),
            ],
            &mut rng,
        )
        .unwrap();
        let x = Tensor::randn(&[2, 2, 4, 4], 1.0, &mut rng);
        let (v, grads) = net
            .gradients(&x, Mode::Train, |out| Ok(Loss::new(7.0, Tensor::zeros(out.shape()))))
            .unwrap();
        assert_eq!(v, 7.0);
        assert!(grads.iter().all(|g| g.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Sequential::<f64>::from_specs("net", &[LayerSpec::fully_connected(2, 2)], &mut rng).unwrap();
        let x = Tensor::zeros(&[1, 2]);
        let err = net
            .gradients(&x, Mode::Train, |out| {
                Ok(Loss {
                    value: out.clone(),
                    grad: Tensor::zeros(out.shape()),
                })
            })
            .unwrap_err();
        assert!(matches!(err, NnError::NonScalarLoss(_)));
    }

    #[test]
    fn square_of_single_weight() {
        // w ↦ w² at w = 3 through a 1→1 fully-connected layer with x = 1.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = Sequential::<f64>::from_specs("sq", &[LayerSpec::fully_connected(1, 1)], &mut rng).unwrap();
        net.params_mut()[0].value.data_mut()[0] = 3.0;
        let x = Tensor::full(&[1, 1], 1.0);
        let (v, grads) = net
            .gradients(&x, Mode::Eval, |out| {
                let w = out.data()[0];
                Ok(Loss::new(w * w, Tensor::full(&[1, 1], 2.0 * w)))
            })
            .unwrap();
        assert_eq!(v, 9.0);
        assert_eq!(grads[0].data(), &[6.0]);
    }

    #[test]
    fn non_finite_forward_names_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = Sequential::<f64>::from_specs("nf", &[LayerSpec::fully_connected(1, 1)], &mut rng).unwrap();
        net.params_mut()[0].value.data_mut()[0] = f64::INFINITY;
        let err = net.forward(&Tensor::full(&[1, 1], 1.0), Mode::Eval).unwrap_err();
        assert!(err.to_string().contains("nf.0.fullyconnected"), "{err}");
    }
}
