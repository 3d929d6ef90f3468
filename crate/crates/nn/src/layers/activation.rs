use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pointwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    /// `(1 + tanh(x)) / 2`, a hyperbolic tangent mapped onto `(0, 1)`.
    TanhUnit,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::LeakyRelu(_) => 1,
            Activation::Tanh => 2,
            Activation::Sigmoid => 3,
            Activation::TanhUnit => 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ActivationLayer<T> {
    kind: Activation,
    input: Option<Tensor<T>>,
    output: Option<Tensor<T>>,
}

impl<T: Scalar> ActivationLayer<T> {
    pub(crate) fn new(kind: Activation) -> Self {
        Self {
            kind,
            input: None,
            output: None,
        }
    }

    pub(crate) fn forward(&mut self, input: &Tensor<T>) -> Tensor<T> {
        let half = T::from_f64_lossy(0.5);
        let out = match self.kind {
            Activation::Relu => input.map(|v| v.max(T::zero())),
            Activation::LeakyRelu(slope) => {
                let a = T::from_f64_lossy(slope);
                input.map(|v| if v > T::zero() { v } else { a * v })
            }
            Activation::Tanh => input.map(|v| v.tanh()),
            Activation::Sigmoid => input.map(sigmoid),
            Activation::TanhUnit => input.map(|v| half * (T::one() + v.tanh())),
        };
        self.input = Some(input.clone());
        self.output = Some(out.clone());
        out
    }

    pub(crate) fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let x = self.input.as_ref().expect("activation backward called before forward");
        let y = self.output.as_ref().expect("activation backward called before forward");
        let mut g = grad_out.clone();
        let two = T::from_f64_lossy(2.0);
        for ((gi, &xi), &yi) in g.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
            let d = match self.kind {
                Activation::Relu => {
                    if xi > T::zero() {
                        T::one()
                    } else {
                        T::zero()
                    }
                }
                Activation::LeakyRelu(slope) => {
                    if xi > T::zero() {
                        T::one()
                    } else {
                        T::from_f64_lossy(slope)
                    }
                }
                Activation::Tanh => T::one() - yi * yi,
                Activation::Sigmoid => yi * (T::one() - yi),
                // y = (1 + tanh x)/2  =>  dy/dx = 2 y (1 - y)
                Activation::TanhUnit => two * yi * (T::one() - yi),
            };
            *gi = *gi * d;
        }
        g
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
