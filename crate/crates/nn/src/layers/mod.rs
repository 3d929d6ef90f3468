//! Layer inventory: convolution, nearest-upsample convolution, fully
//! connected, batch normalization, dropout, pointwise activations and a
//! parameter-free reshape.

mod activation;
mod conv;
mod dropout;
mod linear;
mod norm;

use rand::Rng;

pub use activation::{Activation, ActivationLayer};
pub use conv::{Conv2d, UpsampleConv};
pub use dropout::Dropout;
pub use linear::Linear;
pub use norm::BatchNorm;

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Forward-pass mode. Dropout and batch normalization differ between the two.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Spatial padding policy of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// No padding.
    Valid,
    /// Output size `ceil(input / stride)`; odd totals put the extra row and
    /// column at the bottom/right.
    Same,
    Explicit {
        top: usize,
        bottom: usize,
        left: usize,
        right: usize,
    },
}

impl Padding {
    /// Resolve to `(before, after)` for one axis.
    pub fn resolve(self, input: usize, kernel: usize, stride: usize, vertical: bool) -> (usize, usize) {
        match self {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let out = input.div_ceil(stride);
                let total = ((out - 1) * stride + kernel).saturating_sub(input);
                (total / 2, total - total / 2)
            }
            Padding::Explicit {
                top,
                bottom,
                left,
                right,
            } => {
                if vertical {
                    (top, bottom)
                } else {
                    (left, right)
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    UpsampleConv,
    FullyConnected,
    BatchNorm,
    Dropout,
    Activation,
    Reshape,
}

impl LayerKind {
    pub fn tag(self) -> u8 {
        match self {
            LayerKind::Conv => 1,
            LayerKind::UpsampleConv => 2,
            LayerKind::FullyConnected => 3,
            LayerKind::BatchNorm => 4,
            LayerKind::Dropout => 5,
            LayerKind::Activation => 6,
            LayerKind::Reshape => 7,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            1 => LayerKind::Conv,
            2 => LayerKind::UpsampleConv,
            3 => LayerKind::FullyConnected,
            4 => LayerKind::BatchNorm,
            5 => LayerKind::Dropout,
            6 => LayerKind::Activation,
            7 => LayerKind::Reshape,
            _ => return None,
        })
    }
}

/// Architecture descriptor of one layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv {
        in_depth: usize,
        out_depth: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
    },
    /// Nearest-neighbour `scale`× resize followed by a stride-1 same-padded conv.
    UpsampleConv {
        in_depth: usize,
        out_depth: usize,
        kernel: (usize, usize),
        scale: usize,
    },
    FullyConnected {
        in_features: usize,
        out_features: usize,
    },
    BatchNorm {
        depth: usize,
        momentum: f64,
        epsilon: f64,
    },
    Dropout {
        rate: f64,
    },
    Activation(Activation),
    /// Per-sample reshape; the batch dimension is kept.
    Reshape(Vec<usize>),
}

impl LayerSpec {
    pub fn conv(in_depth: usize, out_depth: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec::Conv {
            in_depth,
            out_depth,
            kernel: (kernel, kernel),
            stride,
            padding: Padding::Same,
        }
    }

    pub fn upsample_conv(in_depth: usize, out_depth: usize, kernel: usize, scale: usize) -> Self {
        LayerSpec::UpsampleConv {
            in_depth,
            out_depth,
            kernel: (kernel, kernel),
            scale,
        }
    }

    pub fn fully_connected(in_features: usize, out_features: usize) -> Self {
        LayerSpec::FullyConnected {
            in_features,
            out_features,
        }
    }

    pub fn batch_norm(depth: usize) -> Self {
        LayerSpec::BatchNorm {
            depth,
            momentum: 0.9,
            epsilon: 1e-5,
        }
    }

    pub fn dropout(rate: f64) -> Self {
        LayerSpec::Dropout { rate }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Conv { .. } => LayerKind::Conv,
            LayerSpec::UpsampleConv { .. } => LayerKind::UpsampleConv,
            LayerSpec::FullyConnected { .. } => LayerKind::FullyConnected,
            LayerSpec::BatchNorm { .. } => LayerKind::BatchNorm,
            LayerSpec::Dropout { .. } => LayerKind::Dropout,
            LayerSpec::Activation(_) => LayerKind::Activation,
            LayerSpec::Reshape(_) => LayerKind::Reshape,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NnError::InvalidSpec(msg));
        match *self {
            LayerSpec::Conv {
                in_depth,
                out_depth,
                kernel,
                stride,
                ..
            } => {
                if in_depth == 0 || out_depth == 0 || kernel.0 == 0 || kernel.1 == 0 || stride == 0 {
                    return bad(format!("conv needs positive depths, kernel and stride: {self:?}"));
                }
            }
            LayerSpec::UpsampleConv {
                in_depth,
                out_depth,
                kernel,
                scale,
            } => {
                if in_depth == 0 || out_depth == 0 || kernel.0 == 0 || kernel.1 == 0 || scale == 0 {
                    return bad(format!(
                        "upsample-conv needs positive depths, kernel and scale: {self:?}"
                    ));
                }
            }
            LayerSpec::FullyConnected {
                in_features,
                out_features,
            } => {
                if in_features == 0 || out_features == 0 {
                    return bad(format!("fully-connected needs positive sizes: {self:?}"));
                }
            }
            LayerSpec::BatchNorm {
                depth,
                momentum,
                epsilon,
            } => {
                if depth == 0 || !(0.0..1.0).contains(&momentum) || epsilon <= 0.0 {
                    return bad(format!("batch-norm parameters out of range: {self:?}"));
                }
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return bad(format!("dropout rate must be in [0, 1): {rate}"));
                }
            }
            LayerSpec::Activation(_) => {}
            LayerSpec::Reshape(ref shape) => {
                if shape.is_empty() || shape.contains(&0) {
                    return bad(format!("reshape target must be non-empty and positive: {shape:?}"));
                }
            }
        }
        Ok(())
    }
}

/// Learnable tensor with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

#[derive(Clone, Debug)]
pub struct Reshape {
    pub(crate) target: Vec<usize>,
    input_shape: Option<Vec<usize>>,
}

impl Reshape {
    fn forward<T: Scalar>(&mut self, name: &str, input: &Tensor<T>) -> Result<Tensor<T>> {
        let per_sample: usize = self.target.iter().product();
        if input.sample_len() != per_sample {
            return Err(NnError::ShapeMismatch {
                layer: name.to_string(),
                expected: format!("{per_sample} elements per sample"),
                found: format!("{:?}", input.shape()),
            });
        }
        self.input_shape = Some(input.shape().to_vec());
        let mut shape = vec![input.batch()];
        shape.extend_from_slice(&self.target);
        input.clone().reshape(&shape)
    }

    fn backward<T: Scalar>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .input_shape
            .as_ref()
            .expect("reshape backward called before forward");
        grad.clone().reshape(shape)
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Conv(Conv2d<T>),
    UpsampleConv(UpsampleConv<T>),
    Linear(Linear<T>),
    BatchNorm(BatchNorm<T>),
    Dropout(Dropout),
    Activation(ActivationLayer<T>),
    Reshape(Reshape),
}

/// A single layer: its spec, a diagnostic name and its state.
#[derive(Clone, Debug)]
pub struct Layer<T> {
    name: String,
    spec: LayerSpec,
    op: Op<T>,
}

impl<T: Scalar> Layer<T> {
    /// Build a layer with `N(0, 0.02²)` weights and zero biases.
    pub fn new<R: Rng + ?Sized>(name: impl Into<String>, spec: LayerSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let op = match spec {
            LayerSpec::Conv {
                in_depth,
                out_depth,
                kernel,
                stride,
                padding,
            } => Op::Conv(Conv2d::new(in_depth, out_depth, kernel, stride, padding, rng)),
            LayerSpec::UpsampleConv {
                in_depth,
                out_depth,
                kernel,
                scale,
            } => Op::UpsampleConv(UpsampleConv::new(in_depth, out_depth, kernel, scale, rng)),
            LayerSpec::FullyConnected {
                in_features,
                out_features,
            } => Op::Linear(Linear::new(in_features, out_features, rng)),
            LayerSpec::BatchNorm {
                depth,
                momentum,
                epsilon,
            } => Op::BatchNorm(BatchNorm::new(depth, momentum, epsilon)),
            LayerSpec::Dropout { rate } => Op::Dropout(Dropout::new(rate, rng.random())),
            LayerSpec::Activation(a) => Op::Activation(ActivationLayer::new(a)),
            LayerSpec::Reshape(ref target) => Op::Reshape(Reshape {
                target: target.clone(),
                input_shape: None,
            }),
        };
        Ok(Self {
            name: name.into(),
            spec,
            op,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn kind(&self) -> LayerKind {
        self.spec.kind()
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let name = self.name.as_str();
        let out = match &mut self.op {
            Op::Conv(l) => l.forward(name, input)?,
            Op::UpsampleConv(l) => l.forward(name, input)?,
            Op::Linear(l) => l.forward(name, input)?,
            Op::BatchNorm(l) => l.forward(name, input, mode)?,
            Op::Dropout(l) => l.forward(input, mode),
            Op::Activation(l) => l.forward(input),
            Op::Reshape(l) => l.forward(name, input)?,
        };
        if !out.is_finite() {
            return Err(NnError::NonFinite {
                layer: self.name.clone(),
                stage: "forward",
            });
        }
        Ok(out)
    }

    /// Propagate `grad_output` to the input, accumulating parameter gradients.
    pub fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let grad = match &mut self.op {
            Op::Conv(l) => l.backward(grad_output),
            Op::UpsampleConv(l) => l.backward(grad_output),
            Op::Linear(l) => l.backward(grad_output),
            Op::BatchNorm(l) => l.backward(grad_output),
            Op::Dropout(l) => l.backward(grad_output),
            Op::Activation(l) => l.backward(grad_output),
            Op::Reshape(l) => l.backward(grad_output)?,
        };
        if !grad.is_finite() {
            return Err(NnError::NonFinite {
                layer: self.name.clone(),
                stage: "backward",
            });
        }
        Ok(grad)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match &self.op {
            Op::Conv(l) => vec![&l.weight, &l.bias],
            Op::UpsampleConv(l) => vec![&l.conv.weight, &l.conv.bias],
            Op::Linear(l) => vec![&l.weight, &l.bias],
            Op::BatchNorm(l) => vec![&l.gamma, &l.beta],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match &mut self.op {
            Op::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Op::UpsampleConv(l) => vec![&mut l.conv.weight, &mut l.conv.bias],
            Op::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Op::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            _ => Vec::new(),
        }
    }

    /// All persisted tensors: parameters plus running statistics.
    pub fn state(&self) -> Vec<&Tensor<T>> {
        match &self.op {
            Op::BatchNorm(l) => vec![&l.gamma.value, &l.beta.value, &l.running_mean, &l.running_var],
            _ => self.params().into_iter().map(|p| &p.value).collect(),
        }
    }

    pub fn state_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match &mut self.op {
            Op::BatchNorm(l) => vec![
                &mut l.gamma.value,
                &mut l.beta.value,
                &mut l.running_mean,
                &mut l.running_var,
            ],
            Op::Conv(l) => vec![&mut l.weight.value, &mut l.bias.value],
            Op::UpsampleConv(l) => vec![&mut l.conv.weight.value, &mut l.conv.bias.value],
            Op::Linear(l) => vec![&mut l.weight.value, &mut l.bias.value],
            _ => Vec::new(),
        }
    }

    /// Reseed the dropout mask generator (no-op for other kinds).
    pub fn reseed(&mut self, seed: u64) {
        if let Op::Dropout(d) = &mut self.op {
            d.reseed(seed);
        }
    }
}

/// Shape of a 4-D activation, or a descriptive error naming `layer`.
pub(crate) fn expect_nchw<T: Scalar>(
    layer: &str,
    input: &Tensor<T>,
    channels: usize,
) -> Result<(usize, usize, usize, usize)> {
    let s = input.shape();
    if s.len() != 4 || s[1] != channels {
        return Err(NnError::ShapeMismatch {
            layer: layer.to_string(),
            expected: format!("[N, {channels}, H, W]"),
            found: format!("{s:?}"),
        });
    }
    Ok((s[0], s[1], s[2], s[3]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_padding_for_even_kernels() {
        assert_eq!(Padding::Same.resolve(64, 4, 2, true), (1, 1));
        assert_eq!(Padding::Same.resolve(8, 4, 1, true), (1, 2));
        assert_eq!(Padding::Same.resolve(7, 3, 1, false), (1, 1));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(LayerSpec::conv(3, 0, 4, 2).validate().is_err());
        assert!(LayerSpec::conv(3, 8, 4, 0).validate().is_err());
        assert!(LayerSpec::dropout(1.0).validate().is_err());
        assert!(LayerSpec::fully_connected(0, 4).validate().is_err());
        assert!(LayerSpec::conv(3, 8, 4, 2).validate().is_ok());
    }

    #[test]
    fn kind_tags_round_trip() {
        for kind in [
            LayerKind::Conv,
            LayerKind::UpsampleConv,
            LayerKind::FullyConnected,
            LayerKind::BatchNorm,
            LayerKind::Dropout,
            LayerKind::Activation,
            LayerKind::Reshape,
        ] {
            assert_eq!(LayerKind::from_tag(kind.tag()), Some(kind));
        }
    }

    #[test]
    fn shape_error_names_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = Layer::<f32>::new("enc.conv1", LayerSpec::conv(3, 8, 4, 2), &mut rng).unwrap();
        let err = layer.forward(&Tensor::zeros(&[1, 2, 8, 8]), Mode::Eval).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("enc.conv1"), "{msg}");
        assert!(msg.contains("[1, 2, 8, 8]"), "{msg}");
    }
}
