use super::{Mode, Param};
use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel batch normalization over `[N, C, H, W]` or `[N, C]`.
///
/// Running statistics follow `running = momentum * running + (1 - momentum) * batch`.
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub(crate) gamma: Param<T>,
    pub(crate) beta: Param<T>,
    pub(crate) running_mean: Tensor<T>,
    pub(crate) running_var: Tensor<T>,
    depth: usize,
    momentum: T,
    epsilon: T,
    cache: Option<Cache<T>>,
}

#[derive(Clone, Debug)]
struct Cache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
}

impl<T: Scalar> BatchNorm<T> {
    pub(crate) fn new(depth: usize, momentum: f64, epsilon: f64) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[depth], T::one())),
            beta: Param::new(Tensor::zeros(&[depth])),
            running_mean: Tensor::zeros(&[depth]),
            running_var: Tensor::full(&[depth], T::one()),
            depth,
            momentum: T::from_f64_lossy(momentum),
            epsilon: T::from_f64_lossy(epsilon),
            cache: None,
        }
    }

    fn layout(&self, layer: &str, input: &Tensor<T>) -> Result<(usize, usize)> {
        let s = input.shape();
        let ok = (s.len() == 4 || s.len() == 2) && s[1] == self.depth;
        if !ok {
            return Err(NnError::ShapeMismatch {
                layer: layer.to_string(),
                expected: format!("[N, {}, ..]", self.depth),
                found: format!("{s:?}"),
            });
        }
        let plane = if s.len() == 4 { s[2] * s[3] } else { 1 };
        Ok((s[0], plane))
    }

    pub(crate) fn forward(&mut self, layer: &str, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (n, plane) = self.layout(layer, input)?;
        let c = self.depth;
        let count = n * plane;
        let batch_stats = mode == Mode::Train;
        if batch_stats && count < 2 {
            return Err(NnError::ShapeMismatch {
                layer: layer.to_string(),
                expected: "at least 2 values per channel in train mode".into(),
                found: format!("{:?}", input.shape()),
            });
        }
        let x = input.data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        if batch_stats {
            let cnt = T::from_usize(count).unwrap();
            for ch in 0..c {
                let mut s = T::zero();
                for i in 0..n {
                    let base = (i * c + ch) * plane;
                    s = s + x[base..base + plane].iter().copied().sum::<T>();
                }
                let m = s / cnt;
                let mut sq = T::zero();
                for i in 0..n {
                    let base = (i * c + ch) * plane;
                    for &v in &x[base..base + plane] {
                        sq = sq + (v - m) * (v - m);
                    }
                }
                mean[ch] = m;
                var[ch] = sq / cnt;
            }
            let unbias = cnt / (cnt - T::one());
            let keep = self.momentum;
            let take = T::one() - keep;
            for ch in 0..c {
                let rm = &mut self.running_mean.data_mut()[ch];
                *rm = keep * *rm + take * mean[ch];
                let rv = &mut self.running_var.data_mut()[ch];
                *rv = keep * *rv + take * var[ch] * unbias;
            }
        } else {
            mean.copy_from_slice(self.running_mean.data());
            var.copy_from_slice(self.running_var.data());
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.epsilon).sqrt()).collect();
        let mut normalized = Tensor::zeros(input.shape());
        let mut out = Tensor::zeros(input.shape());
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * plane;
                for j in base..base + plane {
                    let xn = (x[j] - mean[ch]) * inv_std[ch];
                    normalized.data_mut()[j] = xn;
                    out.data_mut()[j] = g[ch] * xn + b[ch];
                }
            }
        }
        self.cache = Some(Cache {
            normalized,
            inv_std,
            batch_stats,
        });
        Ok(out)
    }

    pub(crate) fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.as_ref().expect("batch-norm backward called before forward");
        let s = grad_out.shape();
        let n = s[0];
        let c = self.depth;
        let plane = if s.len() == 4 { s[2] * s[3] } else { 1 };
        let cnt = T::from_usize(n * plane).unwrap();
        let dy = grad_out.data();
        let xn = cache.normalized.data();
        let mut grad_in = Tensor::zeros(s);
        for ch in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xn = T::zero();
            for i in 0..n {
                let base = (i * c + ch) * plane;
                for j in base..base + plane {
                    sum_dy = sum_dy + dy[j];
                    sum_dy_xn = sum_dy_xn + dy[j] * xn[j];
                }
            }
            let gamma = self.gamma.value.data()[ch];
            self.gamma.grad.data_mut()[ch] = self.gamma.grad.data()[ch] + sum_dy_xn;
            self.beta.grad.data_mut()[ch] = self.beta.grad.data()[ch] + sum_dy;
            let scale = gamma * cache.inv_std[ch];
            for i in 0..n {
                let base = (i * c + ch) * plane;
                for j in base..base + plane {
                    grad_in.data_mut()[j] = if cache.batch_stats {
                        scale * (dy[j] - sum_dy / cnt - xn[j] * sum_dy_xn / cnt)
                    } else {
                        scale * dy[j]
                    };
                }
            }
        }
        grad_in
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_mode_normalizes_each_channel() {
        let mut bn = BatchNorm::<f64>::new(2, 0.9, 1e-5);
        let x = Tensor::from_vec(&[2, 2, 1, 2], vec![1.0, 3.0, 10.0, 10.0, 5.0, 7.0, 20.0, 40.0]).unwrap();
        let y = bn.forward("bn", &x, Mode::Train).unwrap();
        let ch0: Vec<f64> = [0, 1, 4, 5].iter().map(|&i| y.data()[i]).collect();
        let mean: f64 = ch0.iter().sum::<f64>() / 4.0;
        let var: f64 = ch0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-5);
        // running mean of channel 0 moved 10% of the way to 4.
        assert!((bn.running_mean.data()[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut bn = BatchNorm::<f64>::new(1, 0.9, 1e-5);
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![2.0, -2.0]).unwrap();
        let y = bn.forward("bn", &x, Mode::Eval).unwrap();
        let s = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] - 2.0 * s).abs() < 1e-12);
    }
}
