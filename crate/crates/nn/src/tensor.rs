use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{NnError, Result};
use crate::scalar::Scalar;

/// Dense row-major n-dimensional array.
///
/// The shape is fixed at construction; reshaping produces a new tensor
/// that takes ownership of the same buffer. Image batches use the
/// `[batch, channels, height, width]` layout throughout the crate.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.contains(&0) || expected != data.len() {
            return Err(NnError::BadTensor {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(
            shape.iter().all(|&d| d > 0),
            "tensor dimensions must be positive: {shape:?}"
        );
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Tensor of independent `N(0, std²)` draws.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let mut t = Self::zeros(shape);
        for v in t.data.iter_mut() {
            let x: f64 = StandardNormal.sample(rng);
            *v = T::from_f64_lossy(x * std);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per leading-dimension slice.
    pub fn sample_len(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    pub fn sample(&self, index: usize) -> &[T] {
        let n = self.sample_len();
        &self.data[index * n..(index + 1) * n]
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.data.len()).expect("length fits")
    }

    /// Gather leading-dimension slices into a new batch.
    pub fn select(&self, indices: &[usize]) -> Self {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Self { shape, data }
    }

    /// Concatenate along the channel axis of two `[N, C, H, W]` tensors.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(NnError::ShapeMismatch {
                layer: "concat".into(),
                expected: format!("[{}, _, {}, {}]", sa[0], sa[2], sa[3]),
                found: format!("{sb:?}"),
            });
        }
        let (n, ca, cb) = (sa[0], sa[1], sb[1]);
        let plane = sa[2] * sa[3];
        let mut data = Vec::with_capacity(a.len() + b.len());
        for i in 0..n {
            data.extend_from_slice(&a.data[i * ca * plane..(i + 1) * ca * plane]);
            data.extend_from_slice(&b.data[i * cb * plane..(i + 1) * cb * plane]);
        }
        Ok(Self {
            shape: vec![n, ca + cb, sa[2], sa[3]],
            data,
        })
    }

    /// Inverse of [`Tensor::concat_channels`]: split off the first `ca` channels.
    pub fn split_channels(&self, ca: usize) -> (Self, Self) {
        let s = &self.shape;
        let (n, c) = (s[0], s[1]);
        assert!(ca > 0 && ca < c, "split point {ca} out of range for {c} channels");
        let plane = s[2] * s[3];
        let cb = c - ca;
        let mut a = Vec::with_capacity(n * ca * plane);
        let mut b = Vec::with_capacity(n * cb * plane);
        for i in 0..n {
            let base = i * c * plane;
            a.extend_from_slice(&self.data[base..base + ca * plane]);
            b.extend_from_slice(&self.data[base + ca * plane..base + c * plane]);
        }
        (
            Self {
                shape: vec![n, ca, s[2], s[3]],
                data: a,
            },
            Self {
                shape: vec![n, cb, s[2], s[3]],
                data: b,
            },
        )
    }
}
