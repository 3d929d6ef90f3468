use rand::Rng;

use super::{expect_nchw, Padding, Param};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
    ) -> Option<Self> {
        let (kh, kw) = kernel;
        let (pt, pb) = padding.resolve(height, kh, stride, true);
        let (pl, pr) = padding.resolve(width, kw, stride, false);
        let ph = height + pt + pb;
        let pw = width + pl + pr;
        if ph < kh || pw < kw {
            return None;
        }
        Some(Self {
            channels,
            height,
            width,
            kh,
            kw,
            stride,
            pad_top: pt,
            pad_left: pl,
            out_h: (ph - kh) / stride + 1,
            out_w: (pw - kw) / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source row index, or `None` when it falls in the padding.
    #[inline]
    fn src(&self, out: usize, k: usize, pad: usize, limit: usize) -> Option<usize> {
        let pos = (out * self.stride + k).checked_sub(pad)?;
        (pos < limit).then_some(pos)
    }

    /// Output columns `lo..hi` whose source column `ox * stride + kx − pad_left`
    /// lies inside the image.
    #[inline]
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad_left > kx { (self.pad_left - kx).div_ceil(s) } else { 0 };
        let reach = self.width + self.pad_left;
        let hi = if reach > kx { ((reach - kx - 1) / s + 1).min(self.out_w) } else { 0 };
        (lo.min(hi), hi)
    }

    fn im2col<T: Scalar>(&self, image: &[T], cols: &mut [T]) {
        let p = self.cols();
        let plane = self.height * self.width;
        let s = self.stride;
        for c in 0..self.channels {
            let src_plane = &image[c * plane..(c + 1) * plane];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let (lo, hi) = self.col_range(kx);
                    for oy in 0..self.out_h {
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        match self.src(oy, ky, self.pad_top, self.height) {
                            None => line.fill(T::zero()),
                            Some(iy) => {
                                line[..lo].fill(T::zero());
                                line[hi..].fill(T::zero());
                                if hi > lo {
                                    let first = lo * s + kx - self.pad_left;
                                    let src_row = &src_plane[iy * self.width..(iy + 1) * self.width];
                                    if s == 1 {
                                        line[lo..hi].copy_from_slice(&src_row[first..first + hi - lo]);
                                    } else {
                                        for (v, &x) in line[lo..hi].iter_mut().zip(src_row[first..].iter().step_by(s)) {
                                            *v = x;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], image: &mut [T]) {
        let p = self.cols();
        let plane = self.height * self.width;
        let s = self.stride;
        for c in 0..self.channels {
            let dst_plane = &mut image[c * plane..(c + 1) * plane];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    let (lo, hi) = self.col_range(kx);
                    if hi <= lo {
                        continue;
                    }
                    let first = lo * s + kx - self.pad_left;
                    for oy in 0..self.out_h {
                        let Some(iy) = self.src(oy, ky, self.pad_top, self.height) else {
                            continue;
                        };
                        let line = &src[oy * self.out_w + lo..oy * self.out_w + hi];
                        let dst_row = &mut dst_plane[iy * self.width + first..(iy + 1) * self.width];
                        for (d, &v) in dst_row.iter_mut().step_by(s).zip(line) {
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution over `[N, C, H, W]` via im2col + GEMM.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub(crate) weight: Param<T>,
    pub(crate) bias: Param<T>,
    in_depth: usize,
    out_depth: usize,
    kernel: (usize, usize),
    stride: usize,
    padding: Padding,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub(crate) fn new<R: Rng + ?Sized>(
        in_depth: usize,
        out_depth: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
        rng: &mut R,
    ) -> Self {
        let weight = Tensor::randn(&[out_depth, in_depth, kernel.0, kernel.1], INIT_STD, rng);
        Self {
            weight: Param::new(weight),
            bias: Param::new(Tensor::zeros(&[out_depth])),
            in_depth,
            out_depth,
            kernel,
            stride,
            padding,
            input: None,
        }
    }

    fn geometry(&self, layer: &str, input: &Tensor<T>) -> Result<(usize, Geometry)> {
        let (n, c, h, w) = expect_nchw(layer, input, self.in_depth)?;
        let geo = Geometry::new(c, h, w, self.kernel, self.stride, self.padding).ok_or_else(|| {
            crate::NnError::ShapeMismatch {
                layer: layer.to_string(),
                expected: format!("spatial dims at least kernel {:?}", self.kernel),
                found: format!("{:?}", input.shape()),
            }
        })?;
        Ok((n, geo))
    }

    pub(crate) fn forward(&mut self, layer: &str, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, geo) = self.geometry(layer, input)?;
        let (k, p) = (geo.rows(), geo.cols());
        let mut out = Tensor::zeros(&[n, self.out_depth, geo.out_h, geo.out_w]);
        let mut cols = vec![T::zero(); k * p];
        let bias = self.bias.value.data();
        let w = self.weight.value.data();
        for i in 0..n {
            geo.im2col(input.sample(i), &mut cols);
            let dst = &mut out.data_mut()[i * self.out_depth * p..(i + 1) * self.out_depth * p];
            for (o, chunk) in dst.chunks_mut(p).enumerate() {
                chunk.fill(bias[o]);
            }
            T::gemm(
                self.out_depth,
                k,
                p,
                T::one(),
                w,
                k as isize,
                1,
                &cols,
                p as isize,
                1,
                T::one(),
                dst,
                p as isize,
                1,
            );
        }
        self.input = Some(input.clone());
        Ok(out)
    }

    pub(crate) fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let input = self.input.as_ref().expect("conv backward called before forward");
        let s = input.shape();
        let geo = Geometry::new(s[1], s[2], s[3], self.kernel, self.stride, self.padding)
            .expect("geometry validated in forward");
        let n = s[0];
        let (k, p) = (geo.rows(), geo.cols());
        let mut grad_in = Tensor::zeros(s);
        let mut cols = vec![T::zero(); k * p];
        let mut dcols = vec![T::zero(); k * p];
        let sample_in = grad_in.sample_len();
        for i in 0..n {
            let g = grad_out.sample(i);
            for (o, chunk) in g.chunks(p).enumerate() {
                let acc = self.bias.grad.data()[o] + chunk.iter().copied().sum::<T>();
                self.bias.grad.data_mut()[o] = acc;
            }
            geo.im2col(input.sample(i), &mut cols);
            // dW += dY · colsᵀ
            T::gemm(
                self.out_depth,
                p,
                k,
                T::one(),
                g,
                p as isize,
                1,
                &cols,
                1,
                p as isize,
                T::one(),
                self.weight.grad.data_mut(),
                k as isize,
                1,
            );
            // dcols = Wᵀ · dY
            T::gemm(
                k,
                self.out_depth,
                p,
                T::one(),
                self.weight.value.data(),
                1,
                k as isize,
                g,
                p as isize,
                1,
                T::zero(),
                &mut dcols,
                p as isize,
                1,
            );
            geo.col2im(&dcols, &mut grad_in.data_mut()[i * sample_in..(i + 1) * sample_in]);
        }
        grad_in
    }
}

/// Nearest-neighbour upsampling followed by a stride-1 "same" convolution.
#[derive(Clone, Debug)]
pub struct UpsampleConv<T> {
    pub(crate) conv: Conv2d<T>,
    scale: usize,
    in_depth: usize,
}

impl<T: Scalar> UpsampleConv<T> {
    pub(crate) fn new<R: Rng + ?Sized>(
        in_depth: usize,
        out_depth: usize,
        kernel: (usize, usize),
        scale: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            conv: Conv2d::new(in_depth, out_depth, kernel, 1, Padding::Same, rng),
            scale,
            in_depth,
        }
    }

    /// Source offsets `floor((r + k − pad) / scale)` of each kernel tap for
    /// output phase `r`. Offsets are non-decreasing in `k`.
    fn tap_offsets(&self, r: usize, kernel: usize, pad: usize) -> Vec<isize> {
        let s = self.scale as isize;
        (0..kernel)
            .map(|k| (r as isize + k as isize - pad as isize).div_euclid(s))
            .collect()
    }

    /// Per-phase decomposition: output pixel `(s·a + ry, s·b + rx)` is a
    /// stride-1 convolution of the low-resolution input with the taps of the
    /// full kernel summed by shared source offset.
    fn phases(&self, h: usize, w: usize) -> Vec<Phase> {
        let (kh, kw) = self.conv.kernel;
        let (pt, _) = self.conv.padding.resolve(h * self.scale, kh, 1, true);
        let (pl, _) = self.conv.padding.resolve(w * self.scale, kw, 1, false);
        let mut out = Vec::with_capacity(self.scale * self.scale);
        for ry in 0..self.scale {
            let dy = self.tap_offsets(ry, kh, pt);
            for rx in 0..self.scale {
                let dx = self.tap_offsets(rx, kw, pl);
                let (ylo, yhi) = (dy[0], dy[kh - 1]);
                let (xlo, xhi) = (dx[0], dx[kw - 1]);
                debug_assert!(ylo <= 0 && yhi >= 0 && xlo <= 0 && xhi >= 0);
                let geo = Geometry {
                    channels: self.in_depth,
                    height: h,
                    width: w,
                    kh: (yhi - ylo + 1) as usize,
                    kw: (xhi - xlo + 1) as usize,
                    stride: 1,
                    pad_top: (-ylo) as usize,
                    pad_left: (-xlo) as usize,
                    out_h: h,
                    out_w: w,
                };
                let rows = dy.iter().map(|&d| (d - ylo) as usize).collect();
                let cols = dx.iter().map(|&d| (d - xlo) as usize).collect();
                out.push(Phase { ry, rx, geo, rows, cols });
            }
        }
        out
    }

    /// Effective phase kernel `[out, in, geo.kh, geo.kw]`.
    fn phase_weight(&self, ph: &Phase) -> Vec<T> {
        let (kh, kw) = self.conv.kernel;
        let (o, c) = (self.conv.out_depth, self.in_depth);
        let g = &ph.geo;
        let mut eff = vec![T::zero(); o * c * g.kh * g.kw];
        let w = self.conv.weight.value.data();
        for oc in 0..o * c {
            for ky in 0..kh {
                for kx in 0..kw {
                    let dst = &mut eff[(oc * g.kh + ph.rows[ky]) * g.kw + ph.cols[kx]];
                    *dst = *dst + w[(oc * kh + ky) * kw + kx];
                }
            }
        }
        eff
    }

    pub(crate) fn forward(&mut self, layer: &str, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, _, h, w) = expect_nchw(layer, input, self.in_depth)?;
        let s = self.scale;
        let (oh, ow) = (h * s, w * s);
        let o = self.conv.out_depth;
        let p = h * w;
        let mut out = Tensor::zeros(&[n, o, oh, ow]);
        let bias = self.conv.bias.value.data().to_vec();
        let mut tmp = vec![T::zero(); o * p];
        for ph in self.phases(h, w) {
            let k = ph.geo.rows();
            let eff = self.phase_weight(&ph);
            let mut cols = vec![T::zero(); k * p];
            for i in 0..n {
                ph.geo.im2col(input.sample(i), &mut cols);
                for (chunk, &b) in tmp.chunks_mut(p).zip(&bias) {
                    chunk.fill(b);
                }
                T::gemm(o, k, p, T::one(), &eff, k as isize, 1, &cols, p as isize, 1, T::one(), &mut tmp, p as isize, 1);
                let dst = &mut out.data_mut()[i * o * oh * ow..(i + 1) * o * oh * ow];
                for (plane, src) in dst.chunks_mut(oh * ow).zip(tmp.chunks(p)) {
                    for a in 0..h {
                        let row = &mut plane[(s * a + ph.ry) * ow..(s * a + ph.ry + 1) * ow];
                        for (v, &x) in row[ph.rx..].iter_mut().step_by(s).zip(&src[a * w..(a + 1) * w]) {
                            *v = x;
                        }
                    }
                }
            }
        }
        self.conv.input = Some(input.clone());
        Ok(out)
    }

    pub(crate) fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let input = self.conv.input.as_ref().expect("upsample conv backward called before forward");
        let sh = input.shape().to_vec();
        let (n, h, w) = (sh[0], sh[2], sh[3]);
        let s = self.scale;
        let (oh, ow) = (h * s, w * s);
        let o = self.conv.out_depth;
        let p = h * w;
        let (kh, kw) = self.conv.kernel;

        for i in 0..n {
            for (oc, chunk) in grad_out.sample(i).chunks(oh * ow).enumerate() {
                let acc = self.conv.bias.grad.data()[oc] + chunk.iter().copied().sum::<T>();
                self.conv.bias.grad.data_mut()[oc] = acc;
            }
        }

        let mut grad_in = Tensor::zeros(&sh);
        let sample_in = grad_in.sample_len();
        let mut g = vec![T::zero(); o * p];
        for ph in self.phases(h, w) {
            let k = ph.geo.rows();
            let eff = self.phase_weight(&ph);
            let mut deff = vec![T::zero(); o * k];
            let mut cols = vec![T::zero(); k * p];
            let mut dcols = vec![T::zero(); k * p];
            for i in 0..n {
                for (dst, plane) in g.chunks_mut(p).zip(grad_out.sample(i).chunks(oh * ow)) {
                    for a in 0..h {
                        let row = &plane[(s * a + ph.ry) * ow..(s * a + ph.ry + 1) * ow];
                        for (v, &x) in dst[a * w..(a + 1) * w].iter_mut().zip(row[ph.rx..].iter().step_by(s)) {
                            *v = x;
                        }
                    }
                }
                ph.geo.im2col(input.sample(i), &mut cols);
                T::gemm(o, p, k, T::one(), &g, p as isize, 1, &cols, 1, p as isize, T::one(), &mut deff, k as isize, 1);
                T::gemm(k, o, p, T::one(), &eff, 1, k as isize, &g, p as isize, 1, T::zero(), &mut dcols, p as isize, 1);
                ph.geo.col2im(&dcols, &mut grad_in.data_mut()[i * sample_in..(i + 1) * sample_in]);
            }
            let dw = self.conv.weight.grad.data_mut();
            let g = &ph.geo;
            for oc in 0..o * self.in_depth {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let d = &mut dw[(oc * kh + ky) * kw + kx];
                        *d = *d + deff[(oc * g.kh + ph.rows[ky]) * g.kw + ph.cols[kx]];
                    }
                }
            }
        }
        grad_in
    }
}

struct Phase {
    ry: usize,
    rx: usize,
    geo: Geometry,
    /// Phase-kernel row for each full-kernel row.
    rows: Vec<usize>,
    cols: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conv_with(weight: Vec<f64>, shape: [usize; 4], stride: usize, padding: Padding) -> Conv2d<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = Conv2d::new(shape[1], shape[0], (shape[2], shape[3]), stride, padding, &mut rng);
        c.weight.value = Tensor::from_vec(&shape, weight).unwrap();
        c
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut conv = conv_with(
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            [3, 3, 1, 1],
            1,
            Padding::Valid,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f64>::randn(&[2, 3, 5, 7], 1.0, &mut rng);
        let y = conv.forward("id", &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_hand_convolution() {
        let mut conv = conv_with(vec![1.0; 4], [1, 1, 2, 2], 1, Padding::Valid);
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv.forward("ones", &x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[4.0; 4]);
    }

    #[test]
    fn stride_two_same_halves_and_upsample_doubles() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut down = Conv2d::<f32>::new(3, 4, (4, 4), 2, Padding::Same, &mut rng);
        let y = down.forward("down", &Tensor::zeros(&[1, 3, 16, 16])).unwrap();
        assert_eq!(y.shape(), &[1, 4, 8, 8]);
        let mut up = UpsampleConv::<f32>::new(4, 2, (4, 4), 2, &mut rng);
        let z = up.forward("up", &y).unwrap();
        assert_eq!(z.shape(), &[1, 2, 16, 16]);
    }

    #[test]
    fn padded_border_matches_direct_sum() {
        // 3x3 ones kernel with same padding on a ramp: each output is the sum
        // of the in-bounds 3x3 neighbourhood.
        let mut conv = conv_with(vec![1.0; 9], [1, 1, 3, 3], 1, Padding::Same);
        let x = Tensor::from_vec(&[1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let y = conv.forward("box", &x).unwrap();
        assert_eq!(y.data(), &[12.0, 21.0, 16.0, 27.0, 45.0, 33.0, 24.0, 39.0, 28.0]);
    }

    fn nearest(x: &Tensor<f64>, s: usize) -> Tensor<f64> {
        let sh = x.shape();
        let (h, w) = (sh[2], sh[3]);
        let mut up = Tensor::zeros(&[sh[0], sh[1], h * s, w * s]);
        for (plane, dst) in up.data_mut().chunks_mut(h * w * s * s).enumerate() {
            for y in 0..h * s {
                for xx in 0..w * s {
                    dst[y * w * s + xx] = x.data()[plane * h * w + (y / s) * w + xx / s];
                }
            }
        }
        up
    }

    #[test]
    fn phase_decomposition_matches_explicit_resize() {
        for (kernel, scale, h, w) in [((4, 4), 2, 5, 6), ((3, 3), 2, 4, 4), ((3, 5), 3, 3, 4), ((1, 1), 2, 2, 3)] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut up = UpsampleConv::<f64>::new(2, 3, kernel, scale, &mut rng);
            up.conv.weight.value = up.conv.weight.value.map(|v| v * 50.0);
            up.conv.bias.value = Tensor::from_vec(&[3], vec![0.1, -0.2, 0.3]).unwrap();
            let mut plain = up.conv.clone();
            let x = Tensor::<f64>::randn(&[2, 2, h, w], 1.0, &mut rng);
            let y = up.forward("up", &x).unwrap();
            let big = nearest(&x, scale);
            let y_ref = plain.forward("ref", &big).unwrap();
            assert_eq!(y.shape(), y_ref.shape());
            for (a, b) in y.data().iter().zip(y_ref.data()) {
                assert!((a - b).abs() < 1e-12, "{kernel:?} x{scale}: {a} vs {b}");
            }

            let g = Tensor::<f64>::randn(y.shape(), 1.0, &mut rng);
            let gx = up.backward(&g);
            let g_big = plain.backward(&g);
            for (a, b) in up.conv.weight.grad.data().iter().zip(plain.weight.grad.data()) {
                assert!((a - b).abs() < 1e-10);
            }
            for (a, b) in up.conv.bias.grad.data().iter().zip(plain.bias.grad.data()) {
                assert!((a - b).abs() < 1e-10);
            }
            // Nearest resize adjoint: sum each s×s block.
            for (i, a) in gx.data().iter().enumerate() {
                let (plane, r) = (i / (h * w), i % (h * w));
                let (y0, x0) = (r / w * scale, r % w * scale);
                let mut b = 0.0;
                for dy in 0..scale {
                    for dx in 0..scale {
                        b += g_big.data()[plane * h * w * scale * scale + (y0 + dy) * w * scale + x0 + dx];
                    }
                }
                assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
