//! Conditional GAN that sharpens decoded frames.
//!
//! The generator is a U-Net: stride-2 conv levels down to a bottleneck, a
//! noise map concatenated there, and upsample-conv levels back that each
//! receive the matching down-level output by depth concatenation. A final
//! 3×3 conv sees the last up-level together with the condition frame. The
//! discriminator scores the depth concatenation of a candidate and its
//! condition as the sigmoid of its mean logit map.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use erecon_nn::{weights, Activation, LayerSpec, Mode, OptimizerState, Scalar, Sequential, Tensor};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::avae::{scores, stack, stream_rng};
use crate::error::{CoreError, Result};
use crate::imaging::{frames_to_tensor, tensor_to_frame, Frame};

const LEAK: f64 = 0.2;
const EVAL_CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct CganArchitecture {
    pub input_size: usize,
    pub base_width: usize,
    /// Stride-2 levels in the generator and discriminator.
    pub levels: usize,
    pub noise_channels: usize,
}

impl Default for CganArchitecture {
    fn default() -> Self {
        Self {
            input_size: 64,
            base_width: 8,
            levels: 3,
            noise_channels: 1,
        }
    }
}

impl CganArchitecture {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.base_width == 0 || self.noise_channels == 0 {
            return Err(CoreError::InvalidArgument("levels, base width and noise channels must be positive".into()));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(1 << self.levels) {
            return Err(CoreError::InvalidArgument(format!(
                "input size {} is not divisible by 2^{}",
                self.input_size, self.levels
            )));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    pub fn bottleneck_size(&self) -> usize {
        self.input_size >> self.levels
    }

    /// Down level `i` maps `3` or `width(i−1)` channels to `width(i)` at half resolution.
    pub fn down_specs(&self, i: usize) -> Vec<LayerSpec> {
        let input = if i == 0 { 3 } else { self.width(i - 1) };
        let mut specs = vec![LayerSpec::conv(input, self.width(i), 4, 2)];
        if i > 0 {
            specs.push(LayerSpec::batch_norm(self.width(i)));
        }
        specs.push(LayerSpec::Activation(Activation::LeakyRelu(LEAK)));
        specs
    }

    fn up_in(&self, j: usize) -> usize {
        if j + 1 == self.levels {
            self.width(j) + self.noise_channels
        } else {
            2 * self.width(j)
        }
    }

    fn up_out(&self, j: usize) -> usize {
        if j == 0 {
            self.base_width
        } else {
            self.width(j - 1)
        }
    }

    /// Up level `j` doubles resolution; its input is the concatenation of the
    /// level above with down level `j` (or bottleneck and noise at the top).
    pub fn up_specs(&self, j: usize) -> Vec<LayerSpec> {
        let out = self.up_out(j);
        vec![
            LayerSpec::upsample_conv(self.up_in(j), out, 4, 2),
            LayerSpec::batch_norm(out),
            LayerSpec::Activation(Activation::Relu),
        ]
    }

    pub fn output_specs(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv(self.base_width + 3, 3, 3, 1),
            LayerSpec::Activation(Activation::TanhUnit),
        ]
    }

    /// Discriminator over `[candidate, condition]`, six input channels.
    pub fn discriminator_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut depth = 6;
        for i in 0..self.levels {
            specs.push(LayerSpec::conv(depth, self.width(i), 4, 2));
            if i > 0 {
                specs.push(LayerSpec::batch_norm(self.width(i)));
            }
            specs.push(LayerSpec::Activation(Activation::LeakyRelu(LEAK)));
            depth = self.width(i);
        }
        specs.push(LayerSpec::conv(depth, 1, 3, 1));
        specs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CganConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the non-saturating adversarial term in the generator loss.
    pub adversarial_weight: f64,
    /// Weight of `mean |G(c) − target|` in the generator loss.
    pub reconstruction_weight: f64,
    pub seed: u64,
}

impl Default for CganConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 8,
            learning_rate: 2e-4,
            adversarial_weight: 1.0,
            reconstruction_weight: 100.0,
            seed: 0,
        }
    }
}

impl CganConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(CoreError::InvalidArgument("epochs must be ≥ 1 and batch size ≥ 2".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.adversarial_weight >= 0.0) || !(self.reconstruction_weight >= 0.0) {
            return Err(CoreError::InvalidArgument(
                "learning rate must be positive and loss weights non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Condition/target pairs sharing an iteration index.
#[derive(Clone, Debug)]
pub struct PairedSet {
    pairs: Vec<(Frame, Frame)>,
}

impl PairedSet {
    pub fn new(pairs: Vec<(Frame, Frame)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (c, t) in &pairs {
            if c.dims() != t.dims() {
                return Err(CoreError::DimensionMismatch(format!(
                    "condition {:?} vs target {:?}",
                    c.dims(),
                    t.dims()
                )));
            }
            if c.meta.iteration_index != t.meta.iteration_index {
                return Err(CoreError::InvalidArgument(format!(
                    "pair indices differ: {} vs {}",
                    c.meta.iteration_index, t.meta.iteration_index
                )));
            }
            if !seen.insert(c.meta.iteration_index) {
                return Err(CoreError::InvalidArgument(format!(
                    "duplicate iteration index {}",
                    c.meta.iteration_index
                )));
            }
        }
        Ok(Self { pairs })
    }

    /// Pair every condition with the target of the same iteration index;
    /// conditions without a target are dropped.
    pub fn align(conditions: &[Frame], targets: &[Frame]) -> Result<Self> {
        let by_index: std::collections::HashMap<usize, &Frame> =
            targets.iter().map(|t| (t.meta.iteration_index, t)).collect();
        Self::new(
            conditions
                .iter()
                .filter_map(|c| by_index.get(&c.meta.iteration_index).map(|t| (c.clone(), (*t).clone())))
                .collect(),
        )
    }

    pub fn pairs(&self) -> &[(Frame, Frame)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn conditions(&self) -> Vec<Frame> {
        self.pairs.iter().map(|p| p.0.clone()).collect()
    }

    pub fn targets(&self) -> Vec<Frame> {
        self.pairs.iter().map(|p| p.1.clone()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CganEpoch {
    pub epoch: usize,
    pub g_loss: f64,
    pub d_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CganHistory {
    pub epochs: Vec<CganEpoch>,
}

impl CganHistory {
    pub const HEADER: &'static str = "epoch,g_loss,d_loss";

    pub fn to_table(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{}", e.epoch, e.g_loss, e.d_loss);
        }
        s
    }

    pub fn g_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.g_loss).collect()
    }
}

#[derive(Clone, Debug)]
pub struct CganModel<T> {
    pub architecture: CganArchitecture,
    pub down: Vec<Sequential<T>>,
    /// Indexed by level; `up[0]` produces full resolution.
    pub up: Vec<Sequential<T>>,
    pub output: Sequential<T>,
    pub discriminator: Sequential<T>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<T: Scalar> CganModel<T> {
    pub fn new(architecture: CganArchitecture, seed: u64) -> Result<Self> {
        architecture.validate()?;
        let mut rng = stream_rng(seed, 0);
        let l = architecture.levels;
        let down = (0..l)
            .map(|i| Sequential::from_specs(format!("down{i}"), &architecture.down_specs(i), &mut rng))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let up = (0..l)
            .map(|j| Sequential::from_specs(format!("up{j}"), &architecture.up_specs(j), &mut rng))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let output = Sequential::from_specs("output", &architecture.output_specs(), &mut rng)?;
        let mut d_rng = stream_rng(seed, 1);
        let discriminator = Sequential::from_specs("discriminator", &architecture.discriminator_specs(), &mut d_rng)?;
        Ok(Self {
            architecture,
            down,
            up,
            output,
            discriminator,
        })
    }

    fn check(&self, frames: &[&Frame]) -> Result<()> {
        let s = self.architecture.input_size;
        match frames.iter().find(|f| f.dims() != (s, s)) {
            Some(f) => Err(CoreError::DimensionMismatch(format!(
                "frame is {:?}, model expects {s}x{s}",
                f.dims()
            ))),
            None => Ok(()),
        }
    }

    /// Generator forward; `noise` is `[n, noise_channels, b, b]` at the bottleneck.
    fn generate_tensor(&mut self, cond: &Tensor<T>, noise: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let l = self.architecture.levels;
        let mut skips = Vec::with_capacity(l);
        let mut h = cond.clone();
        for net in &mut self.down {
            h = net.forward(&h, mode)?;
            skips.push(h.clone());
        }
        let mut u = Tensor::concat_channels(&skips[l - 1], noise)?;
        for j in (0..l).rev() {
            let out = self.up[j].forward(&u, mode)?;
            u = if j > 0 {
                Tensor::concat_channels(&out, &skips[j - 1])?
            } else {
                Tensor::concat_channels(&out, cond)?
            };
        }
        Ok(self.output.forward(&u, mode)?)
    }

    /// Reverse of [`Self::generate_tensor`]; accumulates parameter gradients.
    fn generator_backward(&mut self, grad: &Tensor<T>) -> Result<()> {
        let a = &self.architecture;
        let l = a.levels;
        let g = self.output.backward(grad)?;
        let (mut g, _) = g.split_channels(a.base_width);
        let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; l];
        for j in 0..l {
            let gin = self.up[j].backward(&g)?;
            if j + 1 < l {
                let (g_up, g_skip) = gin.split_channels(a.up_out(j + 1));
                skip_grads[j] = Some(g_skip);
                g = g_up;
            } else {
                let (g_skip, _) = gin.split_channels(a.width(j));
                skip_grads[j] = Some(g_skip);
            }
        }
        let mut carry: Option<Tensor<T>> = None;
        for i in (0..l).rev() {
            let mut gi = skip_grads[i].take().expect("every level has a skip gradient");
            if let Some(c) = carry {
                gi.add_assign(&c);
            }
            carry = Some(self.down[i].backward(&gi)?);
        }
        Ok(())
    }

    fn zero_noise(&self, n: usize) -> Tensor<T> {
        let b = self.architecture.bottleneck_size();
        Tensor::zeros(&[n, self.architecture.noise_channels, b, b])
    }

    /// Eval-mode enhancement with zero noise.
    pub fn generate_batch(&self, conditions: &[Frame]) -> Result<Vec<Frame>> {
        self.check(&conditions.iter().collect::<Vec<_>>())?;
        let mut g = self.clone();
        let mut out = Vec::with_capacity(conditions.len());
        for chunk in conditions.chunks(EVAL_CHUNK) {
            let y = g.generate_tensor(&frames_to_tensor::<T>(chunk)?, &self.zero_noise(chunk.len()), Mode::Eval)?;
            for (i, c) in chunk.iter().enumerate() {
                out.push(tensor_to_frame(&y, i)?.with_meta(c.meta));
            }
        }
        Ok(out)
    }

    /// Eval-mode `D(frame | condition)` for each pair, in `(0, 1)`.
    pub fn discriminate_batch(&self, frames: &[Frame], conditions: &[Frame]) -> Result<Vec<f64>> {
        if frames.len() != conditions.len() {
            return Err(CoreError::DimensionMismatch(format!(
                "{} frames vs {} conditions",
                frames.len(),
                conditions.len()
            )));
        }
        self.check(&frames.iter().chain(conditions).collect::<Vec<_>>())?;
        let mut d = self.discriminator.clone();
        let mut out = Vec::with_capacity(frames.len());
        for (fc, cc) in frames.chunks(EVAL_CHUNK).zip(conditions.chunks(EVAL_CHUNK)) {
            let x = Tensor::concat_channels(&frames_to_tensor::<T>(fc)?, &frames_to_tensor::<T>(cc)?)?;
            out.extend(scores(&d.forward(&x, Mode::Eval)?).into_iter().map(sigmoid));
        }
        Ok(out)
    }

    fn networks(&self) -> Vec<(String, &Sequential<T>)> {
        let mut v: Vec<(String, &Sequential<T>)> = Vec::new();
        for (i, n) in self.down.iter().enumerate() {
            v.push((format!("down{i}.erec"), n));
        }
        for (j, n) in self.up.iter().enumerate() {
            v.push((format!("up{j}.erec"), n));
        }
        v.push(("output.erec".into(), &self.output));
        v.push(("discriminator.erec".into(), &self.discriminator));
        v
    }

    /// Write one weight file per network into `dir`; returns their paths.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(crate::error::io_err(dir))?;
        let mut paths = Vec::new();
        for (name, net) in self.networks() {
            let p = dir.join(name);
            weights::save(net, &p)?;
            paths.push(p);
        }
        Ok(paths)
    }

    pub fn load(architecture: CganArchitecture, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut m = Self::new(architecture, 0)?;
        let names: Vec<String> = m.networks().into_iter().map(|(n, _)| n).collect();
        let l = m.architecture.levels;
        for (k, name) in names.iter().enumerate() {
            let net = match k {
                k if k < l => &mut m.down[k],
                k if k < 2 * l => &mut m.up[k - l],
                k if k == 2 * l => &mut m.output,
                _ => &mut m.discriminator,
            };
            weights::load_into(net, dir.join(name))?;
        }
        Ok(m)
    }
}

pub fn cgan_generate<T: Scalar>(model: &CganModel<T>, condition: &Frame) -> Result<Frame> {
    Ok(model.generate_batch(std::slice::from_ref(condition))?.remove(0))
}

pub fn cgan_discriminate<T: Scalar>(model: &CganModel<T>, frame: &Frame, condition: &Frame) -> Result<f64> {
    if frame.dims() != condition.dims() {
        return Err(CoreError::DimensionMismatch(format!(
            "frame {:?} vs condition {:?}",
            frame.dims(),
            condition.dims()
        )));
    }
    Ok(model.discriminate_batch(std::slice::from_ref(frame), std::slice::from_ref(condition))?[0])
}

struct StepLosses {
    g: f64,
    d: f64,
}

/// Per-element gradient of a per-sample mean map, `dl[i] / per` broadcast.
fn map_grad<T: Scalar>(shape: &[usize], dl: &[f64]) -> Result<Tensor<T>> {
    let per: usize = shape[1..].iter().product();
    let data = dl
        .iter()
        .flat_map(|&g| std::iter::repeat_n(T::from_f64_lossy(g / per as f64), per))
        .collect();
    Ok(Tensor::from_vec(shape, data)?)
}

fn step<T: Scalar>(
    m: &mut CganModel<T>,
    opts: &mut [OptimizerState<T>; 2],
    config: &CganConfig,
    cond: &Tensor<T>,
    target: &Tensor<T>,
    rng: &mut ChaCha8Rng,
) -> Result<StepLosses> {
    let n = cond.batch();
    let a = &m.architecture;
    let bs = a.bottleneck_size();
    let noise_shape = [n, a.noise_channels, bs, bs];
    let noise_data = (0..noise_shape.iter().product::<usize>())
        .map(|_| T::from_f64_lossy(StandardNormal.sample(rng)))
        .collect();
    let noise = Tensor::from_vec(&noise_shape, noise_data)?;

    for net in m.down.iter_mut().chain(m.up.iter_mut()) {
        net.zero_grad();
    }
    m.output.zero_grad();
    let fake = m.generate_tensor(cond, &noise, Mode::Train)?;

    let real_pair = Tensor::concat_channels(target, cond)?;
    let fake_pair = Tensor::concat_channels(&fake, cond)?;
    let pairs = stack(&real_pair, &fake_pair)?;

    // Discriminator: minimize softplus(−l_real) + softplus(l_fake).
    m.discriminator.zero_grad();
    let out = m.discriminator.forward(&pairs, Mode::Train)?;
    let logits = scores(&out);
    let d_loss = (logits[..n].iter().map(|&l| softplus(-l)).sum::<f64>()
        + logits[n..].iter().map(|&l| softplus(l)).sum::<f64>())
        / n as f64;
    let dl: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &l)| if i < n { -sigmoid(-l) } else { sigmoid(l) } / n as f64)
        .collect();
    m.discriminator.backward(&map_grad(out.shape(), &dl)?)?;
    opts[1].step_params(m.discriminator.params_mut())?;

    // Generator: λ_rec · mean|G − t| + λ_adv · softplus(−l_fake).
    let cnt = fake.len() as f64;
    let mut l1 = 0.0;
    let mut grad: Vec<T> = fake
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let diff = p.as_f64() - t.as_f64();
            l1 += diff.abs();
            let sign = if diff == 0.0 { 0.0 } else { diff.signum() };
            T::from_f64_lossy(config.reconstruction_weight * sign / cnt)
        })
        .collect();
    let mut g_loss = config.reconstruction_weight * l1 / cnt;
    if config.adversarial_weight > 0.0 {
        let out = m.discriminator.forward(&pairs, Mode::Train)?;
        let logits = scores(&out);
        g_loss += config.adversarial_weight * logits[n..].iter().map(|&l| softplus(-l)).sum::<f64>() / n as f64;
        let dl: Vec<f64> = logits
            .iter()
            .enumerate()
            .map(|(i, &l)| if i < n { 0.0 } else { -config.adversarial_weight * sigmoid(-l) / n as f64 })
            .collect();
        let gin = m.discriminator.backward(&map_grad(out.shape(), &dl)?)?;
        let (_, fake_half) = split_batch(&gin, n)?;
        let (g_candidate, _) = fake_half.split_channels(3);
        for (g, &v) in grad.iter_mut().zip(g_candidate.data()) {
            *g = *g + v;
        }
    }
    m.generator_backward(&Tensor::from_vec(fake.shape(), grad)?)?;
    let mut params = Vec::new();
    for net in m.down.iter_mut().chain(m.up.iter_mut()) {
        params.extend(net.params_mut());
    }
    params.extend(m.output.params_mut());
    opts[0].step_params(params)?;
    Ok(StepLosses { g: g_loss, d: d_loss })
}

fn split_batch<T: Scalar>(t: &Tensor<T>, n: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let per = t.sample_len();
    let mut shape = t.shape().to_vec();
    let rest = shape[0] - n;
    shape[0] = n;
    let head = Tensor::from_vec(&shape, t.data()[..n * per].to_vec())?;
    shape[0] = rest;
    let tail = Tensor::from_vec(&shape, t.data()[n * per..].to_vec())?;
    Ok((head, tail))
}

pub fn train_cgan<T: Scalar>(
    pairs: &PairedSet,
    architecture: &CganArchitecture,
    config: &CganConfig,
) -> Result<(CganModel<T>, CganHistory)> {
    train_cgan_with(pairs, architecture, config, |_| {})
}

/// [`train_cgan`] with a per-epoch callback. Each step updates the
/// discriminator once, then the generator once, on a seeded shuffle.
pub fn train_cgan_with<T: Scalar>(
    pairs: &PairedSet,
    architecture: &CganArchitecture,
    config: &CganConfig,
    mut on_epoch: impl FnMut(&CganEpoch),
) -> Result<(CganModel<T>, CganHistory)> {
    config.validate()?;
    if pairs.len() < 2 * config.batch_size {
        return Err(CoreError::InvalidArgument(format!(
            "{} pairs, training needs at least {}",
            pairs.len(),
            2 * config.batch_size
        )));
    }
    let mut model = CganModel::<T>::new(architecture.clone(), config.seed)?;
    model.check(&pairs.pairs().iter().map(|p| &p.0).collect::<Vec<_>>())?;
    let conds = frames_to_tensor::<T>(pairs.pairs().iter().map(|p| &p.0))?;
    let targets = frames_to_tensor::<T>(pairs.pairs().iter().map(|p| &p.1))?;
    let mut opts = [
        OptimizerState::adam(config.learning_rate),
        OptimizerState::adam(config.learning_rate),
    ];
    let mut rng = stream_rng(config.seed, 2);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = CganHistory::default();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut g_sum, mut d_sum, mut steps) = (0.0, 0.0, 0usize);
        for (s, batch) in order.chunks(config.batch_size).enumerate() {
            if batch.len() < 2 {
                continue;
            }
            let out = step(&mut model, &mut opts, config, &conds.select(batch), &targets.select(batch), &mut rng)
                .map_err(|e| match e {
                    CoreError::Nn(n) => CoreError::TrainingDiverged {
                        epoch,
                        step: s,
                        what: n.to_string(),
                    },
                    other => other,
                })?;
            if !out.g.is_finite() || !out.d.is_finite() {
                return Err(CoreError::TrainingDiverged {
                    epoch,
                    step: s,
                    what: format!("generator loss {} / discriminator loss {}", out.g, out.d),
                });
            }
            g_sum += out.g;
            d_sum += out.d;
            steps += 1;
        }
        let rec = CganEpoch {
            epoch,
            g_loss: g_sum / steps as f64,
            d_loss: d_sum / steps as f64,
        };
        on_epoch(&rec);
        history.epochs.push(rec);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::FrameMeta;
    use crate::metrics::median;

    fn tiny() -> CganArchitecture {
        CganArchitecture {
            input_size: 16,
            base_width: 4,
            levels: 2,
            noise_channels: 1,
        }
    }

    fn blob(i: usize, size: usize, blur: bool) -> Frame {
        let c = 3.0 + (i % 10) as f64;
        let mut px = Vec::with_capacity(size * size * 3);
        for y in 0..size {
            for x in 0..size {
                let r = ((x as f64 - c).powi(2) + (y as f64 - 8.0).powi(2)).sqrt();
                let v = if blur { (-(r / 4.0).powi(2)).exp() } else if r < 3.0 { 1.0 } else { 0.0 };
                px.extend_from_slice(&[v, 0.2, 1.0 - v]);
            }
        }
        Frame::new(size, size, px).unwrap().with_meta(FrameMeta {
            iteration_index: i,
            ..Default::default()
        })
    }

    fn pairs(n: usize, identity: bool) -> PairedSet {
        PairedSet::new(
            (0..n)
                .map(|i| (blob(i, 16, !identity), blob(i, 16, false)))
                .collect(),
        )
        .unwrap()
    }

    fn mse(a: &[Frame], b: &[Frame]) -> f64 {
        let s: f64 = a
            .iter()
            .zip(b)
            .flat_map(|(x, y)| x.pixels().iter().zip(y.pixels()).map(|(p, q)| (p - q) * (p - q)))
            .sum();
        s / (a.len() * a[0].pixels().len()) as f64
    }

    #[test]
    fn generator_preserves_dims_and_is_deterministic() {
        for (size, levels) in [(16, 2), (32, 3), (24, 3)] {
            let arch = CganArchitecture {
                input_size: size,
                levels,
                base_width: 4,
                noise_channels: 2,
            };
            let m = CganModel::<f64>::new(arch, 3).unwrap();
            let c = Frame::filled(size, size, [0.3, 0.6, 0.9]).unwrap();
            let a = cgan_generate(&m, &c).unwrap();
            let b = cgan_generate(&m, &c).unwrap();
            assert_eq!(a.dims(), c.dims());
            assert_eq!(a, b);
            assert!(a.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn discriminator_sees_six_channels_and_scores_in_unit_interval() {
        let m = CganModel::<f64>::new(tiny(), 1).unwrap();
        match &m.discriminator.specs()[0] {
            LayerSpec::Conv { in_depth, .. } => assert_eq!(*in_depth, 6),
            other => panic!("unexpected first layer {other:?}"),
        }
        let f = blob(0, 16, false);
        let c = blob(0, 16, true);
        let s = cgan_discriminate(&m, &f, &c).unwrap();
        assert!(s > 0.0 && s < 1.0);
        assert_eq!(s, cgan_discriminate(&m, &f, &c).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = CganModel::<f32>::new(tiny(), 1).unwrap();
        let small = Frame::filled(8, 8, [0.0; 3]).unwrap();
        assert!(matches!(cgan_generate(&m, &small), Err(CoreError::DimensionMismatch(_))));
        let f = blob(0, 16, false);
        assert!(matches!(cgan_discriminate(&m, &f, &small), Err(CoreError::DimensionMismatch(_))));
    }

    #[test]
    fn paired_set_validation() {
        let a = blob(1, 16, true);
        let b = blob(2, 16, false);
        assert!(PairedSet::new(vec![(a.clone(), b.clone())]).is_err());
        assert!(PairedSet::new(vec![(a.clone(), Frame::filled(8, 8, [0.0; 3]).unwrap())]).is_err());
        assert!(PairedSet::new(vec![(a.clone(), a.clone()), (a.clone(), a.clone())]).is_err());
        let aligned = PairedSet::align(&[a.clone(), b.clone()], &[blob(2, 16, true)]).unwrap();
        assert_eq!(aligned.len(), 1);
        assert_eq!(aligned.pairs()[0].0.meta.iteration_index, 2);
    }

    #[test]
    fn identity_pairs_are_learned() {
        let set = pairs(16, true);
        let conds = set.conditions();
        let untrained = CganModel::<f32>::new(tiny(), 4).unwrap();
        let before = mse(&untrained.generate_batch(&conds).unwrap(), &conds);
        let cfg = CganConfig {
            epochs: 60,
            batch_size: 4,
            learning_rate: 2e-3,
            ..Default::default()
        };
        let (model, _) = train_cgan::<f32>(&set, &tiny(), &cfg).unwrap();
        let after = mse(&model.generate_batch(&conds).unwrap(), &conds);
        assert!(after * 10.0 <= before, "before {before} after {after}");
    }

    #[test]
    fn pure_regression_loss_trends_down() {
        let cfg = CganConfig {
            epochs: 20,
            batch_size: 4,
            adversarial_weight: 0.0,
            ..Default::default()
        };
        let (_, hist) = train_cgan::<f32>(&pairs(16, false), &tiny(), &cfg).unwrap();
        let g = hist.g_losses();
        let window = |k: usize| median(&g[k..k + 5]);
        assert!(window(g.len() - 5) < window(0), "{g:?}");
        assert_eq!(hist.to_table().lines().count(), 21);
    }

    #[test]
    fn fixed_seed_reproduces_history() {
        let cfg = CganConfig {
            epochs: 2,
            batch_size: 4,
            ..Default::default()
        };
        let set = pairs(8, false);
        let (m1, h1) = train_cgan::<f64>(&set, &tiny(), &cfg).unwrap();
        let (m2, h2) = train_cgan::<f64>(&set, &tiny(), &cfg).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(weights::encode(&m1.output), weights::encode(&m2.output));
    }

    #[test]
    fn save_load_round_trip() {
        let m = CganModel::<f64>::new(tiny(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(m.save(dir.path()).unwrap().len(), 6);
        let back = CganModel::<f64>::load(tiny(), dir.path()).unwrap();
        let c = blob(3, 16, true);
        assert_eq!(cgan_generate(&m, &c).unwrap(), cgan_generate(&back, &c).unwrap());
    }

    #[test]
    fn too_few_pairs_rejected() {
        let cfg = CganConfig::default();
        assert!(train_cgan::<f32>(&pairs(4, false), &tiny(), &cfg).is_err());
    }

    #[test]
    fn stable_softplus_and_sigmoid() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(-800.0), 0.0);
        assert_eq!(softplus(800.0), 800.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
