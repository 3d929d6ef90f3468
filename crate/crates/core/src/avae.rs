//! Adversarial variational autoencoder: a convolutional encoder to
//! `(μ, log σ²)`, a reparameterized latent, an upsampling decoder and a
//! Wasserstein-style critic on the decoded frames.
//!
//! The printed KL expression `mean(1 + log σ² − μ² − σ²)` is the negated
//! divergence; the loss `0.5 MSE − 0.5 KL` therefore penalizes departure from
//! the standard normal.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use erecon_nn::{weights, Activation, LayerSpec, Mode, OptimizerState, Sequential, Tensor};
use erecon_nn::Scalar;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CoreError, Result};
use crate::imaging::{frames_to_tensor, tensor_to_frame, Frame, FrameSequence};

const LEAK: f64 = 0.2;
const EVAL_CHUNK: usize = 32;

/// Layer-stack geometry. Kernels are 4×4; every encoder level halves the
/// side until a 4×4 map remains.
#[derive(Clone, Debug, PartialEq)]
pub struct AvaeArchitecture {
    pub input_size: usize,
    pub base_width: usize,
    pub feature_dim: usize,
    pub dropout: f64,
}

impl Default for AvaeArchitecture {
    fn default() -> Self {
        Self {
            input_size: 64,
            base_width: 8,
            feature_dim: 1,
            dropout: 0.5,
        }
    }
}

impl AvaeArchitecture {
    /// The 256×256 instance with base width 32.
    pub fn full_scale(feature_dim: usize) -> Self {
        Self {
            input_size: 256,
            base_width: 32,
            feature_dim,
            dropout: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.input_size;
        if s < 16 || !s.is_power_of_two() {
            return Err(CoreError::InvalidArgument(format!(
                "input size must be a power of two of at least 16, got {s}"
            )));
        }
        if self.base_width == 0 || self.feature_dim == 0 {
            return Err(CoreError::InvalidArgument("base width and feature dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::InvalidArgument(format!("dropout rate {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Number of stride-2 levels between the input and the 4×4 map.
    pub fn levels(&self) -> usize {
        self.input_size.trailing_zeros() as usize - 2
    }

    fn encoder_depths(&self) -> Vec<usize> {
        let l = self.levels();
        (0..l)
            .map(|i| if i + 1 < l { self.base_width << i } else { self.base_width })
            .collect()
    }

    pub fn pre_fc_len(&self) -> usize {
        self.base_width * 16
    }

    fn push_dropout(&self, specs: &mut Vec<LayerSpec>) {
        if self.dropout > 0.0 {
            specs.push(LayerSpec::dropout(self.dropout));
        }
    }

    pub fn encoder_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut depth = 3;
        for d in self.encoder_depths() {
            specs.push(LayerSpec::conv(depth, d, 4, 2));
            specs.push(LayerSpec::batch_norm(d));
            specs.push(LayerSpec::Activation(Activation::LeakyRelu(LEAK)));
            depth = d;
        }
        specs.push(LayerSpec::Reshape(vec![self.pre_fc_len()]));
        specs.push(LayerSpec::fully_connected(self.pre_fc_len(), 2 * self.feature_dim));
        specs
    }

    pub fn decoder_specs(&self) -> Vec<LayerSpec> {
        let l = self.levels();
        let mut specs = vec![
            LayerSpec::fully_connected(self.feature_dim, self.pre_fc_len()),
            LayerSpec::Reshape(vec![self.base_width, 4, 4]),
        ];
        let mut depth = self.base_width;
        for j in 0..l {
            if j + 1 < l {
                let d = self.base_width << (l - 2 - j);
                specs.push(LayerSpec::upsample_conv(depth, d, 4, 2));
                specs.push(LayerSpec::Activation(Activation::Relu));
                self.push_dropout(&mut specs);
                depth = d;
            } else {
                specs.push(LayerSpec::upsample_conv(depth, 3, 4, 2));
                specs.push(LayerSpec::Activation(Activation::TanhUnit));
            }
        }
        specs
    }

    /// Critic over frames; the final single-channel map is averaged into a score.
    pub fn critic_specs(&self) -> Vec<LayerSpec> {
        let l = self.levels();
        let mut specs = Vec::new();
        let mut depth = 3;
        for (i, d) in self.encoder_depths().into_iter().enumerate() {
            if i + 1 < l {
                specs.push(LayerSpec::conv(depth, d, 4, 2));
                specs.push(LayerSpec::batch_norm(d));
                specs.push(LayerSpec::Activation(Activation::LeakyRelu(LEAK)));
                depth = d;
            } else {
                specs.push(LayerSpec::conv(depth, 1, 4, 2));
                self.push_dropout(&mut specs);
            }
        }
        specs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adversarial: bool,
    /// Weight of `−mean D(x̂)` in the encoder/decoder loss.
    pub adversarial_weight: f64,
    /// Weight of the KL term relative to the per-pixel mean reconstruction
    /// error. About one over the pixel count balances the two as a
    /// per-image log-likelihood would.
    pub kl_weight: f64,
    pub critic_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 16,
            learning_rate: 2e-4,
            adversarial: true,
            adversarial_weight: 0.05,
            kl_weight: 1e-4,
            critic_clip: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(CoreError::InvalidArgument("epochs must be ≥ 1 and batch size ≥ 2".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.adversarial_weight >= 0.0)
            || !(self.kl_weight >= 0.0)
            || !(self.critic_clip > 0.0) {
            return Err(CoreError::InvalidArgument(
                "learning rate and clip must be positive, adversarial weight non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub vae_loss: f64,
    /// Mean critic estimate `E D(x) − E D(x̂)`; zero without a critic.
    pub critic_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub const HEADER: &'static str = "epoch,vae_loss,critic_loss";

    pub fn to_table(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.epochs {
            let _ = writeln!(s, "{},{},{}", r.epoch, r.vae_loss, r.critic_loss);
        }
        s
    }

    pub fn vae_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|r| r.vae_loss).collect()
    }
}

#[derive(Clone, Debug)]
pub struct AvaeModel<T> {
    pub architecture: AvaeArchitecture,
    pub adversarial: bool,
    pub encoder: Sequential<T>,
    pub decoder: Sequential<T>,
    pub critic: Sequential<T>,
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stack two batches along the leading axis.
pub(crate) fn stack<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut shape = a.shape().to_vec();
    shape[0] += b.batch();
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Ok(Tensor::from_vec(&shape, data)?)
}

/// Per-sample mean of a critic output map.
pub(crate) fn scores<T: Scalar>(out: &Tensor<T>) -> Vec<f64> {
    (0..out.batch())
        .map(|i| {
            let s = out.sample(i);
            s.iter().map(|v| v.as_f64()).sum::<f64>() / s.len() as f64
        })
        .collect()
}

fn rows<T: Scalar>(t: &Tensor<T>, width: usize, offset: usize) -> Vec<Vec<f64>> {
    (0..t.batch())
        .map(|i| t.sample(i)[offset..offset + width].iter().map(|v| v.as_f64()).collect())
        .collect()
}

impl<T: Scalar> AvaeModel<T> {
    /// Fresh model; encoder and decoder draw from one seed stream, the
    /// critic from another, so enabling the critic leaves their init intact.
    pub fn new(architecture: AvaeArchitecture, adversarial: bool, seed: u64) -> Result<Self> {
        architecture.validate()?;
        let mut rng = stream_rng(seed, 0);
        let encoder = Sequential::from_specs("encoder", &architecture.encoder_specs(), &mut rng)?;
        let decoder = Sequential::from_specs("decoder", &architecture.decoder_specs(), &mut rng)?;
        let mut critic_rng = stream_rng(seed, 1);
        let critic = Sequential::from_specs("critic", &architecture.critic_specs(), &mut critic_rng)?;
        Ok(Self {
            architecture,
            adversarial,
            encoder,
            decoder,
            critic,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.architecture.feature_dim
    }

    fn check_frames(&self, frames: &[Frame]) -> Result<()> {
        let s = self.architecture.input_size;
        match frames.iter().find(|f| f.dims() != (s, s)) {
            Some(f) => Err(CoreError::DimensionMismatch(format!(
                "frame is {:?}, model expects {s}x{s}",
                f.dims()
            ))),
            None => Ok(()),
        }
    }

    /// Eval-mode `(μ, log σ²)` for every frame.
    pub fn encode_frames(&self, frames: &[Frame]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        self.check_frames(frames)?;
        let d = self.feature_dim();
        let mut enc = self.encoder.clone();
        let (mut mu, mut lv) = (Vec::with_capacity(frames.len()), Vec::with_capacity(frames.len()));
        for chunk in frames.chunks(EVAL_CHUNK) {
            let out = enc.forward(&frames_to_tensor::<T>(chunk)?, Mode::Eval)?;
            mu.extend(rows(&out, d, 0));
            lv.extend(rows(&out, d, d));
        }
        Ok((mu, lv))
    }

    pub fn encode(&self, frame: &Frame) -> Result<(Vec<f64>, Vec<f64>)> {
        let (mut mu, mut lv) = self.encode_frames(std::slice::from_ref(frame))?;
        Ok((mu.remove(0), lv.remove(0)))
    }

    /// Eval-mode decode of latent vectors.
    pub fn decode_batch(&self, zs: &[Vec<f64>]) -> Result<Vec<Frame>> {
        let d = self.feature_dim();
        if let Some(z) = zs.iter().find(|z| z.len() != d) {
            return Err(CoreError::DimensionMismatch(format!(
                "latent has {} components, model uses {d}",
                z.len()
            )));
        }
        let mut dec = self.decoder.clone();
        let mut frames = Vec::with_capacity(zs.len());
        for chunk in zs.chunks(EVAL_CHUNK) {
            let data = chunk.iter().flatten().map(|&v| T::from_f64_lossy(v)).collect();
            let out = dec.forward(&Tensor::from_vec(&[chunk.len(), d], data)?, Mode::Eval)?;
            for i in 0..chunk.len() {
                frames.push(tensor_to_frame(&out, i)?);
            }
        }
        Ok(frames)
    }

    pub fn decode(&self, z: &[f64]) -> Result<Frame> {
        Ok(self.decode_batch(&[z.to_vec()])?.remove(0))
    }

    /// `decode(μ(frame))` for every frame, metadata copied from the input.
    pub fn reconstruct(&self, frames: &[Frame]) -> Result<Vec<Frame>> {
        let (mu, _) = self.encode_frames(frames)?;
        Ok(self
            .decode_batch(&mu)?
            .into_iter()
            .zip(frames)
            .map(|(r, f)| r.with_meta(f.meta))
            .collect())
    }

    /// Eval-mode critic scores of frames.
    pub fn critic_scores(&self, frames: &[Frame]) -> Result<Vec<f64>> {
        self.check_frames(frames)?;
        let mut critic = self.critic.clone();
        let mut out = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(EVAL_CHUNK) {
            out.extend(scores(&critic.forward(&frames_to_tensor::<T>(chunk)?, Mode::Eval)?));
        }
        Ok(out)
    }

    pub const FILES: [&'static str; 3] = ["encoder.erec", "decoder.erec", "critic.erec"];

    /// Write the three weight files into `dir`; returns their paths.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(crate::error::io_err(dir))?;
        let mut paths = Vec::new();
        for (name, net) in Self::FILES.iter().zip([&self.encoder, &self.decoder, &self.critic]) {
            let p = dir.join(name);
            weights::save(net, &p)?;
            paths.push(p);
        }
        Ok(paths)
    }

    pub fn load(architecture: AvaeArchitecture, adversarial: bool, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut model = Self::new(architecture, adversarial, 0)?;
        weights::load_into(&mut model.encoder, dir.join(Self::FILES[0]))?;
        weights::load_into(&mut model.decoder, dir.join(Self::FILES[1]))?;
        weights::load_into(&mut model.critic, dir.join(Self::FILES[2]))?;
        Ok(model)
    }
}

/// `z = μ + ε · exp(log σ² / 2)`.
pub fn reparameterize(mu: &[f64], log_var: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != log_var.len() || mu.len() != eps.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "reparameterize lengths {} / {} / {}",
            mu.len(),
            log_var.len(),
            eps.len()
        )));
    }
    Ok(mu
        .iter()
        .zip(log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + e * (0.5 * lv).exp())
        .collect())
}

/// `mean(1 + log σ² − μ² − σ²)` over all entries.
pub fn kl_term(mu: &[f64], log_var: &[f64]) -> Result<f64> {
    if mu.len() != log_var.len() || mu.is_empty() {
        return Err(CoreError::DimensionMismatch("μ and log σ² must be non-empty and equal length".into()));
    }
    let s: f64 = mu.iter().zip(log_var).map(|(m, lv)| 1.0 + lv - m * m - lv.exp()).sum();
    Ok(s / mu.len() as f64)
}

/// `0.5 MSE − 0.5 KL` for one frame on the `[0, 1]` pixel scale.
pub fn vae_loss(target: &Frame, reconstructed: &Frame, mu: &[f64], log_var: &[f64]) -> Result<f64> {
    if target.dims() != reconstructed.dims() {
        return Err(CoreError::DimensionMismatch(format!(
            "target {:?} vs reconstruction {:?}",
            target.dims(),
            reconstructed.dims()
        )));
    }
    let (a, b) = (target.pixels(), reconstructed.pixels());
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(0.5 * mse - 0.5 * kl_term(mu, log_var)?)
}

/// `E D(x) − E D(x̂)` from critic scores.
pub fn discriminator_loss(real: &[f64], decoded: &[f64]) -> Result<f64> {
    if real.is_empty() || decoded.is_empty() {
        return Err(CoreError::InvalidArgument("critic batches must be non-empty".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(mean(real) - mean(decoded))
}

struct StepOutcome {
    vae_loss: f64,
    critic_estimate: f64,
}

struct Trainer<'a, T> {
    model: &'a mut AvaeModel<T>,
    config: &'a TrainConfig,
    opt_enc: OptimizerState<T>,
    opt_dec: OptimizerState<T>,
    opt_critic: OptimizerState<T>,
}

impl<T: Scalar> Trainer<'_, T> {
    fn step(&mut self, x: &Tensor<T>, rng: &mut ChaCha8Rng) -> Result<StepOutcome> {
        let d = self.model.feature_dim();
        let b = x.batch();
        let m = &mut *self.model;

        m.encoder.zero_grad();
        m.decoder.zero_grad();
        let enc_out = m.encoder.forward(x, Mode::Train)?;
        let stats = enc_out.data();
        let mut eps = vec![0.0; b * d];
        for e in eps.iter_mut() {
            *e = StandardNormal.sample(rng);
        }
        let mut z = Vec::with_capacity(b * d);
        let (mut mu, mut lv) = (Vec::with_capacity(b * d), Vec::with_capacity(b * d));
        for i in 0..b {
            for c in 0..d {
                let (u, l) = (stats[i * 2 * d + c].as_f64(), stats[i * 2 * d + d + c].as_f64());
                mu.push(u);
                lv.push(l);
                z.push(T::from_f64_lossy(u + eps[i * d + c] * (0.5 * l).exp()));
            }
        }
        let x_hat = m.decoder.forward(&Tensor::from_vec(&[b, d], z)?, Mode::Train)?;

        let mut critic_estimate = 0.0;
        if self.config.adversarial {
            m.critic.zero_grad();
            let out = m.critic.forward(&stack(x, &x_hat)?, Mode::Train)?;
            let s = scores(&out);
            critic_estimate = discriminator_loss(&s[..b], &s[b..])?;
            let per = out.sample_len();
            let scale = 1.0 / (b * per) as f64;
            // minimize −(E D(x) − E D(x̂))
            let g: Vec<T> = (0..2 * b * per)
                .map(|k| T::from_f64_lossy(if k < b * per { -scale } else { scale }))
                .collect();
            m.critic.backward(&Tensor::from_vec(out.shape(), g)?)?;
            self.opt_critic.step_params(m.critic.params_mut())?;
            m.critic.clip_params(self.config.critic_clip);
        }

        let cnt = x.len() as f64;
        let mut sq = 0.0;
        let mut grad: Vec<T> = x_hat
            .data()
            .iter()
            .zip(x.data())
            .map(|(&p, &t)| {
                let diff = p.as_f64() - t.as_f64();
                sq += diff * diff;
                T::from_f64_lossy(diff / cnt)
            })
            .collect();
        let kl = kl_term(&mu, &lv)?;
        let kw = self.config.kl_weight;
        let vae = 0.5 * (sq / cnt) - 0.5 * kw * kl;

        if self.config.adversarial && self.config.adversarial_weight > 0.0 {
            let out = m.critic.forward(&stack(x, &x_hat)?, Mode::Train)?;
            let per = out.sample_len();
            let scale = self.config.adversarial_weight / (b * per) as f64;
            let g: Vec<T> = (0..2 * b * per)
                .map(|k| T::from_f64_lossy(if k < b * per { 0.0 } else { -scale }))
                .collect();
            let gin = m.critic.backward(&Tensor::from_vec(out.shape(), g)?)?;
            let half = x.len();
            for (g, a) in grad.iter_mut().zip(&gin.data()[half..]) {
                *g = *g + *a;
            }
        }

        let dz = m.decoder.backward(&Tensor::from_vec(x_hat.shape(), grad)?)?;
        let kscale = kw / (b * d) as f64;
        let mut genc = Vec::with_capacity(b * 2 * d);
        for i in 0..b {
            for c in 0..d {
                let k = i * d + c;
                genc.push(T::from_f64_lossy(dz.data()[k].as_f64() + mu[k] * kscale));
            }
            for c in 0..d {
                let k = i * d + c;
                let s = (0.5 * lv[k]).exp();
                let through_z = dz.data()[k].as_f64() * 0.5 * eps[k] * s;
                genc.push(T::from_f64_lossy(through_z - 0.5 * (1.0 - s * s) * kscale));
            }
        }
        m.encoder.backward(&Tensor::from_vec(&[b, 2 * d], genc)?)?;
        self.opt_enc.step_params(m.encoder.params_mut())?;
        self.opt_dec.step_params(m.decoder.params_mut())?;
        Ok(StepOutcome {
            vae_loss: vae,
            critic_estimate,
        })
    }
}

/// Train a fresh model on `dataset`, visiting frames in a seeded shuffled
/// order each epoch. Trailing batches smaller than two frames are skipped.
pub fn train_avae<T: Scalar>(
    dataset: &FrameSequence,
    architecture: &AvaeArchitecture,
    config: &TrainConfig,
) -> Result<(AvaeModel<T>, TrainHistory)> {
    train_avae_with(dataset, architecture, config, |_| {})
}

/// [`train_avae`] with a per-epoch callback.
pub fn train_avae_with<T: Scalar>(
    dataset: &FrameSequence,
    architecture: &AvaeArchitecture,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(AvaeModel<T>, TrainHistory)> {
    config.validate()?;
    if dataset.len() < 2 * config.batch_size {
        return Err(CoreError::InvalidArgument(format!(
            "dataset has {} frames, training needs at least {}",
            dataset.len(),
            2 * config.batch_size
        )));
    }
    let mut model = AvaeModel::<T>::new(architecture.clone(), config.adversarial, config.seed)?;
    model.check_frames(dataset.frames())?;
    let all = frames_to_tensor::<T>(dataset.frames())?;
    let mut rng = stream_rng(config.seed, 2);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut trainer = Trainer {
        model: &mut model,
        config,
        opt_enc: OptimizerState::adam(config.learning_rate),
        opt_dec: OptimizerState::adam(config.learning_rate),
        opt_critic: OptimizerState::adam(config.learning_rate),
    };
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut vae_sum, mut critic_sum, mut steps) = (0.0, 0.0, 0usize);
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            if batch.len() < 2 {
                continue;
            }
            let out = trainer.step(&all.select(batch), &mut rng).map_err(|e| match e {
                CoreError::Nn(n) => CoreError::TrainingDiverged {
                    epoch,
                    step,
                    what: n.to_string(),
                },
                other => other,
            })?;
            if !out.vae_loss.is_finite() || !out.critic_estimate.is_finite() {
                return Err(CoreError::TrainingDiverged {
                    epoch,
                    step,
                    what: format!("loss {} / critic {}", out.vae_loss, out.critic_estimate),
                });
            }
            vae_sum += out.vae_loss;
            critic_sum += out.critic_estimate;
            steps += 1;
        }
        let record = EpochRecord {
            epoch,
            vae_loss: vae_sum / steps as f64,
            critic_loss: critic_sum / steps as f64,
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok((model, history))
}
