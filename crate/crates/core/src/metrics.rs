//! Image fidelity metrics on the 8-bit scale and discrete divergences.
//!
//! MSE, PSNR and SSIM operate per channel on the 0..=255 view of a frame and
//! average the channels. SSIM uses global image statistics (a single window
//! covering the whole image), not the common 11×11 sliding window.

use std::fmt;

use crate::error::{CoreError, Result};
use crate::imaging::Frame;

pub const MAX_PIXEL: f64 = 255.0;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Multi-channel image on the 0..=255 scale, stored channel-planar.
#[derive(Clone, Debug, PartialEq)]
pub struct Image255 {
    pub height: usize,
    pub width: usize,
    pub channels: Vec<Vec<f64>>,
}

impl Image255 {
    pub fn uniform(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels: vec![vec![value; height * width]; channels],
        }
    }

    pub fn gray(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(CoreError::DimensionMismatch(format!(
                "{} values for a {height}x{width} image",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels: vec![values],
        })
    }
}

impl From<&Frame> for Image255 {
    /// 8-bit quantized view of a frame.
    fn from(f: &Frame) -> Self {
        let bytes = f.to_bytes();
        let channels = (0..3)
            .map(|c| bytes.iter().skip(c).step_by(3).map(|&b| f64::from(b)).collect())
            .collect();
        Self {
            height: f.height(),
            width: f.width(),
            channels,
        }
    }
}

fn check_dims(a: &Image255, b: &Image255) -> Result<()> {
    if a.height != b.height || a.width != b.width || a.channels.len() != b.channels.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.height,
            a.width,
            a.channels.len(),
            b.height,
            b.width,
            b.channels.len()
        )));
    }
    if a.channels.is_empty() || a.height * a.width == 0 {
        return Err(CoreError::InvalidArgument("empty image".into()));
    }
    Ok(())
}

pub fn mse_image(i: &Image255, k: &Image255) -> Result<f64> {
    check_dims(i, k)?;
    let per_channel: Vec<f64> = i
        .channels
        .iter()
        .zip(&k.channels)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
        .collect();
    Ok(per_channel.iter().sum::<f64>() / per_channel.len() as f64)
}

/// PSNR from a mean squared error; `+∞` when the error is zero.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * MAX_PIXEL.log10() - 10.0 * mse.log10()
    }
}

pub fn psnr(i: &Image255, k: &Image255) -> Result<f64> {
    Ok(psnr_from_mse(mse_image(i, k)?))
}

fn ssim_channel(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let mu_a = a.iter().sum::<f64>() / n;
    let mu_b = b.iter().sum::<f64>() / n;
    let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - mu_a, y - mu_b);
        var_a += dx * dx;
        var_b += dy * dy;
        cov += dx * dy;
    }
    var_a /= n;
    var_b /= n;
    cov /= n;
    let c1 = (SSIM_K1 * MAX_PIXEL).powi(2);
    let c2 = (SSIM_K2 * MAX_PIXEL).powi(2);
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

pub fn ssim(i: &Image255, k: &Image255) -> Result<f64> {
    check_dims(i, k)?;
    let total: f64 = i.channels.iter().zip(&k.channels).map(|(a, b)| ssim_channel(a, b)).sum();
    Ok(total / i.channels.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricsReport {
    pub fn compare(reference: &Frame, candidate: &Frame) -> Result<Self> {
        let (a, b) = (Image255::from(reference), Image255::from(candidate));
        let mse = mse_image(&a, &b)?;
        Ok(Self {
            mse,
            psnr: psnr_from_mse(mse),
            ssim: ssim(&a, &b)?,
        })
    }
}

/// Formats a PSNR value, writing `inf` for identical images.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

impl fmt::Display for MetricsReport {
    /// `mse,psnr_db,ssim`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.mse, format_db(self.psnr), self.ssim)
    }
}

/// Exp-normalized vector, computed after subtracting the maximum.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.is_empty() {
        return Err(CoreError::InvalidArgument(format!("{name} is empty")));
    }
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(CoreError::InvalidArgument(format!("{name} has negative or non-finite entries")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(CoreError::InvalidArgument(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// Kullback–Leibler divergence in nats, with `0 · log(0 / q) = 0`.
pub fn kl_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    check_distribution(p, "P")?;
    check_distribution(q, "Q")?;
    if p.len() != q.len() {
        return Err(CoreError::DimensionMismatch(format!("{} vs {} outcomes", p.len(), q.len())));
    }
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(CoreError::InvalidArgument(format!(
                "Q has no support at outcome {i} where P = {pi}"
            )));
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total)
}

/// Jensen–Shannon divergence in nats; bounded by `ln 2`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_distribution(p, "P")?;
    check_distribution(q, "Q")?;
    if p.len() != q.len() {
        return Err(CoreError::DimensionMismatch(format!("{} vs {} outcomes", p.len(), q.len())));
    }
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    // m is positive wherever p or q is; skip the sum check on m, it can drift by an ulp.
    let half_kl = |x: &[f64]| -> f64 {
        x.iter()
            .zip(&m)
            .filter(|(xi, _)| **xi > 0.0)
            .map(|(xi, mi)| xi * (xi / mi).ln())
            .sum::<f64>()
    };
    Ok(0.5 * half_kl(p) + 0.5 * half_kl(q))
}

/// Empirical 1-D earth mover's distance between equal-size sample sets.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(CoreError::InvalidArgument("sample sets must be non-empty".into()));
    }
    if a.len() != b.len() {
        return Err(CoreError::DimensionMismatch(format!("{} vs {} samples", a.len(), b.len())));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    Ok(sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / sa.len() as f64)
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    assert!(n > 0, "median of an empty slice");
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
