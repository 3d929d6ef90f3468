//! Time-ordered latent trajectories, windowed Lagrange densification and the
//! objective-interpolation error report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use erecon_nn::Scalar;

use crate::avae::AvaeModel;
use crate::error::{io_err, CoreError, Result};
use crate::imaging::{FrameMeta, FrameSequence, Source};

#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample {
    pub time: f64,
    pub z: Vec<f64>,
    pub objective: Option<f64>,
    pub source: Source,
}

/// Samples ordered by strictly increasing time, all with the same latent width.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTrajectory {
    samples: Vec<LatentSample>,
}

impl LatentTrajectory {
    pub fn new(samples: Vec<LatentSample>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let dim = first.z.len();
            if dim == 0 {
                return Err(CoreError::InvalidArgument("latent vectors must be non-empty".into()));
            }
            for (i, s) in samples.iter().enumerate() {
                if s.z.len() != dim {
                    return Err(CoreError::DimensionMismatch(format!(
                        "sample {i} has {} latent components, expected {dim}",
                        s.z.len()
                    )));
                }
                if !s.time.is_finite() || s.z.iter().any(|v| !v.is_finite()) {
                    return Err(CoreError::InvalidArgument(format!("sample {i} is not finite")));
                }
            }
            if let Some(i) = samples.windows(2).position(|w| !(w[1].time > w[0].time)) {
                return Err(CoreError::InvalidArgument(format!(
                    "sample times must increase strictly (sample {} at {} follows {})",
                    i + 1,
                    samples[i + 1].time,
                    samples[i].time
                )));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[LatentSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.z.len())
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.z[c]).collect()
    }
}

/// One sample per frame with `z` set to the encoder mean.
pub fn extract_trajectory<T: Scalar>(model: &AvaeModel<T>, sequence: &FrameSequence) -> Result<LatentTrajectory> {
    let (mu, _) = model.encode_frames(sequence.frames())?;
    let samples = sequence
        .frames()
        .iter()
        .zip(mu)
        .map(|(f, z)| LatentSample {
            time: f.meta.time,
            z,
            objective: Some(f.meta.objective),
            source: Source::Simulated,
        })
        .collect();
    LatentTrajectory::new(samples)
}

/// Value at `x` of the unique polynomial through `nodes`.
pub fn lagrange_interpolate(nodes: &[(f64, f64)], x: f64) -> Result<f64> {
    if nodes.len() < 2 || nodes.len() > 8 {
        return Err(CoreError::InvalidArgument(format!(
            "Lagrange interpolation takes 2 to 8 nodes, got {}",
            nodes.len()
        )));
    }
    for (i, a) in nodes.iter().enumerate() {
        if nodes[i + 1..].iter().any(|b| b.0 == a.0) {
            return Err(CoreError::InvalidArgument(format!("duplicate node abscissa {}", a.0)));
        }
    }
    if let Some(&(_, y)) = nodes.iter().find(|n| n.0 == x) {
        return Ok(y);
    }
    let mut sum = 0.0;
    for (j, &(xj, yj)) in nodes.iter().enumerate() {
        let mut basis = 1.0;
        for (m, &(xm, _)) in nodes.iter().enumerate() {
            if m != j {
                basis *= (x - xm) / (xj - xm);
            }
        }
        sum += yj * basis;
    }
    Ok(sum)
}

/// First node of the interpolation window for interval `[k, k + 1]`,
/// clamped so the window stays inside `0..n`.
pub fn window_start(k: usize, n: usize, window: usize) -> usize {
    let centred = (k + 1).saturating_sub(window / 2);
    centred.min(n - window)
}

fn check_densify_args(n: usize, substeps: usize, window: usize) -> Result<()> {
    if substeps == 0 {
        return Err(CoreError::InvalidArgument("substeps must be at least 1".into()));
    }
    if window < 2 || window % 2 != 0 || window > 8 {
        return Err(CoreError::InvalidArgument(format!(
            "window must be an even number between 2 and 8, got {window}"
        )));
    }
    if n < window {
        return Err(CoreError::InvalidArgument(format!(
            "trajectory has {n} samples, window {window} needs at least as many"
        )));
    }
    Ok(())
}

/// Interpolate a scalar series at `substeps` uniform fractions of every
/// interval. Returns `(interval, fraction index, time, value)` per new point.
fn densify_series(times: &[f64], values: &[f64], substeps: usize, window: usize) -> Result<Vec<(usize, usize, f64, f64)>> {
    let n = times.len();
    check_densify_args(n, substeps, window)?;
    let mut out = Vec::with_capacity((n - 1) * substeps);
    let mut nodes = Vec::with_capacity(window);
    for k in 0..n - 1 {
        let start = window_start(k, n, window);
        nodes.clear();
        nodes.extend((start..start + window).map(|i| (times[i], values[i])));
        for j in 1..=substeps {
            let t = times[k] + (times[k + 1] - times[k]) * j as f64 / (substeps + 1) as f64;
            out.push((k, j, t, lagrange_interpolate(&nodes, t)?));
        }
    }
    Ok(out)
}

/// Insert `substeps` interpolated samples into every interval. Original
/// samples are kept verbatim; output length is `(n − 1)(substeps + 1) + 1`.
pub fn densify_trajectory(traj: &LatentTrajectory, substeps: usize, window: usize) -> Result<LatentTrajectory> {
    let n = traj.len();
    check_densify_args(n, substeps, window)?;
    let times: Vec<f64> = traj.samples.iter().map(|s| s.time).collect();
    let components: Vec<Vec<(usize, usize, f64, f64)>> = (0..traj.feature_dim())
        .map(|c| densify_series(&times, &traj.component(c), substeps, window))
        .collect::<Result<_>>()?;
    let objectives = match traj.samples.iter().map(|s| s.objective).collect::<Option<Vec<f64>>>() {
        Some(obj) => Some(densify_series(&times, &obj, substeps, window)?),
        None => None,
    };
    let mut samples = Vec::with_capacity((n - 1) * (substeps + 1) + 1);
    for k in 0..n - 1 {
        samples.push(traj.samples[k].clone());
        for j in 0..substeps {
            let idx = k * substeps + j;
            samples.push(LatentSample {
                time: components[0][idx].2,
                z: components.iter().map(|c| c[idx].3).collect(),
                objective: objectives.as_ref().map(|o| o[idx].3),
                source: Source::Interpolated,
            });
        }
    }
    samples.push(traj.samples[n - 1].clone());
    LatentTrajectory::new(samples)
}

/// Decode every sample into a frame carrying its time, objective and source.
pub fn decode_trajectory<T: Scalar>(model: &AvaeModel<T>, traj: &LatentTrajectory) -> Result<FrameSequence> {
    let zs: Vec<Vec<f64>> = traj.samples.iter().map(|s| s.z.clone()).collect();
    let frames = model.decode_batch(&zs)?;
    let frames = frames
        .into_iter()
        .zip(&traj.samples)
        .enumerate()
        .map(|(i, (f, s))| {
            f.with_meta(FrameMeta {
                iteration_index: i,
                time: s.time,
                objective: s.objective.unwrap_or(f64::NAN),
                source: s.source,
            })
        })
        .collect();
    FrameSequence::new(frames, "decoded-trajectory")
}

/// `|truth − interpolated| / |truth|`, undefined where the truth is zero.
pub fn relative_error(truth: f64, interpolated: f64) -> Option<f64> {
    (truth != 0.0).then(|| (truth - interpolated).abs() / truth.abs())
}

/// Percentage with two decimals, e.g. `0.01%`.
pub fn format_percent(fraction: f64) -> String {
    format!("{:.2}%", fraction * 100.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    /// `I<interval>->D<position>`: interpolated point `position` inside
    /// interval `interval` (both 1-based).
    pub legend: String,
    pub time: f64,
    pub feature: f64,
    pub interpolated: f64,
    pub truth: Option<f64>,
    pub relative_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionReport {
    pub rows: Vec<ReportRow>,
    pub max_relative_error: Option<f64>,
    pub mean_relative_error: Option<f64>,
    pub frame_multiplier: f64,
}

impl ReconstructionReport {
    pub const HEADER: &'static str = "legend,time_s,feature,S,D-S,Error";

    pub fn to_table(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let truth = r.truth.map(|v| v.to_string()).unwrap_or_default();
            let err = r.relative_error.map(format_percent).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{},{}", r.legend, r.time, r.feature, truth, r.interpolated, err);
        }
        s
    }
}

/// Interpolate the simulated objectives with the same scheme as the latents.
/// `truth`, when given, holds the objective of every densified sample (for
/// instance a simulation at the dense frame rate) and is aligned by index.
pub fn interpolate_objective(
    traj: &LatentTrajectory,
    substeps: usize,
    window: usize,
    truth: Option<&[(f64, f64)]>,
) -> Result<ReconstructionReport> {
    let n = traj.len();
    let objectives = traj
        .samples
        .iter()
        .map(|s| s.objective)
        .collect::<Option<Vec<f64>>>()
        .ok_or_else(|| CoreError::InvalidArgument("every sample needs an objective value".into()))?;
    let times: Vec<f64> = traj.samples.iter().map(|s| s.time).collect();
    let dense = densify_series(&times, &objectives, substeps, window)?;
    let features = densify_series(&times, &traj.component(0), substeps, window)?;
    let dense_len = (n - 1) * (substeps + 1) + 1;
    if let Some(t) = truth {
        if t.len() != dense_len {
            return Err(CoreError::DimensionMismatch(format!(
                "ground truth has {} samples, densified trajectory has {dense_len}",
                t.len()
            )));
        }
    }
    let mut rows = Vec::with_capacity(dense.len());
    for (&(k, j, time, value), feature) in dense.iter().zip(&features) {
        let truth_value = match truth {
            Some(t) => {
                let (tt, v) = t[k * (substeps + 1) + j];
                if (tt - time).abs() > 1e-9 * time.abs().max(1.0) {
                    return Err(CoreError::DimensionMismatch(format!(
                        "ground-truth time {tt} does not match interpolated time {time}"
                    )));
                }
                Some(v)
            }
            None => None,
        };
        rows.push(ReportRow {
            legend: format!("I{}->D{}", k + 1, j),
            time,
            feature: feature.3,
            interpolated: value,
            truth: truth_value,
            relative_error: truth_value.and_then(|t| relative_error(t, value)),
        });
    }
    let errors: Vec<f64> = rows.iter().filter_map(|r| r.relative_error).collect();
    Ok(ReconstructionReport {
        max_relative_error: errors.iter().copied().reduce(f64::max),
        mean_relative_error: (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64),
        frame_multiplier: dense_len as f64 / n as f64,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearityResidual {
    pub index: usize,
    pub time: f64,
    /// `z_i` minus the time-weighted affine blend of its two neighbours.
    pub residual: Vec<f64>,
}

impl LinearityResidual {
    pub fn norm(&self) -> f64 {
        self.residual.iter().map(|r| r * r).sum::<f64>().sqrt()
    }
}

/// Residual of every interior simulated sample against the affine blend of
/// its neighbours with weights fixed by the sample times.
pub fn local_linearity_diagnostic(traj: &LatentTrajectory) -> Result<Vec<LinearityResidual>> {
    if traj.len() < 3 {
        return Err(CoreError::InvalidArgument(format!(
            "linearity diagnostic needs at least 3 samples, got {}",
            traj.len()
        )));
    }
    let s = &traj.samples;
    Ok((1..s.len() - 1)
        .filter(|&i| s[i].source == Source::Simulated)
        .map(|i| {
            let (t0, t1, t2) = (s[i - 1].time, s[i].time, s[i + 1].time);
            let (w0, w2) = ((t2 - t1) / (t2 - t0), (t1 - t0) / (t2 - t0));
            let residual = (0..traj.feature_dim())
                .map(|c| s[i].z[c] - (w0 * s[i - 1].z[c] + w2 * s[i + 1].z[c]))
                .collect();
            LinearityResidual {
                index: i,
                time: t1,
                residual,
            }
        })
        .collect())
}

/// `mean |Δ²z| / mean |Δz|` over all components; below 1 for trajectories
/// that vary smoothly relative to their step size.
pub fn smoothness_ratio(traj: &LatentTrajectory) -> Result<f64> {
    if traj.len() < 3 {
        return Err(CoreError::InvalidArgument("smoothness ratio needs at least 3 samples".into()));
    }
    let (mut d1, mut d2, mut n1, mut n2) = (0.0, 0.0, 0usize, 0usize);
    for c in 0..traj.feature_dim() {
        let z = traj.component(c);
        for w in z.windows(2) {
            d1 += (w[1] - w[0]).abs();
            n1 += 1;
        }
        for w in z.windows(3) {
            d2 += (w[2] - 2.0 * w[1] + w[0]).abs();
            n2 += 1;
        }
    }
    let first = d1 / n1 as f64;
    if first == 0.0 {
        return Err(CoreError::InvalidArgument("trajectory is constant".into()));
    }
    Ok((d2 / n2 as f64) / first)
}

pub const TRAJECTORY_HEADER: &str = "time_s,source,objective";

pub fn trajectory_table(traj: &LatentTrajectory) -> String {
    let mut s = String::from(TRAJECTORY_HEADER);
    for c in 0..traj.feature_dim() {
        let _ = write!(s, ",z_{c}");
    }
    s.push('\n');
    for sample in &traj.samples {
        let obj = sample.objective.map(|v| v.to_string()).unwrap_or_default();
        let _ = write!(s, "{},{},{}", sample.time, sample.source.as_str(), obj);
        for v in &sample.z {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn write_trajectory(path: impl AsRef<Path>, traj: &LatentTrajectory) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, trajectory_table(traj)).map_err(io_err(path))
}

pub fn parse_trajectory(text: &str, origin: &Path) -> Result<LatentTrajectory> {
    let bad = |line: usize, reason: String| CoreError::Malformed {
        path: origin.to_path_buf(),
        reason: format!("line {line}: {reason}"),
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[..3].join(",") != TRAJECTORY_HEADER {
        return Err(bad(1, format!("unexpected header {header:?}")));
    }
    let dim = cols.len() - 3;
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 3 {
            return Err(bad(n, format!("expected {} fields, found {}", dim + 3, fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(n, format!("{s:?}: {e}")));
        let source = Source::parse(fields[1]).ok_or_else(|| bad(n, format!("unknown source {:?}", fields[1])))?;
        let objective = if fields[2].is_empty() { None } else { Some(num(fields[2])?) };
        samples.push(LatentSample {
            time: num(fields[0])?,
            z: fields[3..].iter().map(|f| num(f)).collect::<Result<_>>()?,
            objective,
            source,
        });
    }
    LatentTrajectory::new(samples)
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<LatentTrajectory> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_trajectory(&text, path)
}
