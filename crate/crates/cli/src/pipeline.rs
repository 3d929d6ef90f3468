//! Pipeline stages. Each stage reads its inputs from the run directory,
//! writes its artifacts there and records their hashes in the manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use erecon_core::avae::{train_avae, AvaeModel};
use erecon_core::cgan::{train_cgan, PairedSet};
use erecon_core::dynamics::generate_sequence;
use erecon_core::imaging::{read_sequence, write_sequence, FrameMeta, FrameSequence};
use erecon_core::metrics::{median, MetricsReport};
use erecon_core::reconstruction::{
    decode_trajectory, densify_trajectory, extract_trajectory, interpolate_objective, smoothness_ratio,
    write_trajectory,
};
use erecon_nn::Scalar;
use serde_json::{json, Map, Value};

use crate::config::PipelineConfig;
use crate::manifest::{artifacts, sha256_json, RunLock, RunManifest, StageRecord, STAGE_ORDER};
use crate::CliError;

pub const FRAMES_DIR: &str = "frames";
pub const TRUTH_FILE: &str = "truth_objectives.csv";
pub const DENSE_FRAMES_DIR: &str = "dense_frames";
pub const ENHANCED_DIR: &str = "enhanced";
pub const CGAN_DIR: &str = "cgan";

/// PSNR and SSIM levels above which enhanced frames count as acceptable.
pub const PSNR_THRESHOLD_DB: f64 = 20.0;
pub const SSIM_THRESHOLD: f64 = 0.9;

pub fn run_id(config: &PipelineConfig) -> String {
    sha256_json(&config.snapshot())[..12].to_string()
}

/// Open run directory with its lock held.
pub struct Run {
    pub dir: PathBuf,
    pub config: PipelineConfig,
    pub manifest: RunManifest,
    _lock: RunLock,
}

impl Run {
    pub fn open(dir: &Path, config: PipelineConfig) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let lock = RunLock::acquire(dir)?;
        let snapshot = config.snapshot();
        let mut manifest = RunManifest::load(dir)?
            .unwrap_or_else(|| RunManifest::new(run_id(&config), config.seed, snapshot.clone()));
        manifest.seed = config.seed;
        manifest.config = snapshot;
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            manifest,
            _lock: lock,
        })
    }

    fn require(&self, stage: &str) -> Result<&StageRecord, CliError> {
        self.manifest
            .stage(stage)
            .ok_or_else(|| CliError::MissingStage(format!("stage `{stage}` has not completed in {}", self.dir.display())))
    }

    fn finish(&mut self, stage: &str, files: &[PathBuf], details: Map<String, Value>) -> Result<(), CliError> {
        let record = StageRecord {
            stage: stage.to_string(),
            config_sha256: sha256_json(&self.manifest.config),
            artifacts: artifacts(&self.dir, files)?,
            details,
        };
        self.manifest.record(record);
        self.manifest.save(&self.dir)
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn training_frames(&self) -> Result<FrameSequence, CliError> {
        self.require("simulate")?;
        Ok(read_sequence(self.path(FRAMES_DIR), "simulation")?)
    }
}

fn write_text(path: &Path, text: &str) -> Result<PathBuf, CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

fn sequence_files(dir: &Path, names: Vec<String>) -> Vec<PathBuf> {
    names.into_iter().map(|n| dir.join(n)).collect()
}

pub fn simulate(run: &mut Run) -> Result<String, CliError> {
    let cfg = &run.config;
    let (train, truth) = match cfg.dense_scenario() {
        Some(dense) => {
            let factor = cfg.substeps + 1;
            let all = generate_sequence(&dense)?;
            let truth: Vec<(f64, f64)> = all.frames().iter().map(|f| (f.meta.time, f.meta.objective)).collect();
            let frames = all
                .frames()
                .iter()
                .step_by(factor)
                .map(|f| {
                    f.clone().with_meta(FrameMeta {
                        iteration_index: f.meta.iteration_index / factor,
                        ..f.meta
                    })
                })
                .collect();
            (FrameSequence::new(frames, "simulation")?, Some(truth))
        }
        None => (generate_sequence(&cfg.scenario())?, None),
    };
    let frames_dir = run.path(FRAMES_DIR);
    if frames_dir.exists() {
        fs::remove_dir_all(&frames_dir).map_err(|e| CliError::io(&frames_dir, e))?;
    }
    let mut files = sequence_files(&frames_dir, write_sequence(&frames_dir, &train)?);
    let mut details = Map::new();
    details.insert("frame_count".into(), json!(train.len()));
    details.insert("dense_truth".into(), json!(truth.is_some()));
    if let Some(t) = &truth {
        let mut text = String::from("time_s,objective\n");
        for (time, obj) in t {
            let _ = writeln!(text, "{time},{obj}");
        }
        files.push(write_text(&run.path(TRUTH_FILE), &text)?);
    }
    let n = train.len();
    run.finish("simulate", &files, details)?;
    Ok(format!("simulated {n} frames into {}", frames_dir.display()))
}

fn precision_of(cfg: &PipelineConfig) -> &'static str {
    if cfg.f64 {
        "f64"
    } else {
        "f32"
    }
}

fn model_dir(adversarial: bool) -> &'static str {
    if adversarial {
        "avae"
    } else {
        "vae"
    }
}

pub fn train(run: &mut Run, adversarial: bool) -> Result<String, CliError> {
    if run.config.f64 {
        train_typed::<f64>(run, adversarial)
    } else {
        train_typed::<f32>(run, adversarial)
    }
}

fn train_typed<T: Scalar>(run: &mut Run, adversarial: bool) -> Result<String, CliError> {
    let seq = run.training_frames()?;
    let cfg = &run.config;
    let (model, history) = train_avae::<T>(&seq, &cfg.avae_architecture(), &cfg.train_config(adversarial))?;
    let dir = run.path(model_dir(adversarial));
    let mut files = model.save(&dir)?;
    files.push(write_text(&dir.join("history.csv"), &history.to_table())?);

    let recon = model.reconstruct(seq.frames())?;
    let reports = seq
        .frames()
        .iter()
        .zip(&recon)
        .map(|(a, b)| MetricsReport::compare(a, b))
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = String::from("index,mse,psnr,ssim\n");
    for (f, r) in seq.frames().iter().zip(&reports) {
        let _ = writeln!(table, "{},{},{},{}", f.meta.iteration_index, r.mse, r.psnr, r.ssim);
    }
    files.push(write_text(&dir.join("reconstruction_metrics.csv"), &table)?);

    let med = |f: fn(&MetricsReport) -> f64| median(&reports.iter().map(f).collect::<Vec<_>>());
    let mut details = Map::new();
    details.insert("precision".into(), json!(precision_of(cfg)));
    details.insert("adversarial".into(), json!(adversarial));
    details.insert("epochs".into(), json!(history.epochs.len()));
    details.insert("median_psnr".into(), json!(med(|r| r.psnr)));
    details.insert("median_mse".into(), json!(med(|r| r.mse)));
    details.insert("median_ssim".into(), json!(med(|r| r.ssim)));
    let stage = if adversarial { "train" } else { "train-vae" };
    let last = history.epochs.last().map(|e| e.vae_loss).unwrap_or(f64::NAN);
    run.finish(stage, &files, details)?;
    Ok(format!(
        "trained {} for {} epochs, final loss {last:.6}, median PSNR {:.2} dB",
        model_dir(adversarial),
        history.epochs.len(),
        med(|r| r.psnr)
    ))
}

/// The trained model reconstruction uses: the AVAE when present, else the VAE.
fn trained_model(run: &Run) -> Result<(bool, String), CliError> {
    let rec = run
        .manifest
        .stage("train")
        .or_else(|| run.manifest.stage("train-vae"))
        .ok_or_else(|| CliError::MissingStage(format!("no trained model in {}", run.dir.display())))?;
    let adversarial = rec.details.get("adversarial").and_then(Value::as_bool).unwrap_or(true);
    let precision = rec.details.get("precision").and_then(Value::as_str).unwrap_or("f32").to_string();
    Ok((adversarial, precision))
}

pub fn reconstruct(run: &mut Run) -> Result<String, CliError> {
    let (adversarial, precision) = trained_model(run)?;
    if precision == "f64" {
        reconstruct_typed::<f64>(run, adversarial)
    } else {
        reconstruct_typed::<f32>(run, adversarial)
    }
}

fn read_truth(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .skip(1)
        .map(|l| {
            let (a, b) = l
                .split_once(',')
                .ok_or_else(|| CliError::Internal(format!("{}: malformed line `{l}`", path.display())))?;
            let p = |s: &str| s.parse::<f64>().map_err(|e| CliError::Internal(format!("{}: {e}", path.display())));
            Ok((p(a)?, p(b)?))
        })
        .collect()
}

fn reconstruct_typed<T: Scalar>(run: &mut Run, adversarial: bool) -> Result<String, CliError> {
    let seq = run.training_frames()?;
    let cfg = run.config.clone();
    let model = AvaeModel::<T>::load(cfg.avae_architecture(), adversarial, run.path(model_dir(adversarial)))?;
    let traj = extract_trajectory(&model, &seq)?;
    let dense = densify_trajectory(&traj, cfg.substeps, cfg.window)?;
    let mut files = Vec::new();
    let tp = run.path("trajectory.csv");
    write_trajectory(&tp, &traj)?;
    files.push(tp);
    let dp = run.path("dense_trajectory.csv");
    write_trajectory(&dp, &dense)?;
    files.push(dp);

    let decoded = decode_trajectory(&model, &dense)?;
    let ddir = run.path(DENSE_FRAMES_DIR);
    if ddir.exists() {
        fs::remove_dir_all(&ddir).map_err(|e| CliError::io(&ddir, e))?;
    }
    files.extend(sequence_files(&ddir, write_sequence(&ddir, &decoded)?));

    let has_truth = run
        .manifest
        .stage("simulate")
        .and_then(|s| s.details.get("dense_truth"))
        .and_then(Value::as_bool)
        .unwrap_or(false);
    let truth = if has_truth { Some(read_truth(&run.path(TRUTH_FILE))?) } else { None };
    let report = interpolate_objective(&traj, cfg.substeps, cfg.window, truth.as_deref())?;
    files.push(write_text(&run.path("interpolation_report.csv"), &report.to_table())?);

    let smooth = smoothness_ratio(&traj).ok();
    let mut details = Map::new();
    details.insert("model".into(), json!(model_dir(adversarial)));
    details.insert("dense_frame_count".into(), json!(decoded.len()));
    details.insert("frame_multiplier".into(), json!(report.frame_multiplier));
    details.insert("max_relative_error".into(), json!(report.max_relative_error));
    details.insert("mean_relative_error".into(), json!(report.mean_relative_error));
    details.insert("smoothness_ratio".into(), json!(smooth));
    let n = decoded.len();
    run.finish("reconstruct", &files, details)?;
    let err = report
        .max_relative_error
        .map(|e| format!(", max objective error {:.4}%", e * 100.0))
        .unwrap_or_default();
    Ok(format!("reconstructed {n} frames{err}"))
}

pub fn enhance(run: &mut Run) -> Result<String, CliError> {
    run.require("reconstruct")?;
    let (_, precision) = trained_model(run)?;
    if precision == "f64" {
        enhance_typed::<f64>(run)
    } else {
        enhance_typed::<f32>(run)
    }
}

fn enhance_typed<T: Scalar>(run: &mut Run) -> Result<String, CliError> {
    let seq = run.training_frames()?;
    let cfg = run.config.clone();
    let dense = read_sequence(run.path(DENSE_FRAMES_DIR), "decoded-trajectory")?;
    let stride = cfg.substeps + 1;
    let decoded: Vec<_> = dense
        .frames()
        .iter()
        .step_by(stride)
        .zip(seq.frames())
        .map(|(d, s)| d.clone().with_meta(s.meta))
        .collect();
    let pairs = PairedSet::align(&decoded, seq.frames())?;
    let (model, history) = train_cgan::<T>(&pairs, &cfg.cgan_architecture(), &cfg.cgan_config())?;
    let cdir = run.path(CGAN_DIR);
    let mut files = model.save(&cdir)?;
    files.push(write_text(&cdir.join("history.csv"), &history.to_table())?);

    let enhanced = model.generate_batch(dense.frames())?;
    let edir = run.path(ENHANCED_DIR);
    if edir.exists() {
        fs::remove_dir_all(&edir).map_err(|e| CliError::io(&edir, e))?;
    }
    let enhanced_seq = FrameSequence::new(enhanced, "enhanced")?;
    files.extend(sequence_files(&edir, write_sequence(&edir, &enhanced_seq)?));

    let after_frames: Vec<_> = enhanced_seq.frames().iter().step_by(stride).cloned().collect();
    let mut table = String::from("index,psnr_before,ssim_before,psnr_after,ssim_after\n");
    let (mut pb, mut sb, mut pa, mut sa) = (vec![], vec![], vec![], vec![]);
    for (idx, ((cond, target), after)) in pairs.pairs().iter().zip(&after_frames).enumerate() {
        let before = MetricsReport::compare(target, cond)?;
        let now = MetricsReport::compare(target, after)?;
        let _ = writeln!(table, "{idx},{},{},{},{}", before.psnr, before.ssim, now.psnr, now.ssim);
        pb.push(before.psnr);
        sb.push(before.ssim);
        pa.push(now.psnr);
        sa.push(now.ssim);
    }
    files.push(write_text(&run.path("enhance_metrics.csv"), &table)?);
    let summary = enhancement_summary(median(&pb), median(&sb), median(&pa), median(&sa));
    files.push(write_text(&run.path("enhance_summary.txt"), &summary)?);

    let mut details = Map::new();
    details.insert("pairs".into(), json!(pairs.len()));
    details.insert("median_psnr_before".into(), json!(median(&pb)));
    details.insert("median_ssim_before".into(), json!(median(&sb)));
    details.insert("median_psnr_after".into(), json!(median(&pa)));
    details.insert("median_ssim_after".into(), json!(median(&sa)));
    details.insert("psnr_threshold_met".into(), json!(median(&pa) > PSNR_THRESHOLD_DB));
    details.insert("ssim_threshold_met".into(), json!(median(&sa) > SSIM_THRESHOLD));
    run.finish("enhance", &files, details)?;
    Ok(summary.trim_end().to_string())
}

pub fn enhancement_summary(psnr_before: f64, ssim_before: f64, psnr_after: f64, ssim_after: f64) -> String {
    let yes = |b: bool| if b { "met" } else { "not met" };
    format!(
        "median PSNR {psnr_before:.2} dB -> {psnr_after:.2} dB; median SSIM {ssim_before:.4} -> {ssim_after:.4}\n\
         acceptability: PSNR > {PSNR_THRESHOLD_DB} dB {}; SSIM > {SSIM_THRESHOLD} {}\n",
        yes(psnr_after > PSNR_THRESHOLD_DB),
        yes(ssim_after > SSIM_THRESHOLD)
    )
}

fn read_optional(path: &Path) -> Option<String> {
    fs::read_to_string(path).ok()
}

/// Consolidated report of whatever stages have completed.
pub fn report(dir: &Path) -> Result<String, CliError> {
    let manifest = RunManifest::load(dir)?
        .ok_or_else(|| CliError::UnknownRun(format!("no run manifest in {}", dir.display())))?;
    let done: Vec<&str> = manifest.stages.iter().map(|s| s.stage.as_str()).collect();
    let missing: Vec<&str> = STAGE_ORDER.iter().copied().filter(|s| !done.contains(s)).collect();
    let mut out = String::new();
    let _ = writeln!(out, "# Run {}", manifest.run_id);
    let _ = writeln!(out, "seed: {}", manifest.seed);
    let _ = writeln!(out, "completed stages: {}", done.join(", "));
    let _ = writeln!(
        out,
        "missing stages: {}",
        if missing.is_empty() { "none".to_string() } else { missing.join(", ") }
    );

    if let Some(s) = manifest.stage("simulate") {
        let _ = writeln!(out, "\n## Simulation");
        let frames = s.details.get("frame_count").cloned().unwrap_or(Value::Null);
        let _ = writeln!(out, "frames: {frames}");
        if let Some(m) = read_optional(&dir.join(FRAMES_DIR).join("manifest.csv")) {
            out.push_str(&m);
        }
    }

    let histories: Vec<(&str, PathBuf)> = [("train", "avae"), ("train-vae", "vae")]
        .iter()
        .filter(|(stage, _)| manifest.stage(stage).is_some())
        .map(|&(_, d)| (d, dir.join(d).join("history.csv")))
        .chain(manifest.stage("enhance").map(|_| ("cgan", dir.join(CGAN_DIR).join("history.csv"))))
        .collect();
    if !histories.is_empty() {
        let _ = writeln!(out, "\n## Loss curves");
        for (name, p) in histories {
            let _ = writeln!(out, "### {name}");
            out.push_str(&read_optional(&p).unwrap_or_default());
        }
    }

    if let Some(s) = manifest.stage("reconstruct") {
        let _ = writeln!(out, "\n## Latent trajectory");
        out.push_str(&read_optional(&dir.join("trajectory.csv")).unwrap_or_default());
        let _ = writeln!(out, "\n## Interpolation errors");
        for key in ["dense_frame_count", "max_relative_error", "mean_relative_error", "smoothness_ratio"] {
            let _ = writeln!(out, "{key}: {}", s.details.get(key).cloned().unwrap_or(Value::Null));
        }
        out.push_str(&read_optional(&dir.join("interpolation_report.csv")).unwrap_or_default());
    }

    if manifest.stage("enhance").is_some() {
        let _ = writeln!(out, "\n## Enhancement");
        out.push_str(&read_optional(&dir.join("enhance_summary.txt")).unwrap_or_default());
    }

    if let (Some(a), Some(v)) = (manifest.stage("train"), manifest.stage("train-vae")) {
        let _ = writeln!(out, "\n## AVAE vs VAE");
        let _ = writeln!(out, "model,median_psnr,median_mse,median_ssim");
        for (name, r) in [("avae", a), ("vae", v)] {
            let g = |k: &str| r.details.get(k).cloned().unwrap_or(Value::Null);
            let _ = writeln!(out, "{name},{},{},{}", g("median_psnr"), g("median_mse"), g("median_ssim"));
        }
    }
    Ok(out)
}
