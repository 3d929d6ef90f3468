//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any hard criterion fails. Criterion 7 compares two
//! stochastic trainings and is reported without gating the exit status.

use std::f64::consts::{LN_2, PI};
use std::fs;
use std::path::Path;
use std::time::Instant;

use erecon_cli::manifest::RunManifest;
use erecon_cli::pipeline::{self, Run, PSNR_THRESHOLD_DB, SSIM_THRESHOLD};
use erecon_cli::PipelineConfig;
use erecon_core::avae::{train_avae, AvaeArchitecture, TrainConfig};
use erecon_core::dynamics::*;
use erecon_core::imaging::{bilinear_sample, FrameMeta, FrameSequence, Plane};
use erecon_core::metrics::*;
use erecon_core::reconstruction::{format_percent, lagrange_interpolate, relative_error, window_start};
use erecon_nn::finite_diff::check_network;
use erecon_nn::{Activation, LayerSpec, Mode, Padding, Sequential, Tensor};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

/// Epochs per training in the three-seed comparison.
const COMPARISON_EPOCHS: usize = 60;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn main() {
    let started = Instant::now();
    let work = tempfile::tempdir().expect("temp dir");
    let mut failures = 0;
    let mut report = |id: usize, gating: bool, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let note = if gating { "" } else { " (advisory)" };
        println!("criterion {id:>2}: {tag}{note}  {}", o.detail);
        if gating && !o.pass {
            failures += 1;
        }
    };
    report(1, true, gradients());
    report(2, true, sdof());
    report(3, true, interpolation());
    report(4, true, metrics());
    report(5, true, full_scale_geometry());
    let desk = desk_run(&work.path().join("desk"));
    report(6, true, desk.0);
    report(7, false, comparison());
    report(8, true, desk.1);
    report(9, true, desk.2);
    report(10, true, determinism(work.path()));
    println!("total time {:.0} s", started.elapsed().as_secs_f64());
    if failures > 0 {
        std::process::exit(1);
    }
}

fn grad_error(specs: &[LayerSpec], shape: &[usize], mode: Mode, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Sequential::<f64>::from_specs("fd", specs, &mut rng).unwrap();
    for p in net.params_mut() {
        if p.value.shape().len() > 1 {
            p.value = Tensor::randn(p.value.shape(), 0.5, &mut rng);
        }
    }
    let x = Tensor::randn(shape, 1.0, &mut rng);
    let out = net.clone().forward(&x, mode).unwrap().shape().to_vec();
    let probe = Tensor::randn(&out, 1.0, &mut rng);
    check_network(&net, &x, &probe, mode, 1e-5).unwrap().max_error()
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let shapes: [[usize; 4]; 3] = [[2, 2, 5, 5], [3, 3, 4, 6], [2, 1, 8, 8]];
    let mut worst = 0.0f64;
    let mut track = |e: f64| worst = worst.max(e);
    for (i, s) in shapes.iter().enumerate() {
        let seed = i as u64;
        let c = s[1];
        let conv = |k, stride| LayerSpec::Conv {
            in_depth: c,
            out_depth: 3,
            kernel: (k, k),
            stride,
            padding: Padding::Same,
        };
        track(grad_error(&[conv(3, 1)], s, Mode::Train, seed));
        track(grad_error(&[conv(4, 2)], s, Mode::Train, seed));
        track(grad_error(&[LayerSpec::upsample_conv(c, 2, 4, 2)], s, Mode::Train, seed));
        track(grad_error(&[LayerSpec::batch_norm(c)], s, Mode::Train, seed));
        track(grad_error(&[LayerSpec::batch_norm(c)], s, Mode::Eval, seed));
        track(grad_error(&[LayerSpec::dropout(0.5)], s, Mode::Train, seed));
        for act in [
            Activation::Relu,
            Activation::LeakyRelu(0.2),
            Activation::Tanh,
            Activation::Sigmoid,
            Activation::TanhUnit,
        ] {
            track(grad_error(&[LayerSpec::Activation(act)], s, Mode::Train, seed));
        }
        let flat = s[1] * s[2] * s[3];
        track(grad_error(
            &[LayerSpec::Reshape(vec![flat]), LayerSpec::fully_connected(flat, 4)],
            s,
            Mode::Train,
            seed,
        ));
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst < 1e-4 && secs < 60.0,
        format!("conv, strided conv, upsample conv, batch norm (train, eval), dropout, 5 activations, fully connected x 3 shapes, max relative error {worst:.2e}, {secs:.1} s"),
    )
}

fn sdof() -> Outcome {
    let k = (2.0 * PI).powi(2);
    let sys = DynamicSystem::sdof(1.0, 0.0, k, Force::Zero).unwrap();
    let c = newmark_coefficients(0.25, 0.5, 1e-3).unwrap();
    let mut s = DynamicState::initial(&sys, DVector::from_element(1, 1.0), DVector::zeros(1)).unwrap();
    let e0 = sys.energy(&s);
    let (mut err, mut drift) = (0.0f64, 0.0f64);
    for step in 1..=10_000 {
        s = newmark_step(&s, &sys, &c).unwrap();
        let t = step as f64 * 1e-3;
        if step <= 1000 {
            err = err.max((s.displacement[0] - (2.0 * PI * t).cos()).abs());
        }
        drift = drift.max((sys.energy(&s) - e0).abs() / e0);
    }
    outcome(
        err < 1e-3 && drift < 1e-3,
        format!("max |r - cos 2πt| {err:.2e} over one period, energy drift {:.2e}% over ten", drift * 100.0),
    )
}

fn interpolation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bilinear = 0.0f64;
    for _ in 0..200 {
        let c: [f64; 4] = std::array::from_fn(|_| rng.random_range(-5.0..5.0));
        let f = |x: f64, y: f64| c[0] + c[1] * x + c[2] * y + c[3] * x * y;
        let plane = Plane::from_fn(7, 5, f);
        let (x, y) = (rng.random_range(0.0..6.0), rng.random_range(0.0..4.0));
        bilinear = bilinear.max((bilinear_sample(&plane, x, y).unwrap() - f(x, y)).abs());
    }
    let mut cubic = 0.0f64;
    let mut nodes_exact = true;
    for _ in 0..200 {
        let c: [f64; 4] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let f = |t: f64| c[0] + t * (c[1] + t * (c[2] + t * c[3]));
        let mut times = vec![0.0];
        for _ in 0..9 {
            times.push(times.last().unwrap() + rng.random_range(0.1..1.0));
        }
        let k = rng.random_range(0..times.len() - 1);
        let start = window_start(k, times.len(), 4);
        let nodes: Vec<(f64, f64)> = (start..start + 4).map(|i| (times[i], f(times[i]))).collect();
        let x = times[k] + rng.random_range(0.0..1.0) * (times[k + 1] - times[k]);
        cubic = cubic.max((lagrange_interpolate(&nodes, x).unwrap() - f(x)).abs() / (1.0 + f(x).abs()));
        nodes_exact &= nodes.iter().all(|&(x, y)| lagrange_interpolate(&nodes, x).unwrap() == y);
    }
    outcome(
        bilinear <= 1e-12 && cubic <= 1e-9 && nodes_exact,
        format!("bilinear error {bilinear:.1e}, window-4 cubic error {cubic:.1e}, nodes exact {nodes_exact}"),
    )
}

fn metrics() -> Outcome {
    let a = Image255::uniform(8, 8, 1, 0.0);
    let b = Image255::uniform(8, 8, 1, 16.0);
    let p = psnr(&a, &b).unwrap();
    let s = ssim(&a, &Image255::uniform(8, 8, 1, 255.0)).unwrap();
    let same = psnr(&b, &b).unwrap().is_infinite() && ssim(&b, &b).unwrap() == 1.0;
    let js = js_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
    let pass = (p - 24.05).abs() <= 0.01 && ((s - 1e-4) / 1e-4).abs() <= 0.05 && same && (js - LN_2).abs() <= 1e-9;
    outcome(
        pass,
        format!("psnr {p:.4} dB, ssim {s:.3e}, identical-image sentinels {same}, js {js:.12}"),
    )
}

fn full_scale_geometry() -> Outcome {
    let arch = AvaeArchitecture::full_scale(1);
    let n = arch.pre_fc_len();
    let convs: Vec<LayerSpec> =
        arch.encoder_specs().into_iter().take_while(|s| !matches!(s, LayerSpec::Reshape(_))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = Sequential::<f32>::from_specs("enc", &convs, &mut rng).unwrap();
    let out = net.forward(&Tensor::zeros(&[1, 3, 256, 256]), Mode::Eval).unwrap();
    outcome(
        n == 512 && out.len() == 512,
        format!("256x256x3 encoder output {:?} = {} elements", out.shape(), out.len()),
    )
}

fn detail(m: &RunManifest, stage: &str, key: &str) -> f64 {
    m.stage(stage).and_then(|s| s.details.get(key)).and_then(Value::as_f64).unwrap_or(f64::NAN)
}

/// Default configuration through simulate, train, reconstruct and enhance.
fn desk_run(dir: &Path) -> (Outcome, Outcome, Outcome) {
    let cfg = PipelineConfig::default();
    let t = Instant::now();
    let mut run = Run::open(dir, cfg.clone()).unwrap();
    pipeline::simulate(&mut run).unwrap();
    pipeline::train(&mut run, true).unwrap();
    pipeline::reconstruct(&mut run).unwrap();
    let desk_secs = t.elapsed().as_secs_f64();
    pipeline::enhance(&mut run).unwrap();
    let m = &run.manifest;

    let history = fs::read_to_string(dir.join("avae/history.csv")).unwrap();
    let losses: Vec<f64> = history.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let (first, last) = (losses[0], *losses.last().unwrap());
    let smooth = detail(m, "reconstruct", "smoothness_ratio");
    let psnr = detail(m, "train", "median_psnr");
    let frames = detail(m, "simulate", "frame_count");
    let c6 = outcome(
        losses.len() == cfg.avae.epochs && last < first && smooth < 1.0 && psnr >= 18.0 && desk_secs <= 1800.0,
        format!(
            "{frames} frames, loss {first:.5} -> {last:.5} over {} epochs, smoothness {smooth:.3}, median psnr {psnr:.2} dB, {desk_secs:.0} s",
            losses.len()
        ),
    );

    let max_err = detail(m, "reconstruct", "max_relative_error");
    let dense = detail(m, "reconstruct", "dense_frame_count");
    let row = relative_error(405.279, 405.318).map(format_percent).unwrap_or_default();
    let c8 = outcome(
        max_err < 0.01 && row == "0.01%" && dense == (frames - 1.0) * 10.0 + 1.0,
        format!(
            "{dense} densified frames, max objective error {:.4}% against the 10x simulation; 405.318 vs 405.279 -> {row}",
            max_err * 100.0
        ),
    );

    let (sb, sa) = (detail(m, "enhance", "median_ssim_before"), detail(m, "enhance", "median_ssim_after"));
    let (pb, pa) = (detail(m, "enhance", "median_psnr_before"), detail(m, "enhance", "median_psnr_after"));
    let met = |b: bool| if b { "met" } else { "not met" };
    let c9 = outcome(
        sa >= sb,
        format!(
            "median ssim {sb:.4} -> {sa:.4}, psnr {pb:.2} -> {pa:.2} dB; PSNR > {PSNR_THRESHOLD_DB} dB {}, SSIM > {SSIM_THRESHOLD} {}",
            met(pa > PSNR_THRESHOLD_DB),
            met(sa > SSIM_THRESHOLD)
        ),
    );
    (c6, c8, c9)
}

fn comparison() -> Outcome {
    let cfg = PipelineConfig::default();
    let factor = cfg.substeps + 1;
    let all = generate_sequence(&cfg.dense_scenario().expect("default stride divides")).unwrap();
    let frames = all
        .frames()
        .iter()
        .step_by(factor)
        .map(|f| f.clone().with_meta(FrameMeta { iteration_index: f.meta.iteration_index / factor, ..f.meta }))
        .collect();
    let seq = FrameSequence::new(frames, "simulation").unwrap();
    let mut rows = [Vec::new(), Vec::new()];
    for seed in 0..3 {
        for (slot, adversarial) in [true, false].into_iter().enumerate() {
            let tc = TrainConfig {
                epochs: COMPARISON_EPOCHS,
                adversarial,
                seed,
                ..cfg.train_config(adversarial)
            };
            let (model, _) = train_avae::<f32>(&seq, &cfg.avae_architecture(), &tc).unwrap();
            let rec = model.reconstruct(seq.frames()).unwrap();
            let r: Vec<MetricsReport> =
                seq.frames().iter().zip(&rec).map(|(a, b)| MetricsReport::compare(a, b).unwrap()).collect();
            let med = |f: fn(&MetricsReport) -> f64| median(&r.iter().map(f).collect::<Vec<_>>());
            rows[slot].push((med(|x| x.psnr), med(|x| x.mse)));
        }
    }
    let agg = |v: &[(f64, f64)]| (median(&v.iter().map(|x| x.0).collect::<Vec<_>>()), median(&v.iter().map(|x| x.1).collect::<Vec<_>>()));
    let (ap, am) = agg(&rows[0]);
    let (vp, vm) = agg(&rows[1]);
    outcome(
        ap >= vp && am <= vm,
        format!("3 seeds x {COMPARISON_EPOCHS} epochs: AVAE psnr {ap:.2} dB mse {am:.1}, VAE psnr {vp:.2} dB mse {vm:.1}"),
    )
}

fn small_config() -> PipelineConfig {
    PipelineConfig::parse(
        "seed = 11\nf64 = true\nframe_size = 16\nscenario.duration = 0.012\n\
         avae.epochs = 3\navae.base_width = 4\ncgan.epochs = 2\ncgan.base_width = 4\ncgan.levels = 2\n",
    )
    .unwrap()
}

fn determinism(root: &Path) -> Outcome {
    let mut manifests = Vec::new();
    for name in ["det-a", "det-b"] {
        let dir = root.join(name);
        let mut run = Run::open(&dir, small_config()).unwrap();
        pipeline::simulate(&mut run).unwrap();
        pipeline::train(&mut run, true).unwrap();
        pipeline::reconstruct(&mut run).unwrap();
        pipeline::enhance(&mut run).unwrap();
        run.manifest.verify(&dir).unwrap();
        manifests.push(run.manifest.clone());
    }
    let (a, b) = (&manifests[0], &manifests[1]);
    let stages: Vec<&str> = a.stages.iter().map(|s| s.stage.as_str()).collect();
    let artifacts: usize = a.stages.iter().map(|s| s.artifacts.len()).sum();
    let same = a == b && stages == ["simulate", "train", "reconstruct", "enhance"];
    outcome(same, format!("f64 runs agree on all {artifacts} artifact hashes across stages {stages:?}"))
}
