use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use erecon_cli::manifest::RunManifest;

const TINY: &str = r#"
frame_size = 16
scenario.duration = 0.008
avae.epochs = 2
avae.base_width = 4
cgan.epochs = 2
cgan.base_width = 4
cgan.levels = 2
"#;

fn erecon(config: &Path, run: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_erecon"))
        .arg("--config")
        .arg(config)
        .arg("--run-dir")
        .arg(run)
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup(text: &str) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    fs::write(&cfg, text).unwrap();
    (dir, cfg)
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_key_exits_two_and_names_it() {
    let (dir, cfg) = setup("avae.epochz = 3\n");
    let out = erecon(&cfg, &dir.path().join("run"), &["simulate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
}

#[test]
fn missing_stages_exit_three() {
    let (dir, cfg) = setup(TINY);
    let run = dir.path().join("run");
    for stage in [&["train"][..], &["reconstruct"], &["enhance"]] {
        assert_eq!(erecon(&cfg, &run, stage).status.code(), Some(3), "{stage:?}");
    }
    ok(&erecon(&cfg, &run, &["simulate"]));
    assert_eq!(erecon(&cfg, &run, &["reconstruct"]).status.code(), Some(3));
}

#[test]
fn unknown_run_exits_four() {
    let (dir, cfg) = setup(&format!("output_dir = {:?}\n", dir_str(&tempfile::tempdir().unwrap().keep())));
    let out = Command::new(env!("CARGO_BIN_EXE_erecon"))
        .args(["--config", cfg.to_str().unwrap(), "report", "no-such-run"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    drop(dir);
}

fn dir_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn full_run_artifacts_and_report() {
    let (dir, cfg) = setup(TINY);
    let run = dir.path().join("run");
    ok(&erecon(&cfg, &run, &["simulate"]));
    let m = RunManifest::load(&run).unwrap().unwrap();
    let sim = m.stage("simulate").unwrap();
    assert_eq!(sim.details["frame_count"], 41);
    // 41 frames plus the frame index and the truth table.
    assert_eq!(sim.artifacts.len(), 43);

    let partial = String::from_utf8(erecon(&cfg, &run, &["report"]).stdout).unwrap();
    assert_eq!(partial.matches("\n## ").count(), 1);
    assert!(partial.contains("missing stages: train, train-vae, reconstruct, enhance"));

    ok(&erecon(&cfg, &run, &["train"]));
    let history = fs::read_to_string(run.join("avae/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 2);
    ok(&erecon(&cfg, &run, &["reconstruct"]));
    let m = RunManifest::load(&run).unwrap().unwrap();
    assert_eq!(m.stage("reconstruct").unwrap().details["dense_frame_count"], 40 * 10 + 1);
    let table = fs::read_to_string(run.join("interpolation_report.csv")).unwrap();
    assert!(table.starts_with("legend,time_s,feature,S,D-S,Error"));
    ok(&erecon(&cfg, &run, &["enhance"]));
    let metrics = fs::read_to_string(run.join("enhance_metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 41);

    let report = String::from_utf8(erecon(&cfg, &run, &["report"]).stdout).unwrap();
    for section in ["## Loss curves", "## Latent trajectory", "## Interpolation errors", "## Enhancement"] {
        assert!(report.contains(section), "{section}");
    }
    assert!(!report.contains("## AVAE vs VAE"));
    assert!(report.contains("acceptability: PSNR > 20 dB"));

    ok(&erecon(&cfg, &run, &["train", "--no-adversarial"]));
    let m = RunManifest::load(&run).unwrap().unwrap();
    assert_eq!(m.stage("train-vae").unwrap().details["adversarial"], false);
    assert!(m.stage("enhance").is_some(), "AVAE-based stages survive a VAE retrain");
    m.verify(&run).unwrap();
    let report = String::from_utf8(erecon(&cfg, &run, &["report"]).stdout).unwrap();
    assert!(report.contains("## AVAE vs VAE"));
    assert!(!run.join(".lock").exists());
}

#[test]
fn decoded_nodes_match_direct_decode() {
    use erecon_core::avae::AvaeModel;
    use erecon_core::imaging::read_sequence;
    let (dir, cfg) = setup(TINY);
    let run = dir.path().join("run");
    for s in ["simulate", "train", "reconstruct"] {
        ok(&erecon(&cfg, &run, &[s]));
    }
    let config = erecon_cli::PipelineConfig::parse(TINY).unwrap();
    let model = AvaeModel::<f32>::load(config.avae_architecture(), true, run.join("avae")).unwrap();
    let sim = read_sequence(run.join("frames"), "s").unwrap();
    let direct = model.reconstruct(sim.frames()).unwrap();
    let dense = read_sequence(run.join("dense_frames"), "d").unwrap();
    for (i, f) in direct.iter().enumerate() {
        assert_eq!(dense.frames()[i * 10].to_bytes(), f.to_bytes(), "node {i}");
    }
}

#[test]
fn identical_seeds_reproduce_manifests_in_f64() {
    let (dir, cfg) = setup(TINY);
    let runs = [dir.path().join("a"), dir.path().join("b")];
    for run in &runs {
        for s in ["simulate", "train", "reconstruct", "enhance"] {
            ok(&erecon(&cfg, run, &[s, "--f64", "--seed", "5"]));
        }
    }
    let a = fs::read_to_string(runs[0].join("manifest.json")).unwrap();
    let b = fs::read_to_string(runs[1].join("manifest.json")).unwrap();
    assert_eq!(a, b);
    let m: RunManifest = serde_json::from_str(&a).unwrap();
    assert_eq!(m.seed, 5);
    assert_eq!(m.stage("train").unwrap().details["precision"], "f64");
}
