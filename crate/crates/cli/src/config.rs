//! Pipeline configuration: one TOML file with flat dotted keys such as
//! `avae.epochs`. Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use erecon_core::avae::{AvaeArchitecture, TrainConfig};
use erecon_core::cgan::{CganArchitecture, CganConfig};
use erecon_core::dynamics::{ImpactScenario, Material1D};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Square frame edge in pixels.
    pub frame_size: usize,
    pub feature_dim: usize,
    /// Interpolated frames inserted between consecutive simulated frames.
    pub substeps: usize,
    /// Lagrange window size.
    pub window: usize,
    /// Parent directory of run directories.
    pub output_dir: PathBuf,
    /// Run every network in 64-bit floats.
    pub f64: bool,
    pub scenario: ScenarioConfig,
    pub avae: AvaeConfig,
    pub cgan: CganSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            frame_size: 64,
            feature_dim: 1,
            substeps: 9,
            window: 4,
            output_dir: PathBuf::from("runs"),
            f64: false,
            scenario: ScenarioConfig::default(),
            avae: AvaeConfig::default(),
            cgan: CganSection::default(),
        }
    }
}

/// Uniform mass chain; see [`ImpactScenario`] for the mechanics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub masses: usize,
    pub mass: f64,
    pub stiffness: f64,
    pub damping_alpha: f64,
    pub damping_beta: f64,
    pub initial_velocity: f64,
    pub push_force: f64,
    pub push_ramp: f64,
    pub stop_stiffness: f64,
    pub element_length: f64,
    pub newmark_beta: f64,
    pub newmark_gamma: f64,
    pub dt: f64,
    pub duration: f64,
    /// Integration steps between training frames.
    pub frame_stride: usize,
    pub stress_range: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let s = ImpactScenario::default();
        Self {
            masses: s.masses.len(),
            mass: s.masses[0],
            stiffness: s.stiffnesses[0],
            damping_alpha: s.damping_alpha,
            damping_beta: s.damping_beta,
            initial_velocity: s.initial_velocity,
            push_force: s.push_force,
            push_ramp: s.push_ramp,
            stop_stiffness: s.stop_stiffness,
            element_length: s.element_length,
            newmark_beta: s.newmark_beta,
            newmark_gamma: s.newmark_gamma,
            dt: s.dt,
            duration: s.duration,
            frame_stride: s.frame_stride,
            stress_range: s.stress_range,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvaeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adversarial_weight: f64,
    pub kl_weight: f64,
    pub critic_clip: f64,
    pub base_width: usize,
    pub dropout: f64,
}

impl Default for AvaeConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let a = AvaeArchitecture::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            adversarial_weight: t.adversarial_weight,
            kl_weight: t.kl_weight,
            critic_clip: t.critic_clip,
            base_width: a.base_width,
            dropout: a.dropout,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CganSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adversarial_weight: f64,
    pub reconstruction_weight: f64,
    pub base_width: usize,
    pub levels: usize,
    pub noise_channels: usize,
}

impl Default for CganSection {
    fn default() -> Self {
        let c = CganConfig::default();
        let a = CganArchitecture::default();
        Self {
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            adversarial_weight: c.adversarial_weight,
            reconstruction_weight: c.reconstruction_weight,
            base_width: a.base_width,
            levels: a.levels,
            noise_channels: a.noise_channels,
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |e: erecon_core::CoreError| CliError::Config(e.to_string());
        self.scenario().validate().map_err(wrap)?;
        self.avae_architecture().validate().map_err(wrap)?;
        self.train_config(true).validate().map_err(wrap)?;
        self.cgan_architecture().validate().map_err(wrap)?;
        self.cgan_config().validate().map_err(wrap)?;
        if self.substeps == 0 || !(2..=8).contains(&self.window) {
            return Err(CliError::Config("substeps must be ≥ 1 and window in 2..=8".into()));
        }
        let frames = self.scenario().frame_count();
        if frames < self.window {
            return Err(CliError::Config(format!("{frames} frames cannot fill a window of {}", self.window)));
        }
        Ok(())
    }

    /// Training-rate scenario.
    pub fn scenario(&self) -> ImpactScenario {
        let s = &self.scenario;
        ImpactScenario {
            masses: vec![s.mass; s.masses],
            stiffnesses: vec![s.stiffness; s.masses.saturating_sub(1)],
            damping_alpha: s.damping_alpha,
            damping_beta: s.damping_beta,
            initial_velocity: s.initial_velocity,
            push_force: s.push_force,
            push_ramp: s.push_ramp,
            stop_stiffness: s.stop_stiffness,
            element_length: s.element_length,
            newmark_beta: s.newmark_beta,
            newmark_gamma: s.newmark_gamma,
            dt: s.dt,
            duration: s.duration,
            frame_stride: s.frame_stride,
            frame_height: self.frame_size,
            frame_width: self.frame_size,
            stress_range: s.stress_range,
            material: Material1D::aluminium_6061_t6(),
        }
    }

    /// Scenario recorded `substeps + 1` times more often, when the training
    /// stride divides evenly; its objectives are the interpolation truth.
    pub fn dense_scenario(&self) -> Option<ImpactScenario> {
        let factor = self.substeps + 1;
        let s = self.scenario();
        (s.frame_stride % factor == 0).then(|| ImpactScenario {
            frame_stride: s.frame_stride / factor,
            ..s
        })
    }

    pub fn avae_architecture(&self) -> AvaeArchitecture {
        AvaeArchitecture {
            input_size: self.frame_size,
            base_width: self.avae.base_width,
            feature_dim: self.feature_dim,
            dropout: self.avae.dropout,
        }
    }

    pub fn train_config(&self, adversarial: bool) -> TrainConfig {
        let a = &self.avae;
        TrainConfig {
            epochs: a.epochs,
            batch_size: a.batch_size,
            learning_rate: a.learning_rate,
            adversarial,
            adversarial_weight: a.adversarial_weight,
            kl_weight: a.kl_weight,
            critic_clip: a.critic_clip,
            seed: self.seed,
        }
    }

    pub fn cgan_architecture(&self) -> CganArchitecture {
        CganArchitecture {
            input_size: self.frame_size,
            base_width: self.cgan.base_width,
            levels: self.cgan.levels,
            noise_channels: self.cgan.noise_channels,
        }
    }

    pub fn cgan_config(&self) -> CganConfig {
        let c = &self.cgan;
        CganConfig {
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            adversarial_weight: c.adversarial_weight,
            reconstruction_weight: c.reconstruction_weight,
            seed: self.seed,
        }
    }

    /// Canonical JSON used for hashing and the manifest snapshot.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
