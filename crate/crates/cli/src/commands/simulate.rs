use std::path::{Path, PathBuf};

use elpose_core::dynamics::{synth_pose_dataset, AnalyticSystem, SynthConfig};
use elpose_core::projection::CameraParams;
use elpose_core::skeleton::{save_pose_2d, save_pose_3d};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::{self, write_json, Overrides};
use crate::dataset::{CameraSpec, Manifest, ManifestEntry, SystemSpec, MANIFEST_NAME};
use crate::{CliError, CliResult};

fn default_count() -> usize {
    1
}
fn default_frames() -> usize {
    32
}
fn default_fps() -> f64 {
    30.0
}
fn default_sigma() -> f64 {
    0.05
}
fn default_substeps() -> usize {
    10
}
fn default_system() -> SystemSpec {
    SystemSpec {
        masses: vec![1.0, 1.0, 1.0],
        lengths: vec![0.25, 0.3, 0.15],
        gravity: 9.81,
    }
}
fn default_camera() -> CameraSpec {
    CameraSpec {
        scale: 0.3,
        offset: [0.5, 0.3],
    }
}
fn default_angle() -> f64 {
    1.0
}
fn default_velocity() -> f64 {
    1.5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub out_dir: PathBuf,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "default_system")]
    pub system: SystemSpec,
    #[serde(default = "default_camera")]
    pub camera: CameraSpec,
    #[serde(default = "default_angle")]
    pub angle_range: f64,
    #[serde(default = "default_velocity")]
    pub velocity_range: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Simulates `count` chain motions and writes clean, noisy and 2D files
/// plus `manifest.json` into `out_dir`.
pub fn simulate(cfg: &SimulateConfig, out_dir: &Path) -> CliResult<Manifest> {
    if cfg.count == 0 || cfg.frames == 0 {
        return Err(CliError::Config("count and frames must be positive".into()));
    }
    if !(cfg.fps > 0.0) {
        return Err(CliError::Config(format!("fps must be positive, got {}", cfg.fps)));
    }
    let sys = AnalyticSystem::new(
        cfg.system.masses.clone(),
        cfg.system.lengths.clone(),
        cfg.system.gravity,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let camera = CameraParams::new(cfg.camera.scale, cfg.camera.offset).map_err(|e| CliError::Config(e.to_string()))?;
    let synth = SynthConfig {
        count: cfg.count,
        frames: cfg.frames,
        fps: cfg.fps,
        noise_sigma: cfg.noise_sigma,
        substeps: cfg.substeps,
        angle_range: cfg.angle_range,
        velocity_range: cfg.velocity_range,
        camera,
    };
    let samples = synth_pose_dataset(&sys, &synth, cfg.seed).map_err(|e| match e {
        elpose_core::Error::Value(m) => CliError::Config(m),
        other => other.into(),
    })?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut sequences = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let id = format!("seq_{i:04}");
        let entry = ManifestEntry {
            clean: format!("{id}_clean.poseq.json"),
            noisy: format!("{id}_noisy.poseq.json"),
            pose_2d: format!("{id}_2d.poseq.json"),
            id,
        };
        save_pose_3d(&out_dir.join(&entry.clean), &s.clean)?;
        save_pose_3d(&out_dir.join(&entry.noisy), &s.noisy)?;
        save_pose_2d(&out_dir.join(&entry.pose_2d), &s.projected)?;
        sequences.push(entry);
    }
    let manifest = Manifest {
        seed: cfg.seed,
        count: cfg.count,
        frames: cfg.frames,
        fps: cfg.fps,
        noise_sigma: cfg.noise_sigma,
        system: cfg.system.clone(),
        camera: cfg.camera.clone(),
        sequences,
    };
    write_json(&out_dir.join(MANIFEST_NAME), &manifest)?;
    Ok(manifest)
}

pub fn run(config_path: &Path, overrides: &Overrides) -> CliResult<Value> {
    let loaded = config::load::<SimulateConfig>(config_path, overrides)?;
    let out_dir = loaded.resolve(&loaded.config.out_dir);
    let manifest = simulate(&loaded.config, &out_dir)?;
    Ok(json!({
        "command": "simulate",
        "sequences": manifest.sequences.len(),
        "manifest": out_dir.join(MANIFEST_NAME),
    }))
}
