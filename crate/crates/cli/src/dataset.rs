//! Simulated dataset manifests.

use std::path::{Path, PathBuf};

use elpose_core::lifting::{compute_pose_prior, LifterExample, PosePrior};
use elpose_core::skeleton::{load_pose_2d, load_pose_3d, PoseSequence2D, PoseSequence3D};
use serde::{Deserialize, Serialize};

use crate::config::resolve;
use crate::{CliError, CliResult};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub masses: Vec<f64>,
    pub lengths: Vec<f64>,
    pub gravity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub scale: f64,
    pub offset: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub clean: String,
    pub noisy: String,
    pub pose_2d: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub count: usize,
    pub frames: usize,
    pub fps: f64,
    pub noise_sigma: f64,
    pub system: SystemSpec,
    pub camera: CameraSpec,
    pub sequences: Vec<ManifestEntry>,
}

/// One dataset sequence with every file loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub clean: PoseSequence3D,
    pub noisy: PoseSequence3D,
    pub pose_2d: PoseSequence2D,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub dir: PathBuf,
}

impl Dataset {
    /// Accepts a manifest file or the directory holding `manifest.json`.
    pub fn open(path: &Path) -> CliResult<Self> {
        let file = if path.is_dir() {
            path.join(MANIFEST_NAME)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file).map_err(|e| CliError::io(&file, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| elpose_core::Error::Parse {
            path: file.clone(),
            message: e.to_string(),
        })?;
        let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { manifest, dir })
    }

    pub fn path_of(&self, rel: &str) -> PathBuf {
        resolve(&self.dir, Path::new(rel))
    }

    pub fn load_2d(&self) -> CliResult<Vec<(String, PoseSequence2D)>> {
        self.manifest
            .sequences
            .iter()
            .map(|e| Ok((e.id.clone(), load_pose_2d(&self.path_of(&e.pose_2d))?)))
            .collect()
    }

    pub fn load_all(&self) -> CliResult<Vec<Sample>> {
        self.manifest
            .sequences
            .iter()
            .map(|e| {
                Ok(Sample {
                    id: e.id.clone(),
                    clean: load_pose_3d(&self.path_of(&e.clean))?,
                    noisy: load_pose_3d(&self.path_of(&e.noisy))?,
                    pose_2d: load_pose_2d(&self.path_of(&e.pose_2d))?,
                })
            })
            .collect()
    }
}

/// Observed 2D paired with clean 3D.
pub fn lifter_examples(samples: &[Sample]) -> Vec<LifterExample> {
    samples
        .iter()
        .map(|s| LifterExample {
            pose_2d: s.pose_2d.clone(),
            pose_3d: s.clean.clone(),
        })
        .collect()
}

/// Prior over the clean 3D sequences, at the common sequence length.
pub fn prior_of(samples: &[Sample]) -> CliResult<PosePrior> {
    let t = samples
        .first()
        .map(|s| s.clean.len())
        .ok_or(elpose_core::Error::EmptyDataset)?;
    if samples.iter().any(|s| s.clean.len() != t || s.pose_2d.len() != t) {
        return Err(CliError::Config("dataset sequences must share one length".into()));
    }
    Ok(compute_pose_prior(
        &samples.iter().map(|s| s.clean.clone()).collect::<Vec<_>>(),
        t,
    )?)
}
