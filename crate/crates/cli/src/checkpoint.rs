//! Model checkpoints: parameter arrays in `<name>.elp` plus a JSON sidecar
//! `<name>.json` describing the architecture and the optimizer step count.

use std::path::{Path, PathBuf};

use elpose_core::diffmath::{load_params, save_params};
use elpose_core::lifting::{LifterConfig, LifterParams};
use elpose_core::physnet::{NoiseMode, PhysNetParams, PhysNetWidths};
use serde::{Deserialize, Serialize};

use crate::config::write_json;
use crate::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifterSidecar {
    pub depth: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysNetSidecar {
    pub dt: f64,
    pub noise_mode: NoiseMode,
    pub hidden_widths: PhysNetWidths,
    pub steps: u64,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

fn read_sidecar<T: serde::de::DeserializeOwned>(checkpoint: &Path) -> CliResult<T> {
    if !checkpoint.exists() {
        return Err(CliError::MissingCheckpoint(checkpoint.to_path_buf()));
    }
    let side = sidecar_path(checkpoint);
    let text = std::fs::read_to_string(&side).map_err(|_| CliError::MissingCheckpoint(side.clone()))?;
    serde_json::from_str(&text).map_err(|e| elpose_core::Error::Checkpoint(format!("{}: {e}", side.display())).into())
}

pub fn save_lifter(path: &Path, params: &LifterParams, steps: u64) -> CliResult<()> {
    crate::config::write_file(path, &[])?;
    save_params(path, params)?;
    let cfg = params.config();
    write_json(
        &sidecar_path(path),
        &LifterSidecar {
            depth: cfg.depth,
            embed_dim: cfg.embed_dim,
            heads: cfg.heads,
            steps,
        },
    )
}

pub fn load_lifter(path: &Path) -> CliResult<(LifterParams, u64)> {
    let side: LifterSidecar = read_sidecar(path)?;
    let mut params = LifterParams::new(
        &LifterConfig {
            depth: side.depth,
            embed_dim: side.embed_dim,
            heads: side.heads,
        },
        0,
    )
    .map_err(|e| elpose_core::Error::Checkpoint(e.to_string()))?;
    load_params(path, &mut params)?;
    Ok((params, side.steps))
}

pub fn save_physnet(path: &Path, params: &PhysNetParams, steps: u64) -> CliResult<()> {
    crate::config::write_file(path, &[])?;
    save_params(path, params)?;
    write_json(
        &sidecar_path(path),
        &PhysNetSidecar {
            dt: params.dt,
            noise_mode: params.noise_mode,
            hidden_widths: params.widths(),
            steps,
        },
    )
}

pub fn load_physnet(path: &Path) -> CliResult<(PhysNetParams, u64)> {
    let side: PhysNetSidecar = read_sidecar(path)?;
    let mut params = PhysNetParams::from_widths(&side.hidden_widths, side.dt, side.noise_mode)
        .map_err(|e| elpose_core::Error::Checkpoint(e.to_string()))?;
    load_params(path, &mut params)?;
    Ok((params, side.steps))
}
