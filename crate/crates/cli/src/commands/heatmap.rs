use std::path::{Path, PathBuf};

use elpose_core::heatmap::{build_pyramid, skeleton_heatmaps, write_pyramid};
use elpose_core::skeleton::{load_pose_2d, JointLayout};
use serde::Deserialize;
use serde_json::{json, Value};

use super::pose_stem;
use crate::config::{self, write_file, Overrides};
use crate::{CliError, CliResult};

fn d_size() -> usize {
    64
}
fn d_sigma() -> f64 {
    2.0
}
fn d_factors() -> Vec<usize> {
    vec![1, 2, 4]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapConfig {
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default = "d_size")]
    pub width: usize,
    #[serde(default = "d_size")]
    pub height: usize,
    /// Gaussian width in pixels.
    #[serde(default = "d_sigma")]
    pub sigma: f64,
    #[serde(default = "d_factors")]
    pub factors: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

pub const STATS_NAME: &str = "heatmap_stats.csv";

pub fn frame_file(stem: &str, t: usize) -> String {
    format!("{stem}_f{t:04}.elh1")
}

/// Writes one ELH1 pyramid per frame and returns the stats CSV bytes.
pub fn render(cfg: &HeatmapConfig, out_dir: &Path, resolve: impl Fn(&Path) -> PathBuf) -> CliResult<(usize, Vec<u8>)> {
    if cfg.width == 0 || cfg.height == 0 || !(cfg.sigma > 0.0) {
        return Err(CliError::Config("width, height and sigma must be positive".into()));
    }
    if cfg.factors.is_empty() {
        return Err(CliError::Config("factors must not be empty".into()));
    }
    if cfg.inputs.is_empty() {
        return Err(CliError::Config("heatmap needs at least one input".into()));
    }
    let layout = JointLayout::h36m();
    let mut stats = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Config(format!("csv: {e}"));
    stats
        .write_record(["file", "frame", "channel", "max", "mean"])
        .map_err(err)?;
    let mut written = 0;
    for input in &cfg.inputs {
        let path = resolve(input);
        let seq = load_pose_2d(&path)?;
        let stem = pose_stem(&path);
        for (t, pose) in seq.frames().iter().enumerate() {
            let maps = skeleton_heatmaps(pose, layout.limb_edges(), cfg.width, cfg.height, cfg.sigma);
            let pyramid = build_pyramid(&maps, &cfg.factors)?;
            let mut bytes = Vec::new();
            write_pyramid(&mut bytes, &pyramid)?;
            let name = frame_file(&stem, t);
            write_file(&out_dir.join(&name), &bytes)?;
            written += 1;
            for c in 0..maps.channels() {
                let ch = maps.channel(c);
                let max = ch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mean = ch.iter().sum::<f64>() / ch.len() as f64;
                stats
                    .write_record([
                        name.clone(),
                        t.to_string(),
                        c.to_string(),
                        format!("{max:e}"),
                        format!("{mean:e}"),
                    ])
                    .map_err(err)?;
            }
        }
    }
    let bytes = stats.into_inner().map_err(|e| CliError::Config(format!("csv: {e}")))?;
    Ok((written, bytes))
}

pub fn run(config_path: &Path, overrides: &Overrides) -> CliResult<Value> {
    let loaded = config::load::<HeatmapConfig>(config_path, overrides)?;
    let out_dir = loaded.resolve(&loaded.config.out_dir);
    let (files, stats) = render(&loaded.config, &out_dir, |p| loaded.resolve(p))?;
    let stats_path = out_dir.join(STATS_NAME);
    write_file(&stats_path, &stats)?;
    Ok(json!({
        "command": "heatmap",
        "files": files,
        "stats": stats_path,
    }))
}
