use std::path::{Path, PathBuf};

use elpose_core::physnet::{fuse_poses, reestimate};
use elpose_core::projection::{fit_camera, project};
use elpose_core::rng;
use elpose_core::skeleton::{load_pose_2d, save_pose_2d, save_pose_3d};
use rand::Rng;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{lift_all, pose_stem};
use crate::checkpoint::{load_lifter, load_physnet};
use crate::config::{self, Overrides};
use crate::dataset::{lifter_examples, prior_of, Dataset};
use crate::{CliError, CliResult};

fn d_prompts() -> usize {
    2
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    pub lifter_checkpoint: PathBuf,
    pub physnet_checkpoint: PathBuf,
    pub prompt_dataset: PathBuf,
    /// Refine every 2D sequence of this dataset.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Extra 2D `.poseq.json` files.
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_prompts")]
    pub prompt_pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub id: String,
    pub camera_residual: f64,
}

pub fn refine(cfg: &RefineConfig, resolve: impl Fn(&Path) -> PathBuf) -> CliResult<Vec<Refined>> {
    let (lifter, _) = load_lifter(&resolve(&cfg.lifter_checkpoint))?;
    let (physnet, _) = load_physnet(&resolve(&cfg.physnet_checkpoint))?;
    let pool_samples = Dataset::open(&resolve(&cfg.prompt_dataset))?.load_all()?;
    let pool = lifter_examples(&pool_samples);
    let prior = prior_of(&pool_samples)?;

    let mut inputs = match &cfg.dataset {
        Some(p) => Dataset::open(&resolve(p))?.load_2d()?,
        None => Vec::new(),
    };
    for p in &cfg.inputs {
        let p = resolve(p);
        inputs.push((pose_stem(&p), load_pose_2d(&p)?));
    }
    if inputs.is_empty() {
        return Err(CliError::Config("refine needs `dataset` or `inputs`".into()));
    }
    let poses: Vec<_> = inputs.iter().map(|(_, s)| s.clone()).collect();
    let lifted = lift_all(&lifter, &poses, &pool, &prior, cfg.prompt_pairs, false, cfg.seed)?;

    let out_dir = resolve(&cfg.out_dir);
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
    let mut noise_rng = rng::stream(cfg.seed, "refine-noise");
    let mut report = Vec::with_capacity(inputs.len());
    for ((id, pose_2d), s_dd) in inputs.iter().zip(lifted) {
        let s_pp = reestimate(&s_dd, &physnet, noise_rng.gen())?;
        let fused = fuse_poses(&s_dd, &s_pp)?;
        let fit = fit_camera(&fused, pose_2d)?;
        let reproj = project(&fused, &fit.camera);
        save_pose_3d(&out_dir.join(format!("{id}_dd.poseq.json")), &s_dd)?;
        save_pose_3d(&out_dir.join(format!("{id}_pp.poseq.json")), &s_pp)?;
        save_pose_3d(&out_dir.join(format!("{id}_fused.poseq.json")), &fused)?;
        save_pose_2d(&out_dir.join(format!("{id}_reproj2d.poseq.json")), &reproj)?;
        report.push(Refined {
            id: id.clone(),
            camera_residual: fit.residual,
        });
    }
    Ok(report)
}

pub fn run(config_path: &Path, overrides: &Overrides) -> CliResult<Value> {
    let loaded = config::load::<RefineConfig>(config_path, overrides)?;
    let report = refine(&loaded.config, |p| loaded.resolve(p))?;
    let mean_residual = report.iter().map(|r| r.camera_residual).sum::<f64>() / report.len() as f64;
    Ok(json!({
        "command": "refine",
        "sequences": report.len(),
        "out_dir": loaded.resolve(&loaded.config.out_dir),
        "mean_camera_residual": mean_residual,
    }))
}
