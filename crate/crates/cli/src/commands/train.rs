use std::path::{Path, PathBuf};

use elpose_core::diffmath::AdamConfig;
use elpose_core::lifting::{train_lifter, LifterConfig, LifterParams, LifterTrainConfig};
use elpose_core::physnet::{
    train_physnet, NoiseMode, PhysNetConfig, PhysNetExample, PhysNetParams, PhysNetStage, PhysNetTrainConfig,
    Supervision,
};
use serde::Deserialize;
use serde_json::{json, Value};

use super::lift_all;
use crate::checkpoint::{load_lifter, load_physnet, save_lifter, save_physnet};
use crate::config::{self, write_file, Overrides};
use crate::dataset::{lifter_examples, prior_of, Dataset};
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Lifter,
    PhysnetPretrain,
    PhysnetFinetune,
}

fn d_epochs() -> usize {
    10
}
fn d_batch() -> usize {
    8
}
fn d_lr() -> f64 {
    1e-3
}
fn d_wd() -> f64 {
    AdamConfig::default().weight_decay
}
fn d_prompts() -> usize {
    2
}
fn d_depth() -> usize {
    LifterConfig::default().depth
}
fn d_embed() -> usize {
    LifterConfig::default().embed_dim
}
fn d_heads() -> usize {
    LifterConfig::default().heads
}
fn d_hidden() -> usize {
    PhysNetConfig::default().hidden
}
fn d_decoder_hidden() -> usize {
    PhysNetConfig::default().decoder_hidden
}
fn d_true() -> bool {
    true
}
fn d_noise() -> NoiseMode {
    NoiseMode::MeanOnly
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub dataset: PathBuf,
    /// Prompt pool and pose prior source; defaults to `dataset`.
    #[serde(default)]
    pub prompt_dataset: Option<PathBuf>,
    /// Output `.elp` path; the sidecar and curve sit next to it.
    pub checkpoint: PathBuf,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_prompts")]
    pub prompt_pairs: usize,
    /// Required by the physnet stages.
    #[serde(default)]
    pub lifter_checkpoint: Option<PathBuf>,
    /// Start from this checkpoint instead of a fresh init.
    #[serde(default)]
    pub resume: Option<PathBuf>,
    #[serde(default = "d_depth")]
    pub depth: usize,
    #[serde(default = "d_embed")]
    pub embed_dim: usize,
    #[serde(default = "d_heads")]
    pub heads: usize,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    #[serde(default = "d_decoder_hidden")]
    pub decoder_hidden: usize,
    /// Defaults to one frame at the dataset rate.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "d_noise")]
    pub noise_mode: NoiseMode,
    #[serde(default = "d_true")]
    pub shared_local: bool,
}

pub fn curve_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("curve.csv")
}

fn write_curve(path: &Path, first_step: u64, curve: &[f64]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Config(format!("csv: {e}"));
    w.write_record(["step", "loss"]).map_err(io)?;
    for (i, loss) in curve.iter().enumerate() {
        w.write_record([(first_step + i as u64).to_string(), format!("{loss:e}")])
            .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Config(format!("csv: {e}")))?;
    write_file(path, &bytes)
}

fn adam(cfg: &TrainConfig) -> CliResult<AdamConfig> {
    if !(cfg.lr > 0.0) || !(cfg.weight_decay >= 0.0) {
        return Err(CliError::Config(
            "lr must be positive and weight_decay non-negative".into(),
        ));
    }
    if cfg.batch_size == 0 {
        return Err(CliError::Config("batch_size must be positive".into()));
    }
    Ok(AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    })
}

/// Trains one stage and writes checkpoint, sidecar and curve. Returns the
/// final step count and the curve.
pub fn train(cfg: &TrainConfig, resolve: impl Fn(&Path) -> PathBuf) -> CliResult<(u64, Vec<f64>)> {
    let adam = adam(cfg)?;
    let data = Dataset::open(&resolve(&cfg.dataset))?;
    let samples = data.load_all()?;
    let pool_samples = match &cfg.prompt_dataset {
        Some(p) => Some(Dataset::open(&resolve(p))?.load_all()?),
        None => None,
    };
    let pool = lifter_examples(pool_samples.as_deref().unwrap_or(&samples));
    let prior = prior_of(pool_samples.as_deref().unwrap_or(&samples))?;
    let out = resolve(&cfg.checkpoint);

    let (steps, curve) = match cfg.stage {
        Stage::Lifter => {
            let (init, steps) = match &cfg.resume {
                Some(p) => load_lifter(&resolve(p))?,
                None => {
                    let lc = LifterConfig {
                        depth: cfg.depth,
                        embed_dim: cfg.embed_dim,
                        heads: cfg.heads,
                    };
                    (
                        LifterParams::new(&lc, cfg.seed).map_err(|e| CliError::Config(e.to_string()))?,
                        0,
                    )
                }
            };
            let tc = LifterTrainConfig {
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                prompt_pairs: cfg.prompt_pairs,
                adam,
                seed: cfg.seed,
            };
            let (params, curve) = train_lifter(init, &lifter_examples(&samples), &prior, &tc)?;
            let total = steps + curve.len() as u64;
            save_lifter(&out, &params, total)?;
            (steps, curve)
        }
        Stage::PhysnetPretrain | Stage::PhysnetFinetune => {
            let lifter_path = cfg
                .lifter_checkpoint
                .as_ref()
                .ok_or_else(|| CliError::Config("physnet stages need lifter_checkpoint".into()))?;
            let (lifter, _) = load_lifter(&resolve(lifter_path))?;
            let (init, steps) = match &cfg.resume {
                Some(p) => load_physnet(&resolve(p))?,
                None => {
                    let pc = PhysNetConfig {
                        hidden: cfg.hidden,
                        decoder_hidden: cfg.decoder_hidden,
                        dt: cfg.dt.unwrap_or(1.0 / data.manifest.fps),
                        noise_mode: cfg.noise_mode,
                        shared_local: cfg.shared_local,
                    };
                    (
                        PhysNetParams::new(&pc, cfg.seed).map_err(|e| CliError::Config(e.to_string()))?,
                        0,
                    )
                }
            };
            let inputs: Vec<_> = samples.iter().map(|s| s.pose_2d.clone()).collect();
            let lifted = lift_all(
                &lifter,
                &inputs,
                &pool,
                &prior,
                cfg.prompt_pairs,
                pool_samples.is_none(),
                cfg.seed,
            )?;
            let stage = if cfg.stage == Stage::PhysnetPretrain {
                PhysNetStage::Pretrain3d
            } else {
                PhysNetStage::Finetune2d
            };
            let examples: Vec<PhysNetExample> = lifted
                .into_iter()
                .zip(&samples)
                .map(|(s_dd, s)| PhysNetExample {
                    s_dd,
                    target: match stage {
                        PhysNetStage::Pretrain3d => Supervision::Pose3d(s.clean.clone()),
                        PhysNetStage::Finetune2d => Supervision::Pose2d(s.pose_2d.clone()),
                    },
                })
                .collect();
            let tc = PhysNetTrainConfig {
                stage,
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                adam,
                seed: cfg.seed,
            };
            let (params, curve) = train_physnet(init, &examples, &tc)?;
            save_physnet(&out, &params, steps + curve.len() as u64)?;
            (steps, curve)
        }
    };
    write_curve(&curve_path(&out), steps + 1, &curve)?;
    Ok((steps + curve.len() as u64, curve))
}

pub fn run(config_path: &Path, overrides: &Overrides) -> CliResult<Value> {
    let loaded = config::load::<TrainConfig>(config_path, overrides)?;
    let (steps, curve) = train(&loaded.config, |p| loaded.resolve(p))?;
    let out = loaded.resolve(&loaded.config.checkpoint);
    Ok(json!({
        "command": "train",
        "checkpoint": out,
        "curve": curve_path(&out),
        "steps": steps,
        "final_loss": curve.last(),
    }))
}
