use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use elpose_core::metrics::{
    clip_domain_star, clip_smooth_star, frechet_distance, mpjpe, mpjve, n_mpjpe, EmbeddingSet, FeatureStats,
    ALLOWED_SAMPLE_COUNTS,
};
use elpose_core::skeleton::{load_pose_2d, load_pose_3d};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::pose_stem;
use crate::config::{self, write_file, write_json, Overrides};
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseMetric {
    Mpjpe,
    NMpjpe,
    Mpjve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMetric {
    ClipDomain,
    ClipSmooth,
    Frechet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
pub enum PoseDims {
    #[serde(rename = "2d")]
    TwoD,
    #[default]
    #[serde(rename = "3d")]
    ThreeD,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosePair {
    pub pred: PathBuf,
    pub truth: PathBuf,
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingPair {
    pub generated: PathBuf,
    pub references: Vec<PathBuf>,
    #[serde(default)]
    pub name: Option<String>,
}

fn d_pose_metrics() -> Vec<PoseMetric> {
    vec![PoseMetric::Mpjpe, PoseMetric::NMpjpe, PoseMetric::Mpjve]
}
fn d_embedding_metrics() -> Vec<EmbeddingMetric> {
    vec![
        EmbeddingMetric::ClipDomain,
        EmbeddingMetric::ClipSmooth,
        EmbeddingMetric::Frechet,
    ]
}
fn d_counts() -> Vec<usize> {
    ALLOWED_SAMPLE_COUNTS.to_vec()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default)]
    pub pairs: Vec<PosePair>,
    #[serde(default = "d_pose_metrics")]
    pub metrics: Vec<PoseMetric>,
    #[serde(default)]
    pub dims: PoseDims,
    #[serde(default)]
    pub embedding_pairs: Vec<EmbeddingPair>,
    #[serde(default = "d_embedding_metrics")]
    pub embedding_metrics: Vec<EmbeddingMetric>,
    #[serde(default = "d_counts")]
    pub sample_counts: Vec<usize>,
    pub out_csv: PathBuf,
    /// Defaults to `out_csv` with a `.json` extension.
    #[serde(default)]
    pub out_json: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub metric: String,
    pub pair: String,
    pub value: f64,
}

fn metric_name<T: Serialize>(m: &T) -> String {
    serde_json::to_value(m)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn pose_rows(cfg: &MetricsConfig, resolve: &impl Fn(&Path) -> PathBuf) -> CliResult<Vec<Row>> {
    let mut rows = Vec::new();
    for pair in &cfg.pairs {
        let (pred, truth) = (resolve(&pair.pred), resolve(&pair.truth));
        let name = pair.name.clone().unwrap_or_else(|| pose_stem(&pred));
        let values: Vec<f64> = match cfg.dims {
            PoseDims::ThreeD => {
                let (p, t) = (load_pose_3d(&pred)?, load_pose_3d(&truth)?);
                cfg.metrics
                    .iter()
                    .map(|m| match m {
                        PoseMetric::Mpjpe => mpjpe(&p, &t),
                        PoseMetric::NMpjpe => n_mpjpe(&p, &t),
                        PoseMetric::Mpjve => mpjve(&p, &t),
                    })
                    .collect::<Result<_, _>>()?
            }
            PoseDims::TwoD => {
                let (p, t) = (load_pose_2d(&pred)?, load_pose_2d(&truth)?);
                cfg.metrics
                    .iter()
                    .map(|m| match m {
                        PoseMetric::Mpjpe => mpjpe(&p, &t),
                        PoseMetric::NMpjpe => n_mpjpe(&p, &t),
                        PoseMetric::Mpjve => mpjve(&p, &t),
                    })
                    .collect::<Result<_, _>>()?
            }
        };
        for (m, value) in cfg.metrics.iter().zip(values) {
            rows.push(Row {
                metric: metric_name(m),
                pair: name.clone(),
                value,
            });
        }
    }
    Ok(rows)
}

fn embedding_rows(cfg: &MetricsConfig, resolve: &impl Fn(&Path) -> PathBuf) -> CliResult<Vec<Row>> {
    let mut rows = Vec::new();
    for pair in &cfg.embedding_pairs {
        let gen_path = resolve(&pair.generated);
        let name = pair.name.clone().unwrap_or_else(|| pose_stem(&gen_path));
        let gen = EmbeddingSet::load(&gen_path)?;
        let refs = pair
            .references
            .iter()
            .map(|p| EmbeddingSet::load(&resolve(p)))
            .collect::<Result<Vec<_>, _>>()?;
        if refs.is_empty() {
            return Err(CliError::Config(format!("embedding pair {name} has no references")));
        }
        if refs.iter().any(|r| r.dim() != gen.dim()) {
            return Err(CliError::Config(format!("embedding pair {name} mixes dimensions")));
        }
        let all_refs: Vec<Vec<f64>> = refs.iter().flat_map(|r| r.vectors().iter().cloned()).collect();
        for m in &cfg.embedding_metrics {
            let value = match m {
                EmbeddingMetric::ClipDomain => clip_domain_star(gen.vectors(), &all_refs)?,
                EmbeddingMetric::ClipSmooth => {
                    let per_ref: Vec<Vec<Vec<f64>>> = refs.iter().map(|r| r.vectors().to_vec()).collect();
                    clip_smooth_star(gen.vectors(), &per_ref, &cfg.sample_counts)?
                }
                EmbeddingMetric::Frechet => frechet_distance(
                    &FeatureStats::from_features(gen.vectors())?,
                    &FeatureStats::from_features(&all_refs)?,
                )?,
            };
            rows.push(Row {
                metric: metric_name(m),
                pair: name.clone(),
                value,
            });
        }
    }
    Ok(rows)
}

/// Mean per metric, keyed by metric name.
pub fn summarize(rows: &[Row]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(r.metric.clone()).or_default();
        e.0 += r.value;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

pub fn render_csv(rows: &[Row]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Config(format!("csv: {e}"));
    w.write_record(["metric", "pair", "value"]).map_err(err)?;
    for r in rows {
        w.write_record([r.metric.as_str(), r.pair.as_str(), &format!("{:e}", r.value)])
            .map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Config(format!("csv: {e}")))
}

pub fn compute(cfg: &MetricsConfig, resolve: impl Fn(&Path) -> PathBuf) -> CliResult<Vec<Row>> {
    if cfg.pairs.is_empty() && cfg.embedding_pairs.is_empty() {
        return Err(CliError::Config("metrics needs `pairs` or `embedding_pairs`".into()));
    }
    let mut rows = pose_rows(cfg, &resolve)?;
    rows.extend(embedding_rows(cfg, &resolve)?);
    Ok(rows)
}

pub fn run(config_path: &Path, overrides: &Overrides) -> CliResult<Value> {
    let loaded = config::load::<MetricsConfig>(config_path, overrides)?;
    let cfg = &loaded.config;
    let rows = compute(cfg, |p| loaded.resolve(p))?;
    let csv_path = loaded.resolve(&cfg.out_csv);
    let json_path = cfg
        .out_json
        .as_ref()
        .map(|p| loaded.resolve(p))
        .unwrap_or_else(|| csv_path.with_extension("json"));
    write_file(&csv_path, &render_csv(&rows)?)?;
    let means = summarize(&rows);
    let summary = json!({ "rows": rows.len(), "means": means });
    write_json(&json_path, &summary)?;
    Ok(json!({
        "command": "metrics",
        "csv": csv_path,
        "json": json_path,
        "rows": rows.len(),
        "means": means,
    }))
}
