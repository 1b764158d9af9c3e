//! Pose-accuracy metrics and embedding-similarity video metrics.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::diffmath::Array;
use crate::error::{Error, Result};
use crate::skeleton::{PoseSequence2D, PoseSequence3D, JOINT_COUNT};

/// Per-frame joint coordinates of either dimensionality.
pub trait JointSeries {
    fn frame_count(&self) -> usize;
    fn point(&self, t: usize, j: usize) -> &[f64];
    fn fps(&self) -> f64;
}

impl JointSeries for PoseSequence3D {
    fn frame_count(&self) -> usize {
        self.len()
    }

    fn point(&self, t: usize, j: usize) -> &[f64] {
        &self.frames()[t][j]
    }

    fn fps(&self) -> f64 {
        PoseSequence3D::fps(self)
    }
}

impl JointSeries for PoseSequence2D {
    fn frame_count(&self) -> usize {
        self.len()
    }

    fn point(&self, t: usize, j: usize) -> &[f64] {
        &self.frames()[t][j]
    }

    fn fps(&self) -> f64 {
        PoseSequence2D::fps(self)
    }
}

fn same_shape<S: JointSeries>(a: &S, b: &S) -> Result<()> {
    if a.frame_count() != b.frame_count() {
        return Err(Error::Shape(format!(
            "{} vs {} frames",
            a.frame_count(),
            b.frame_count()
        )));
    }
    Ok(())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean Euclidean joint error over frames and joints.
pub fn mpjpe<S: JointSeries>(pred: &S, truth: &S) -> Result<f64> {
    same_shape(pred, truth)?;
    let mut sum = 0.0;
    for t in 0..pred.frame_count() {
        for j in 0..JOINT_COUNT {
            sum += dist(pred.point(t, j), truth.point(t, j));
        }
    }
    Ok(sum / (pred.frame_count() * JOINT_COUNT) as f64)
}

/// MPJPE after rescaling `pred` by the least-squares scalar
/// `⟨pred, truth⟩ / ⟨pred, pred⟩`.
pub fn n_mpjpe<S: JointSeries>(pred: &S, truth: &S) -> Result<f64> {
    same_shape(pred, truth)?;
    let (mut cross, mut norm, mut truth_norm) = (0.0, 0.0, 0.0);
    for t in 0..pred.frame_count() {
        for j in 0..JOINT_COUNT {
            for (p, q) in pred.point(t, j).iter().zip(truth.point(t, j)) {
                cross += p * q;
                norm += p * p;
                truth_norm += q * q;
            }
        }
    }
    if truth_norm == 0.0 || norm == 0.0 {
        return Err(Error::Degenerate("N-MPJPE needs nonzero prediction and truth".into()));
    }
    let s = cross / norm;
    let mut sum = 0.0;
    for t in 0..pred.frame_count() {
        for j in 0..JOINT_COUNT {
            let e: f64 = pred
                .point(t, j)
                .iter()
                .zip(truth.point(t, j))
                .map(|(p, q)| (s * p - q).powi(2))
                .sum();
            sum += e.sqrt();
        }
    }
    Ok(sum / (pred.frame_count() * JOINT_COUNT) as f64)
}

/// MPJPE of first temporal differences, scaled by the frame rate.
pub fn mpjve<S: JointSeries>(pred: &S, truth: &S) -> Result<f64> {
    same_shape(pred, truth)?;
    let t_len = pred.frame_count();
    if t_len < 2 {
        return Err(Error::TooShort {
            required: 2,
            actual: t_len,
        });
    }
    let fps = pred.fps();
    let mut sum = 0.0;
    for t in 1..t_len {
        for j in 0..JOINT_COUNT {
            let e: f64 = (0..pred.point(t, j).len())
                .map(|c| {
                    let vp = pred.point(t, j)[c] - pred.point(t - 1, j)[c];
                    let vt = truth.point(t, j)[c] - truth.point(t - 1, j)[c];
                    (vp - vt).powi(2)
                })
                .sum();
            sum += e.sqrt();
        }
    }
    Ok(fps * sum / ((t_len - 1) * JOINT_COUNT) as f64)
}

/// Maps a frame (`H × W × 3` array, values in `[0, 1]`) to a unit vector.
pub trait Embedder {
    fn dim(&self) -> usize;
    fn embed_frame(&self, frame: &Array) -> Result<Vec<f64>>;
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Test backend: the flattened frame, ℓ2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentityEmbedder {
    pub height: usize,
    pub width: usize,
}

pub fn identity_embedder(height: usize, width: usize) -> IdentityEmbedder {
    IdentityEmbedder { height, width }
}

impl Embedder for IdentityEmbedder {
    fn dim(&self) -> usize {
        self.height * self.width * 3
    }

    fn embed_frame(&self, frame: &Array) -> Result<Vec<f64>> {
        if frame.shape() != [self.height, self.width, 3] {
            return Err(Error::Shape(format!(
                "expected {}x{}x3 frame, got {:?}",
                self.height,
                self.width,
                frame.shape()
            )));
        }
        if frame.data().iter().all(|v| *v == 0.0) {
            return Err(Error::Degenerate("all-zero frame has no direction".into()));
        }
        Ok(normalize(frame.data().to_vec()))
    }
}

/// Embeddings precomputed by an external backend, addressed by frame index.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingFile {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingSet {
    pub fn new(dim: usize, vectors: Vec<Vec<f64>>) -> Result<Self> {
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::Dim(format!(
                    "vector {i} has {} entries, expected {dim}",
                    v.len()
                )));
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::Value(format!("vector {i} has norm {n}, expected 1")));
            }
        }
        Ok(Self { dim, vectors })
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let file: EmbeddingFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::new(file.dim, file.vectors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?, path)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean cosine similarity over the full generated × reference grid.
pub fn clip_domain_star(gen: &[Vec<f64>], refs: &[Vec<f64>]) -> Result<f64> {
    if gen.is_empty() || refs.is_empty() {
        return Err(Error::EmptyInput("domain similarity needs frames on both sides".into()));
    }
    let mut sum = 0.0;
    for g in gen {
        for r in refs {
            sum += cosine(g, r);
        }
    }
    Ok(sum / (gen.len() * refs.len()) as f64)
}

/// [`clip_domain_star`] on raw frames through an embedder.
pub fn clip_domain_star_frames<E: Embedder>(gen: &[Array], refs: &[Array], emb: &E) -> Result<f64> {
    let g = gen.iter().map(|f| emb.embed_frame(f)).collect::<Result<Vec<_>>>()?;
    let r = refs.iter().map(|f| emb.embed_frame(f)).collect::<Result<Vec<_>>>()?;
    clip_domain_star(&g, &r)
}

pub const ALLOWED_SAMPLE_COUNTS: [usize; 5] = [1, 2, 4, 8, 16];

/// `round(linspace(0, len − 1, k))`.
pub fn uniform_indices(len: usize, k: usize) -> Vec<usize> {
    if k == 1 {
        return vec![0];
    }
    (0..k)
        .map(|i| (i as f64 * (len - 1) as f64 / (k - 1) as f64).round() as usize)
        .collect()
}

/// Multi-step temporal similarity: for each reference and each sample count
/// `K`, `K` aligned uniform samples are compared; the result is the mean
/// over every `(reference, K, k)` term.
pub fn clip_smooth_star(gen: &[Vec<f64>], refs: &[Vec<Vec<f64>>], sample_counts: &[usize]) -> Result<f64> {
    if refs.is_empty() || gen.is_empty() || sample_counts.is_empty() {
        return Err(Error::EmptyInput(
            "temporal similarity needs frames, references and sample counts".into(),
        ));
    }
    if let Some(k) = sample_counts.iter().find(|k| !ALLOWED_SAMPLE_COUNTS.contains(k)) {
        return Err(Error::Value(format!(
            "sample count {k} not in {ALLOWED_SAMPLE_COUNTS:?}"
        )));
    }
    let k_max = *sample_counts.iter().max().expect("nonempty");
    let shortest = refs.iter().map(Vec::len).min().expect("nonempty").min(gen.len());
    if shortest < k_max {
        return Err(Error::TooShort {
            required: k_max,
            actual: shortest,
        });
    }
    let mut sum = 0.0;
    let mut terms = 0usize;
    for r in refs {
        for &k in sample_counts {
            for (gi, ri) in uniform_indices(gen.len(), k)
                .into_iter()
                .zip(uniform_indices(r.len(), k))
            {
                sum += cosine(&gen[gi], &r[ri]);
                terms += 1;
            }
        }
    }
    Ok(sum / terms as f64)
}

pub fn clip_smooth_star_frames<E: Embedder>(
    gen: &[Array],
    refs: &[Vec<Array>],
    sample_counts: &[usize],
    emb: &E,
) -> Result<f64> {
    let g = gen.iter().map(|f| emb.embed_frame(f)).collect::<Result<Vec<_>>>()?;
    let r = refs
        .iter()
        .map(|v| v.iter().map(|f| emb.embed_frame(f)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    clip_smooth_star(&g, &r, sample_counts)
}

/// Gaussian fit of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub count: usize,
}

impl FeatureStats {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, count: usize) -> Result<Self> {
        let d = mean.len();
        if covariance.shape() != (d, d) {
            return Err(Error::Dim(format!(
                "covariance {:?} does not match mean length {d}",
                covariance.shape()
            )));
        }
        if (&covariance - covariance.transpose()).amax() > 1e-12 * (1.0 + covariance.amax()) {
            return Err(Error::Value("covariance is not symmetric".into()));
        }
        if d > 0 && covariance.clone().symmetric_eigen().eigenvalues.min() < -1e-10 {
            return Err(Error::Value("covariance is not positive semidefinite".into()));
        }
        Ok(Self {
            mean,
            covariance,
            count,
        })
    }

    /// Sample mean and unbiased covariance of feature rows.
    pub fn from_features(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::EmptyInput("need at least two feature rows".into()));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dim("feature rows differ in length".into()));
        }
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        let mean = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
        let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / (n - 1) as f64;
        let cov = (&cov + cov.transpose()) * 0.5;
        Self::new(mean, cov, n)
    }
}

/// `Tr(√A)` for symmetric PSD `A`, negative eigenvalues clamped at zero.
fn trace_sqrt_psd(a: DMatrix<f64>) -> f64 {
    a.symmetric_eigen().eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum()
}

fn sqrt_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let root = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// `‖μ − μ̃‖² + Tr(Σ + Σ̃ − 2 (Σ Σ̃)^{1/2})`.
///
/// `Tr (Σ Σ̃)^{1/2}` is evaluated as `Tr (Σ^{1/2} Σ̃ Σ^{1/2})^{1/2}`, which has
/// the same eigenvalues and stays symmetric.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::Dim(format!(
            "feature dims {} and {} differ",
            a.mean.len(),
            b.mean.len()
        )));
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let root_a = sqrt_psd(&a.covariance);
    let inner = &root_a * &b.covariance * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let d = diff + a.covariance.trace() + b.covariance.trace() - 2.0 * trace_sqrt_psd(inner);
    Ok(d.max(0.0))
}
