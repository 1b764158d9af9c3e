//! 2D → 3D lifting with in-context prompts.
//!
//! Every query token is a (frame, joint) pair carrying the observed 2D
//! position and the prior's 3D position. Prompt pairs are encoded token by
//! token and mean-pooled into one conditioning vector added to every query
//! token. Blocks alternate attention over the 17 joints of a frame and over
//! the frames of a joint. The network predicts a residual on the prior.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diffmath::linalg::gemm;
use crate::diffmath::{optimizer_step, Activation, AdamConfig, AdamState, Array, MlpParams, MlpTape, Parameterized};
use crate::error::{Error, Result};
use crate::projection::{loss_3d, loss_3d_grad};
use crate::rng;
use crate::skeleton::{
    parse_pose_sequence, pose_2d_to_json, pose_3d_to_json, root_center, FrameOfReference, Joints3, PoseKind,
    PoseSequence, PoseSequence2D, PoseSequence3D, JOINT_COUNT,
};

const J: usize = JOINT_COUNT;
const TOKEN_FEATURES: usize = 5;

/// Per-frame mean skeleton of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PosePrior {
    frames: Vec<Joints3>,
    source_count: usize,
}

impl PosePrior {
    pub fn new(frames: Vec<Joints3>, source_count: usize) -> Result<Self> {
        if source_count == 0 {
            return Err(Error::EmptyDataset);
        }
        if frames.is_empty() {
            return Err(Error::EmptyInput("prior without frames".into()));
        }
        if frames.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Value("prior contains non-finite values".into()));
        }
        if frames.iter().any(|f| f[0] != [0.0; 3]) {
            return Err(Error::Value("prior root joint must be zero".into()));
        }
        Ok(Self { frames, source_count })
    }

    pub fn frames(&self) -> &[Joints3] {
        &self.frames
    }

    pub fn source_count(&self) -> usize {
        self.source_count
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn to_sequence(&self, fps: f64) -> Result<PoseSequence3D> {
        PoseSequence3D::new(self.frames.clone(), fps, FrameOfReference::RootRelative)
    }
}

/// Mean of the root-centred sequences after linear resampling to `target_len`.
pub fn compute_pose_prior(dataset: &[PoseSequence3D], target_len: usize) -> Result<PosePrior> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sum = vec![[[0.0; 3]; J]; target_len];
    for seq in dataset {
        let seq = root_center(&seq.resample(target_len)?);
        for (acc, f) in sum.iter_mut().zip(seq.frames()) {
            for j in 0..J {
                for c in 0..3 {
                    acc[j][c] += f[j][c];
                }
            }
        }
    }
    let n = dataset.len() as f64;
    for f in &mut sum {
        for p in f.iter_mut() {
            for v in p.iter_mut() {
                *v /= n;
            }
        }
        // exact zero even where rounding of the centred inputs left -0.0
        f[0] = [0.0; 3];
    }
    PosePrior::new(sum, dataset.len())
}

/// Prompt pairs followed by the query and its prior.
#[derive(Debug, Clone, PartialEq)]
pub struct IclBatch {
    pub prompt_pairs: Vec<(PoseSequence2D, PoseSequence3D)>,
    pub query_2d: PoseSequence2D,
    pub query_prior: PosePrior,
}

fn root_centred(seq: &PoseSequence3D) -> PoseSequence3D {
    match seq.frame_of_reference() {
        FrameOfReference::RootRelative => seq.clone(),
        FrameOfReference::World => root_center(seq),
    }
}

/// Checks that every sequence shares the query's length; prompt 3D poses
/// are root-centred.
pub fn assemble_prompt(
    pairs: &[(PoseSequence2D, PoseSequence3D)],
    query: &PoseSequence2D,
    prior: &PosePrior,
) -> Result<IclBatch> {
    let t = query.len();
    if prior.len() != t {
        return Err(Error::Shape(format!("prior has {} frames, query has {t}", prior.len())));
    }
    for (k, (p2, p3)) in pairs.iter().enumerate() {
        if p2.len() != t || p3.len() != t {
            return Err(Error::Shape(format!(
                "prompt {k} has {}/{} frames, query has {t}",
                p2.len(),
                p3.len()
            )));
        }
    }
    Ok(IclBatch {
        prompt_pairs: pairs.iter().map(|(a, b)| (a.clone(), root_centred(b))).collect(),
        query_2d: query.clone(),
        query_prior: prior.clone(),
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorJson {
    frames: Vec<Joints3>,
    source_count: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BatchJson {
    prompts: Vec<[Value; 2]>,
    query: Value,
    prior: PriorJson,
}

fn parse_value(v: &Value, kind: PoseKind) -> Result<PoseSequence> {
    parse_pose_sequence(&v.to_string(), kind, Path::new("<batch>"))
}

fn pose_value(text: String) -> Value {
    serde_json::from_str(&text).expect("pose serializer emits valid JSON")
}

impl IclBatch {
    /// Number of `T`-frame token groups: one per prompt pair plus the query.
    pub fn token_groups(&self) -> usize {
        self.prompt_pairs.len() + 1
    }

    pub fn frames(&self) -> usize {
        self.query_2d.len()
    }

    pub fn to_json(&self) -> String {
        let doc = BatchJson {
            prompts: self
                .prompt_pairs
                .iter()
                .map(|(a, b)| [pose_value(pose_2d_to_json(a)), pose_value(pose_3d_to_json(b))])
                .collect(),
            query: pose_value(pose_2d_to_json(&self.query_2d)),
            prior: PriorJson {
                frames: self.query_prior.frames.clone(),
                source_count: self.query_prior.source_count,
            },
        };
        serde_json::to_string(&doc).expect("batch serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: BatchJson = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<batch>".into(),
            message: e.to_string(),
        })?;
        let two = |v: &Value| match parse_value(v, PoseKind::TwoD)? {
            PoseSequence::TwoD(s) => Ok(s),
            PoseSequence::ThreeD(_) => Err(Error::Schema("expected a 2D sequence".into())),
        };
        let three = |v: &Value| match parse_value(v, PoseKind::ThreeD)? {
            PoseSequence::ThreeD(s) => Ok(s),
            PoseSequence::TwoD(_) => Err(Error::Schema("expected a 3D sequence".into())),
        };
        let pairs = doc
            .prompts
            .iter()
            .map(|[a, b]| Ok((two(a)?, three(b)?)))
            .collect::<Result<Vec<_>>>()?;
        let prior = PosePrior::new(doc.prior.frames, doc.prior.source_count)?;
        assemble_prompt(&pairs, &two(&doc.query)?, &prior)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifterConfig {
    pub depth: usize,
    pub embed_dim: usize,
    pub heads: usize,
}

impl Default for LifterConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            embed_dim: 64,
            heads: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Attention across the joints of one frame.
    Spatial,
    /// Attention across the frames of one joint.
    Temporal,
}

/// Bias-free projections, each `[embed, embed]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Array,
    pub wk: Array,
    pub wv: Array,
    pub wo: Array,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifterBlock {
    pub kind: BlockKind,
    pub attention: AttentionParams,
    pub ffn: MlpParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifterParams {
    pub input_proj: MlpParams,
    pub prompt_encoder: MlpParams,
    /// `[17, embed]`.
    pub joint_embed: Array,
    pub blocks: Vec<LifterBlock>,
    /// Final projection to a 3D offset; zero at initialization.
    pub head: MlpParams,
    pub heads: usize,
}

fn glorot(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> Array {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect(),
    )
    .expect("sized above")
}

impl LifterParams {
    pub fn new(cfg: &LifterConfig, seed: u64) -> Result<Self> {
        if cfg.depth == 0 {
            return Err(Error::Config("lifter depth must be at least 1".into()));
        }
        if cfg.heads == 0 || cfg.embed_dim == 0 || cfg.embed_dim % cfg.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                cfg.embed_dim, cfg.heads
            )));
        }
        let e = cfg.embed_dim;
        let mut rng = rng::stream(seed, "lifter-init");
        let input_proj = MlpParams::new(&[TOKEN_FEATURES, e], Activation::Identity, &mut rng);
        let prompt_encoder = MlpParams::new(&[TOKEN_FEATURES, e, e], Activation::Tanh, &mut rng);
        let joint_embed = Array::new(
            vec![J, e],
            (0..J * e).map(|_| rand::Rng::gen_range(&mut rng, -0.1..=0.1)).collect(),
        )?;
        let blocks = (0..cfg.depth)
            .map(|b| LifterBlock {
                kind: if b % 2 == 0 {
                    BlockKind::Spatial
                } else {
                    BlockKind::Temporal
                },
                attention: AttentionParams {
                    wq: glorot(e, e, &mut rng),
                    wk: glorot(e, e, &mut rng),
                    wv: glorot(e, e, &mut rng),
                    wo: glorot(e, e, &mut rng),
                },
                ffn: MlpParams::new(&[e, 2 * e, e], Activation::Tanh, &mut rng),
            })
            .collect();
        let head = MlpParams::new(&[e, 3], Activation::Identity, &mut rng).with_zero_output();
        Ok(Self {
            input_proj,
            prompt_encoder,
            joint_embed,
            blocks,
            head,
            heads: cfg.heads,
        })
    }

    pub fn config(&self) -> LifterConfig {
        LifterConfig {
            depth: self.blocks.len(),
            embed_dim: self.embed_dim(),
            heads: self.heads,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.joint_embed.shape()[1]
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero_();
        z
    }
}

impl Parameterized for LifterParams {
    fn arrays(&self) -> Vec<&Array> {
        let mut out = self.input_proj.arrays();
        out.extend(self.prompt_encoder.arrays());
        out.push(&self.joint_embed);
        for b in &self.blocks {
            let a = &b.attention;
            out.extend([&a.wq, &a.wk, &a.wv, &a.wo]);
            out.extend(b.ffn.arrays());
        }
        out.extend(self.head.arrays());
        out
    }

    fn arrays_mut(&mut self) -> Vec<&mut Array> {
        let mut out = self.input_proj.arrays_mut();
        out.extend(self.prompt_encoder.arrays_mut());
        out.push(&mut self.joint_embed);
        for b in &mut self.blocks {
            let a = &mut b.attention;
            out.extend([&mut a.wq, &mut a.wk, &mut a.wv, &mut a.wo]);
            out.extend(b.ffn.arrays_mut());
        }
        out.extend(self.head.arrays_mut());
        out
    }
}

/// Sinusoidal encoding of frame index `t`.
fn positional(t: usize, e: usize) -> Vec<f64> {
    (0..e)
        .map(|i| {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / e as f64);
            let angle = t as f64 / rate;
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Rows `(t, j)` ↔ `(j, t)`.
fn transpose_tokens(x: &[f64], outer: usize, inner: usize, e: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for a in 0..outer {
        for b in 0..inner {
            out[(b * outer + a) * e..(b * outer + a + 1) * e]
                .copy_from_slice(&x[(a * inner + b) * e..(a * inner + b + 1) * e]);
        }
    }
    out
}

struct AttentionTape {
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Softmax weights per (group, head), each `n × n`.
    probs: Vec<f64>,
    o: Vec<f64>,
}

/// Multi-head self-attention within contiguous groups of `n` rows.
fn attention_forward(p: &AttentionParams, x: &[f64], n: usize, heads: usize) -> (Vec<f64>, AttentionTape) {
    let e = p.wq.shape()[0];
    let rows = x.len() / e;
    let groups = rows / n;
    let dh = e / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let project = |w: &Array| {
        let mut out = vec![0.0; rows * e];
        gemm(rows, e, e, x, false, w.data(), true, &mut out, false);
        out
    };
    let (q, k, v) = (project(&p.wq), project(&p.wk), project(&p.wv));
    let mut probs = vec![0.0; groups * heads * n * n];
    let mut o = vec![0.0; rows * e];
    for g in 0..groups {
        for h in 0..heads {
            let a = &mut probs[(g * heads + h) * n * n..(g * heads + h + 1) * n * n];
            for r in 0..n {
                let qr = &q[(g * n + r) * e + h * dh..(g * n + r) * e + (h + 1) * dh];
                let row = &mut a[r * n..(r + 1) * n];
                for (c, s) in row.iter_mut().enumerate() {
                    let kc = &k[(g * n + c) * e + h * dh..(g * n + c) * e + (h + 1) * dh];
                    *s = scale * qr.iter().zip(kc).map(|(x, y)| x * y).sum::<f64>();
                }
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - mx).exp();
                    z += *s;
                }
                row.iter_mut().for_each(|s| *s /= z);
                let out = &mut o[(g * n + r) * e + h * dh..(g * n + r) * e + (h + 1) * dh];
                for (c, w) in row.iter().enumerate() {
                    let vc = &v[(g * n + c) * e + h * dh..(g * n + c) * e + (h + 1) * dh];
                    out.iter_mut().zip(vc).for_each(|(a, b)| *a += w * b);
                }
            }
        }
    }
    let mut y = vec![0.0; rows * e];
    gemm(rows, e, e, &o, false, p.wo.data(), true, &mut y, false);
    (
        y,
        AttentionTape {
            x: x.to_vec(),
            q,
            k,
            v,
            probs,
            o,
        },
    )
}

fn attention_backward(
    p: &AttentionParams,
    tape: &AttentionTape,
    dy: &[f64],
    n: usize,
    heads: usize,
    grads: &mut AttentionParams,
) -> Vec<f64> {
    let e = p.wq.shape()[0];
    let rows = dy.len() / e;
    let groups = rows / n;
    let dh = e / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    gemm(e, rows, e, dy, true, &tape.o, false, grads.wo.data_mut(), true);
    let mut d_o = vec![0.0; rows * e];
    gemm(rows, e, e, dy, false, p.wo.data(), false, &mut d_o, false);
    let (mut dq, mut dk, mut dv) = (vec![0.0; rows * e], vec![0.0; rows * e], vec![0.0; rows * e]);
    let mut da = vec![0.0; n];
    for g in 0..groups {
        for h in 0..heads {
            let a = &tape.probs[(g * heads + h) * n * n..(g * heads + h + 1) * n * n];
            let span = |r: usize| (g * n + r) * e + h * dh..(g * n + r) * e + (h + 1) * dh;
            for r in 0..n {
                let dor = &d_o[span(r)];
                let arow = &a[r * n..(r + 1) * n];
                for c in 0..n {
                    let vc = &tape.v[span(c)];
                    da[c] = dor.iter().zip(vc).map(|(x, y)| x * y).sum();
                    let w = arow[c];
                    dv[span(c)].iter_mut().zip(dor).for_each(|(d, g)| *d += w * g);
                }
                let dot: f64 = da.iter().zip(arow).map(|(x, y)| x * y).sum();
                for c in 0..n {
                    let ds = arow[c] * (da[c] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let (kc, qr) = (span(c), span(r));
                    for d in 0..dh {
                        dq[qr.start + d] += ds * tape.k[kc.start + d];
                        dk[kc.start + d] += ds * tape.q[qr.start + d];
                    }
                }
            }
        }
    }
    let mut dx = vec![0.0; rows * e];
    for (dm, w, gw) in [
        (&dq, &p.wq, &mut grads.wq),
        (&dk, &p.wk, &mut grads.wk),
        (&dv, &p.wv, &mut grads.wv),
    ] {
        gemm(e, rows, e, dm, true, &tape.x, false, gw.data_mut(), true);
        gemm(rows, e, e, dm, false, w.data(), false, &mut dx, true);
    }
    dx
}

struct BlockTape {
    attention: AttentionTape,
    ffn: MlpTape,
}

/// Recorded forward pass of [`lift`].
pub struct LiftTape {
    t_len: usize,
    input: MlpTape,
    prompt: Option<MlpTape>,
    blocks: Vec<BlockTape>,
    head: MlpTape,
    output: PoseSequence3D,
}

impl LiftTape {
    pub fn output(&self) -> &PoseSequence3D {
        &self.output
    }
}

fn token_features_2d3d(p2: &PoseSequence2D, p3: &[Joints3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(p2.len() * J * TOKEN_FEATURES);
    for (f2, f3) in p2.frames().iter().zip(p3) {
        for j in 0..J {
            out.extend_from_slice(&[f2[j][0], f2[j][1], f3[j][0], f3[j][1], f3[j][2]]);
        }
    }
    out
}

fn check_batch(batch: &IclBatch, params: &LifterParams) -> Result<()> {
    let t = batch.query_2d.len();
    if t == 0 {
        return Err(Error::EmptyInput("query without frames".into()));
    }
    if batch.query_prior.len() != t || batch.prompt_pairs.iter().any(|(a, b)| a.len() != t || b.len() != t) {
        return Err(Error::Shape("batch sequences differ in length".into()));
    }
    if params.embed_dim() % params.heads != 0 {
        return Err(Error::Shape("embed_dim not divisible by heads".into()));
    }
    Ok(())
}

pub fn lift_with_tape(batch: &IclBatch, params: &LifterParams) -> Result<LiftTape> {
    check_batch(batch, params)?;
    let t_len = batch.query_2d.len();
    let e = params.embed_dim();
    let rows = t_len * J;
    let input = params
        .input_proj
        .forward_rows(&token_features_2d3d(&batch.query_2d, batch.query_prior.frames()), rows);
    let (prompt, cond) = if batch.prompt_pairs.is_empty() {
        (None, vec![0.0; e])
    } else {
        let feats: Vec<f64> = batch
            .prompt_pairs
            .iter()
            .flat_map(|(a, b)| token_features_2d3d(a, b.frames()))
            .collect();
        let n = feats.len() / TOKEN_FEATURES;
        let tape = params.prompt_encoder.forward_rows(&feats, n);
        let mut cond = vec![0.0; e];
        for row in tape.output().chunks_exact(e) {
            cond.iter_mut().zip(row).for_each(|(c, v)| *c += v);
        }
        cond.iter_mut().for_each(|c| *c /= n as f64);
        (Some(tape), cond)
    };
    let mut h = input.output().to_vec();
    for t in 0..t_len {
        let pe = positional(t, e);
        for j in 0..J {
            let row = &mut h[(t * J + j) * e..(t * J + j + 1) * e];
            let je = &params.joint_embed.data()[j * e..(j + 1) * e];
            for i in 0..e {
                row[i] += je[i] + pe[i] + cond[i];
            }
        }
    }
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (x, n) = match block.kind {
            BlockKind::Spatial => (h, J),
            BlockKind::Temporal => (transpose_tokens(&h, t_len, J, e), t_len),
        };
        let (att, attention) = attention_forward(&block.attention, &x, n, params.heads);
        let h1: Vec<f64> = x.iter().zip(&att).map(|(a, b)| a + b).collect();
        let ffn = block.ffn.forward_rows(&h1, rows);
        let h2: Vec<f64> = h1.iter().zip(ffn.output()).map(|(a, b)| a + b).collect();
        h = match block.kind {
            BlockKind::Spatial => h2,
            BlockKind::Temporal => transpose_tokens(&h2, J, t_len, e),
        };
        blocks.push(BlockTape { attention, ffn });
    }
    let head = params.head.forward_rows(&h, rows);
    let offsets = head.output();
    let frames: Vec<Joints3> = batch
        .query_prior
        .frames()
        .iter()
        .enumerate()
        .map(|(t, prior)| {
            let raw: Joints3 =
                std::array::from_fn(|j| std::array::from_fn(|c| prior[j][c] + offsets[(t * J + j) * 3 + c]));
            std::array::from_fn(|j| {
                if j == 0 {
                    [0.0; 3]
                } else {
                    std::array::from_fn(|c| raw[j][c] - raw[0][c])
                }
            })
        })
        .collect();
    if frames.iter().flatten().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Value("lifter produced non-finite values".into()));
    }
    let output = PoseSequence3D::new(frames, batch.query_2d.fps(), FrameOfReference::RootRelative)?;
    Ok(LiftTape {
        t_len,
        input,
        prompt,
        blocks,
        head,
        output,
    })
}

/// Root-relative 3D estimate for the query.
pub fn lift(batch: &IclBatch, params: &LifterParams) -> Result<PoseSequence3D> {
    Ok(lift_with_tape(batch, params)?.output)
}

/// Parameter gradients given `∂L/∂output` per frame and joint.
pub fn lift_backward(params: &LifterParams, tape: &LiftTape, d_output: &[Joints3]) -> Result<LifterParams> {
    let t_len = tape.t_len;
    if d_output.len() != t_len {
        return Err(Error::Length {
            expected: t_len,
            actual: d_output.len(),
        });
    }
    let e = params.embed_dim();
    let rows = t_len * J;
    let mut grads = params.zeros_like();
    let mut d_raw = vec![0.0; rows * 3];
    for (t, g) in d_output.iter().enumerate() {
        for j in 1..J {
            for c in 0..3 {
                d_raw[(t * J + j) * 3 + c] += g[j][c];
                d_raw[(t * J) * 3 + c] -= g[j][c];
            }
        }
    }
    let mut dh = params.head.backward_rows(&tape.head, &d_raw, &mut grads.head);
    for ((block, bt), gb) in params
        .blocks
        .iter()
        .zip(&tape.blocks)
        .zip(grads.blocks.iter_mut())
        .rev()
    {
        let n = match block.kind {
            BlockKind::Spatial => J,
            BlockKind::Temporal => t_len,
        };
        let d2 = match block.kind {
            BlockKind::Spatial => dh,
            BlockKind::Temporal => transpose_tokens(&dh, t_len, J, e),
        };
        let mut d1 = block.ffn.backward_rows(&bt.ffn, &d2, &mut gb.ffn);
        d1.iter_mut().zip(&d2).for_each(|(a, b)| *a += b);
        let mut dx = attention_backward(&block.attention, &bt.attention, &d1, n, params.heads, &mut gb.attention);
        dx.iter_mut().zip(&d1).for_each(|(a, b)| *a += b);
        dh = match block.kind {
            BlockKind::Spatial => dx,
            BlockKind::Temporal => transpose_tokens(&dx, J, t_len, e),
        };
    }
    let mut d_cond = vec![0.0; e];
    for (r, row) in dh.chunks_exact(e).enumerate() {
        let j = r % J;
        let gj = &mut grads.joint_embed.data_mut()[j * e..(j + 1) * e];
        for i in 0..e {
            gj[i] += row[i];
            d_cond[i] += row[i];
        }
    }
    params.input_proj.backward_rows(&tape.input, &dh, &mut grads.input_proj);
    if let Some(pt) = &tape.prompt {
        let n = pt.rows();
        let up: Vec<f64> = (0..n).flat_map(|_| d_cond.iter().map(move |v| v / n as f64)).collect();
        params.prompt_encoder.backward_rows(pt, &up, &mut grads.prompt_encoder);
    }
    Ok(grads)
}

/// A 2D observation and its 3D ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LifterExample {
    pub pose_2d: PoseSequence2D,
    pub pose_3d: PoseSequence3D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifterTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub prompt_pairs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for LifterTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            prompt_pairs: 2,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// `count` prompt pairs drawn without replacement from `pool`, skipping
/// index `exclude`.
pub fn pick_prompts(
    pool: &[LifterExample],
    count: usize,
    exclude: Option<usize>,
    rng: &mut impl rand::Rng,
) -> Vec<(PoseSequence2D, PoseSequence3D)> {
    let mut idx: Vec<usize> = (0..pool.len()).filter(|&i| Some(i) != exclude).collect();
    idx.shuffle(rng);
    idx.into_iter()
        .take(count)
        .map(|i| (pool[i].pose_2d.clone(), pool[i].pose_3d.clone()))
        .collect()
}

fn example_loss(
    params: &LifterParams,
    ex: &LifterExample,
    prompts: &[(PoseSequence2D, PoseSequence3D)],
    prior: &PosePrior,
) -> Result<(f64, LiftTape, Vec<Joints3>)> {
    let batch = assemble_prompt(prompts, &ex.pose_2d, prior)?;
    let tape = lift_with_tape(&batch, params)?;
    let truth = root_centred(&ex.pose_3d);
    let loss = loss_3d(tape.output(), &truth, &[])?;
    let grad = loss_3d_grad(tape.output(), &truth)?;
    Ok((loss, tape, grad))
}

/// Mean 3D loss with prompts drawn from `pool` under a fixed seed.
pub fn evaluate_lifter(
    params: &LifterParams,
    data: &[LifterExample],
    pool: &[LifterExample],
    prior: &PosePrior,
    prompt_pairs: usize,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = rng::stream(seed, "lifter-eval-prompts");
    let mut sum = 0.0;
    for ex in data {
        let prompts = pick_prompts(pool, prompt_pairs, None, &mut rng);
        sum += example_loss(params, ex, &prompts, prior)?.0;
    }
    Ok(sum / data.len() as f64)
}

/// Mini-batch AdamW on the 3D loss. Each example is paired with prompts
/// drawn from the other training examples. Returns the trained parameters
/// and the mean batch loss per step.
pub fn train_lifter(
    init: LifterParams,
    data: &[LifterExample],
    prior: &PosePrior,
    cfg: &LifterTrainConfig,
) -> Result<(LifterParams, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut params = init;
    let mut state = AdamState::new(&params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = rng::stream(cfg.seed, "lifter-train");
    let mut curve = Vec::new();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = params.zeros_like();
            let mut loss = 0.0;
            for &i in chunk {
                let prompts = pick_prompts(data, cfg.prompt_pairs, Some(i), &mut rng);
                let (l, tape, g) = example_loss(&params, &data[i], &prompts, prior)?;
                grads.add_assign_params(&lift_backward(&params, &tape, &g)?);
                loss += l;
            }
            let n = chunk.len() as f64;
            grads.scale_params(1.0 / n);
            optimizer_step(&mut params, &grads, &mut state, cfg.adam.lr, cfg.adam.weight_decay)?;
            curve.push(loss / n);
        }
    }
    Ok((params, curve))
}
