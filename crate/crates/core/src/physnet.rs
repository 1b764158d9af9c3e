//! Learned Euler-Lagrange re-estimation of 3D pose sequences.
//!
//! Each frame is encoded to a 51-dim state, per-frame heads predict forces,
//! constraint terms, a packed inverse inertia matrix and a noise mean, and
//! the resulting accelerations are stepped with the central difference in
//! both temporal directions. The two passes are averaged and decoded.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffmath::{optimizer_step, Activation, AdamConfig, AdamState, Array, MlpParams, MlpTape, Parameterized};
use crate::error::{Error, Result};
use crate::projection::{fit_camera, loss_2d, loss_2d_grad, loss_3d, loss_3d_grad, loss_noise_grad};
use crate::rng;
use crate::skeleton::{
    flatten_states, unflatten_rows, Joints3, PoseSequence2D, PoseSequence3D, StateVector, STATE_DIM,
};

const D: usize = STATE_DIM;
/// Entries of the upper triangle of a 51×51 matrix.
pub const PACKED_LEN: usize = STATE_DIM * (STATE_DIM + 1) / 2;
/// Shortest sequence for which some frame receives both directions.
pub const MIN_FRAMES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    Sample,
    MeanOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

/// Per-frame dynamics estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ElParameters {
    pub forces: StateVector,
    pub constraints: StateVector,
    /// Upper triangle of the inverse inertia matrix, row-major over `i ≤ j`.
    pub minv_packed: Vec<f64>,
    pub noise_mean: StateVector,
}

fn check_packed_len(len: usize, n: usize) -> Result<()> {
    let expected = n * (n + 1) / 2;
    if len != expected {
        return Err(Error::Length { expected, actual: len });
    }
    Ok(())
}

/// Expands a row-major upper triangle into a symmetric `n × n` matrix.
pub fn symmetrize(packed: &[f64], n: usize) -> Result<Array> {
    check_packed_len(packed.len(), n)?;
    let mut out = vec![0.0; n * n];
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            out[i * n + j] = packed[k];
            out[j * n + i] = packed[k];
            k += 1;
        }
    }
    Array::new(vec![n, n], out)
}

/// Reads the upper triangle of a square matrix row by row.
pub fn pack_upper(m: &Array) -> Result<Vec<f64>> {
    let n = match m.shape() {
        [a, b] if a == b => *a,
        s => return Err(Error::Shape(format!("expected a square matrix, got {s:?}"))),
    };
    Ok((0..n)
        .flat_map(|i| (i..n).map(move |j| (i, j)))
        .map(|(i, j)| m.at(i, j))
        .collect())
}

fn noise_matrix(mean: &StateVector, mode: NoiseMode, rng: &mut impl Rng) -> Array {
    let mut out = vec![0.0; D * D];
    for i in 0..D {
        for k in 0..D {
            out[i * D + k] = mean.0[i];
        }
    }
    if mode == NoiseMode::Sample {
        // column-major draw order: column k is mean + z_k
        for k in 0..D {
            for i in 0..D {
                let z: f64 = rng.sample(StandardNormal);
                out[i * D + k] += z;
            }
        }
    }
    Array::new(vec![D, D], out).expect("sized above")
}

/// A 51×51 matrix whose every column is `noise_mean`, plus a unit Gaussian
/// draw per entry in sample mode.
pub fn sample_noise(noise_mean: &StateVector, mode: NoiseMode, rng_seed: u64) -> Array {
    noise_matrix(noise_mean, mode, &mut rng::stream(rng_seed, "physnet-noise"))
}

/// `(minv + noise) · (forces − constraints)`.
pub fn acceleration(
    minv: &Array,
    noise: &Array,
    forces: &StateVector,
    constraints: &StateVector,
) -> Result<StateVector> {
    for (name, m) in [("minv", minv), ("noise", noise)] {
        if m.shape() != [D, D] {
            return Err(Error::Shape(format!("{name} must be {D}x{D}, got {:?}", m.shape())));
        }
    }
    let mut out = [0.0; D];
    for (i, o) in out.iter_mut().enumerate() {
        let (mr, nr) = (&minv.data()[i * D..(i + 1) * D], &noise.data()[i * D..(i + 1) * D]);
        *o = (0..D).map(|k| (mr[k] + nr[k]) * (forces.0[k] - constraints.0[k])).sum();
    }
    Ok(StateVector(out))
}

/// `accel·dt² + 2·q_t − q_prev`.
pub fn central_difference_step(q_t: &StateVector, q_prev: &StateVector, accel: &StateVector, dt: f64) -> StateVector {
    let dt2 = dt * dt;
    StateVector(std::array::from_fn(|i| accel.0[i] * dt2 + 2.0 * q_t.0[i] - q_prev.0[i]))
}

/// Elementwise mean of two sequences.
pub fn fuse_poses(s_dd: &PoseSequence3D, s_pp: &PoseSequence3D) -> Result<PoseSequence3D> {
    if s_dd.len() != s_pp.len() {
        return Err(Error::Shape(format!("{} vs {} frames", s_dd.len(), s_pp.len())));
    }
    let frames: Vec<Joints3> = s_dd
        .frames()
        .iter()
        .zip(s_pp.frames())
        .map(|(a, b)| std::array::from_fn(|j| std::array::from_fn(|c| (a[j][c] + b[j][c]) / 2.0)))
        .collect();
    PoseSequence3D::infer(frames, s_dd.fps())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysNetConfig {
    pub hidden: usize,
    pub decoder_hidden: usize,
    pub dt: f64,
    pub noise_mode: NoiseMode,
    /// Use one local encoder for both directions.
    pub shared_local: bool,
}

impl Default for PhysNetConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            decoder_hidden: 256,
            dt: 1.0 / 30.0,
            noise_mode: NoiseMode::MeanOnly,
            shared_local: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysNetParams {
    /// `[q_t, temporal mean] → 51`, applied per frame.
    pub global_encoder: MlpParams,
    /// Three-frame window `→ 51`, added to the newest frame.
    pub local_encoder: MlpParams,
    pub local_encoder_reverse: Option<MlpParams>,
    pub head_j: MlpParams,
    pub head_c: MlpParams,
    pub head_m: MlpParams,
    pub head_n: MlpParams,
    /// Residual decoder: `q + mlp(q)`.
    pub pose_decoder: MlpParams,
    pub dt: f64,
    pub noise_mode: NoiseMode,
}

/// Hidden layer widths of every network, for the checkpoint sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysNetWidths {
    pub encoder: usize,
    pub heads: usize,
    pub decoder: usize,
    pub shared_local: bool,
}

impl PhysNetParams {
    pub fn new(cfg: &PhysNetConfig, seed: u64) -> Result<Self> {
        if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", cfg.dt)));
        }
        if cfg.hidden == 0 || cfg.decoder_hidden == 0 {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        let mut rng = rng::stream(seed, "physnet-init");
        let h = cfg.hidden;
        let tanh = Activation::Tanh;
        let global_encoder = MlpParams::new(&[2 * D, h, D], tanh, &mut rng).with_zero_output();
        let local_encoder = MlpParams::new(&[3 * D, h, D], tanh, &mut rng).with_zero_output();
        let local_encoder_reverse =
            (!cfg.shared_local).then(|| MlpParams::new(&[3 * D, h, D], tanh, &mut rng).with_zero_output());
        let head_j = MlpParams::new(&[D, h, D], tanh, &mut rng).with_zero_output();
        let head_c = MlpParams::new(&[D, h, D], tanh, &mut rng).with_zero_output();
        // a zero inertia head would leave the force heads without gradient
        let head_m = MlpParams::new(&[D, h, PACKED_LEN], tanh, &mut rng);
        let head_n = MlpParams::new(&[D, h, D], tanh, &mut rng).with_zero_output();
        let pose_decoder = MlpParams::new(&[D, cfg.decoder_hidden, D], tanh, &mut rng).with_zero_output();
        Ok(Self {
            global_encoder,
            local_encoder,
            local_encoder_reverse,
            head_j,
            head_c,
            head_m,
            head_n,
            pose_decoder,
            dt: cfg.dt,
            noise_mode: cfg.noise_mode,
        })
    }

    pub fn widths(&self) -> PhysNetWidths {
        PhysNetWidths {
            encoder: self.global_encoder.hidden_widths()[0],
            heads: self.head_j.hidden_widths()[0],
            decoder: self.pose_decoder.hidden_widths()[0],
            shared_local: self.local_encoder_reverse.is_none(),
        }
    }

    /// Architecture described by a sidecar, with placeholder weights.
    pub fn from_widths(widths: &PhysNetWidths, dt: f64, noise_mode: NoiseMode) -> Result<Self> {
        if widths.encoder != widths.heads {
            return Err(Error::Checkpoint(format!(
                "encoder width {} and head width {} must match",
                widths.encoder, widths.heads
            )));
        }
        Self::new(
            &PhysNetConfig {
                hidden: widths.heads,
                decoder_hidden: widths.decoder,
                dt,
                noise_mode,
                shared_local: widths.shared_local,
            },
            0,
        )
    }

    fn local_for(&self, direction: Direction) -> &MlpParams {
        match (direction, &self.local_encoder_reverse) {
            (Direction::Reverse, Some(rev)) => rev,
            _ => &self.local_encoder,
        }
    }

    /// Head outputs for a single encoded state.
    pub fn el_parameters(&self, q: &StateVector) -> ElParameters {
        ElParameters {
            forces: StateVector::from_slice(&self.head_j.forward_one(&q.0)).expect("head width"),
            constraints: StateVector::from_slice(&self.head_c.forward_one(&q.0)).expect("head width"),
            minv_packed: self.head_m.forward_one(&q.0),
            noise_mean: StateVector::from_slice(&self.head_n.forward_one(&q.0)).expect("head width"),
        }
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero_();
        z
    }
}

impl Parameterized for PhysNetParams {
    fn arrays(&self) -> Vec<&Array> {
        let mut out = self.global_encoder.arrays();
        out.extend(self.local_encoder.arrays());
        if let Some(rev) = &self.local_encoder_reverse {
            out.extend(rev.arrays());
        }
        for m in [
            &self.head_j,
            &self.head_c,
            &self.head_m,
            &self.head_n,
            &self.pose_decoder,
        ] {
            out.extend(m.arrays());
        }
        out
    }

    fn arrays_mut(&mut self) -> Vec<&mut Array> {
        let mut out = self.global_encoder.arrays_mut();
        out.extend(self.local_encoder.arrays_mut());
        if let Some(rev) = &mut self.local_encoder_reverse {
            out.extend(rev.arrays_mut());
        }
        for m in [
            &mut self.head_j,
            &mut self.head_c,
            &mut self.head_m,
            &mut self.head_n,
            &mut self.pose_decoder,
        ] {
            out.extend(m.arrays_mut());
        }
        out
    }
}

fn clamped_windows(x: &[f64], t_len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(t_len * 3 * D);
    for t in 0..t_len {
        for k in [t.saturating_sub(2), t.saturating_sub(1), t] {
            out.extend_from_slice(&x[k * D..(k + 1) * D]);
        }
    }
    out
}

fn global_inputs(x: &[f64], t_len: usize) -> Vec<f64> {
    let mut mean = [0.0; D];
    for row in x.chunks_exact(D) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= t_len as f64);
    let mut out = Vec::with_capacity(t_len * 2 * D);
    for row in x.chunks_exact(D) {
        out.extend_from_slice(row);
        out.extend_from_slice(&mean);
    }
    out
}

fn reverse_rows(x: &[f64]) -> Vec<f64> {
    x.chunks_exact(D).rev().flatten().copied().collect()
}

fn check_len(t_len: usize, required: usize) -> Result<()> {
    if t_len < required {
        return Err(Error::TooShort {
            required,
            actual: t_len,
        });
    }
    Ok(())
}

/// Encoded states `q_t` for `t = 2..T` in the direction's own time order
/// (reverse states are listed from the last frame backwards).
pub fn encode_states(
    seq_dd: &PoseSequence3D,
    params: &PhysNetParams,
    direction: Direction,
) -> Result<Vec<StateVector>> {
    let t_len = seq_dd.len();
    check_len(t_len, 3)?;
    let x: Vec<f64> = flatten_states(seq_dd).iter().flat_map(|s| s.0).collect();
    let global = params
        .global_encoder
        .forward_rows(&global_inputs(&x, t_len), t_len)
        .into_output();
    let (x, global) = match direction {
        Direction::Forward => (x, global),
        Direction::Reverse => (reverse_rows(&x), reverse_rows(&global)),
    };
    let local = params
        .local_for(direction)
        .forward_rows(&clamped_windows(&x, t_len), t_len);
    let q = combine_states(&x, &global, local.output());
    Ok(q.chunks_exact(D)
        .skip(2)
        .map(|r| StateVector::from_slice(r).expect("row width"))
        .collect())
}

fn combine_states(x: &[f64], global: &[f64], local: &[f64]) -> Vec<f64> {
    x.iter().zip(global).zip(local).map(|((a, b), c)| a + b + c).collect()
}

/// Recorded forward pass of one direction.
struct DirectionTape {
    local: MlpTape,
    /// Encoded states, all `T` rows, in this direction's time order.
    q: Vec<f64>,
    heads: [MlpTape; 4],
    /// `forces − constraints` per stepped row.
    u: Vec<f64>,
    /// Per-row Gaussian perturbation of the noise matrix (sample mode only).
    z: Option<Vec<f64>>,
    /// `q̂_{s+1}` for `s = 2..=T−4`.
    pred: Vec<f64>,
}

/// Everything [`reestimate_backward`] needs.
pub struct ReestimateTape {
    t_len: usize,
    fps: f64,
    global: MlpTape,
    passes: [DirectionTape; 2],
    decoder: MlpTape,
    output: PoseSequence3D,
}

impl ReestimateTape {
    pub fn output(&self) -> &PoseSequence3D {
        &self.output
    }

    /// Noise-head means of every stepped frame, forward pass first.
    pub fn noise_means(&self) -> Vec<StateVector> {
        self.passes
            .iter()
            .flat_map(|p| p.heads[3].output().chunks_exact(D))
            .map(|r| StateVector::from_slice(r).expect("row width"))
            .collect()
    }
}

const HEAD_J: usize = 0;
const HEAD_C: usize = 1;
const HEAD_M: usize = 2;
const HEAD_N: usize = 3;

fn run_direction(
    params: &PhysNetParams,
    direction: Direction,
    x: &[f64],
    global: &[f64],
    t_len: usize,
    rng: &mut impl Rng,
) -> DirectionTape {
    let local = params
        .local_for(direction)
        .forward_rows(&clamped_windows(x, t_len), t_len);
    let q = combine_states(x, global, local.output());
    let rows = t_len - 5;
    let head_in = &q[2 * D..(t_len - 3) * D];
    let heads = [
        params.head_j.forward_rows(head_in, rows),
        params.head_c.forward_rows(head_in, rows),
        params.head_m.forward_rows(head_in, rows),
        params.head_n.forward_rows(head_in, rows),
    ];
    let u: Vec<f64> = heads[HEAD_J]
        .output()
        .iter()
        .zip(heads[HEAD_C].output())
        .map(|(j, c)| j - c)
        .collect();
    let z = (params.noise_mode == NoiseMode::Sample).then(|| {
        let zero = StateVector::zeros();
        (0..rows)
            .flat_map(|_| noise_matrix(&zero, NoiseMode::Sample, rng).into_data())
            .collect::<Vec<f64>>()
    });
    let dt2 = params.dt * params.dt;
    let mut pred = vec![0.0; rows * D];
    for r in 0..rows {
        let s = r + 2;
        let a = row_acceleration(&heads, &u, z.as_deref(), r);
        for i in 0..D {
            pred[r * D + i] = a[i] * dt2 + 2.0 * q[s * D + i] - q[(s - 1) * D + i];
        }
    }
    DirectionTape {
        local,
        q,
        heads,
        u,
        z,
        pred,
    }
}

fn row_acceleration(heads: &[MlpTape; 4], u: &[f64], z: Option<&[f64]>, r: usize) -> [f64; D] {
    let p = &heads[HEAD_M].output()[r * PACKED_LEN..(r + 1) * PACKED_LEN];
    let m = &heads[HEAD_N].output()[r * D..(r + 1) * D];
    let u = &u[r * D..(r + 1) * D];
    let usum: f64 = u.iter().sum();
    let mut a = [0.0; D];
    for (i, ai) in a.iter_mut().enumerate() {
        *ai = m[i] * usum;
    }
    let mut k = 0;
    for i in 0..D {
        a[i] += p[k] * u[i];
        k += 1;
        for j in i + 1..D {
            a[i] += p[k] * u[j];
            a[j] += p[k] * u[i];
            k += 1;
        }
    }
    if let Some(z) = z {
        let zr = &z[r * D * D..(r + 1) * D * D];
        for (i, ai) in a.iter_mut().enumerate() {
            *ai += (0..D).map(|k| zr[i * D + k] * u[k]).sum::<f64>();
        }
    }
    a
}

/// Which direction reached original frame `t`: `(forward row, reverse row)`.
fn sources(t: usize, t_len: usize) -> (Option<usize>, Option<usize>) {
    let fwd = (3..=t_len - 3).contains(&t).then(|| t - 3);
    let rev = (2..=t_len - 4).contains(&t).then(|| t_len - 4 - t);
    (fwd, rev)
}

/// Bidirectional physics re-estimate, recording a tape for gradients.
pub fn reestimate_with_tape(seq_dd: &PoseSequence3D, params: &PhysNetParams, rng_seed: u64) -> Result<ReestimateTape> {
    let t_len = seq_dd.len();
    check_len(t_len, MIN_FRAMES)?;
    let mut rng = rng::stream(rng_seed, "physnet-noise");
    let x: Vec<f64> = flatten_states(seq_dd).iter().flat_map(|s| s.0).collect();
    let global = params.global_encoder.forward_rows(&global_inputs(&x, t_len), t_len);
    let fwd = run_direction(params, Direction::Forward, &x, global.output(), t_len, &mut rng);
    let rev = run_direction(
        params,
        Direction::Reverse,
        &reverse_rows(&x),
        &reverse_rows(global.output()),
        t_len,
        &mut rng,
    );

    let n_dec = t_len - 4;
    let mut qhat = vec![0.0; n_dec * D];
    for t in 2..=t_len - 3 {
        let dst = &mut qhat[(t - 2) * D..(t - 1) * D];
        match sources(t, t_len) {
            (Some(f), Some(r)) => {
                let (a, b) = (&fwd.pred[f * D..(f + 1) * D], &rev.pred[r * D..(r + 1) * D]);
                for i in 0..D {
                    dst[i] = (a[i] + b[i]) / 2.0;
                }
            }
            (Some(f), None) => dst.copy_from_slice(&fwd.pred[f * D..(f + 1) * D]),
            (None, Some(r)) => dst.copy_from_slice(&rev.pred[r * D..(r + 1) * D]),
            (None, None) => unreachable!("every decoded frame has a source"),
        }
    }
    let decoder = params.pose_decoder.forward_rows(&qhat, n_dec);
    let mut rows: Vec<Vec<f64>> = x.chunks_exact(D).map(<[f64]>::to_vec).collect();
    for (k, row) in rows[2..t_len - 2].iter_mut().enumerate() {
        for i in 0..D {
            row[i] = qhat[k * D + i] + decoder.output()[k * D + i];
        }
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Value("physics re-estimate produced non-finite values".into()));
    }
    let output = unflatten_rows(&rows, seq_dd.fps())?;
    Ok(ReestimateTape {
        t_len,
        fps: seq_dd.fps(),
        global,
        passes: [fwd, rev],
        decoder,
        output,
    })
}

/// Physically re-estimated sequence `S_pp`. The first two and last two
/// frames are copied from the input.
pub fn reestimate(seq_dd: &PoseSequence3D, params: &PhysNetParams, rng_seed: u64) -> Result<PoseSequence3D> {
    Ok(reestimate_with_tape(seq_dd, params, rng_seed)?.output)
}

fn direction_backward(
    params: &PhysNetParams,
    direction: Direction,
    tape: &DirectionTape,
    d_pred: &[f64],
    d_noise: &[f64],
    dt: f64,
    grads: &mut PhysNetParams,
) -> Vec<f64> {
    let t_len = tape.q.len() / D;
    let rows = t_len - 5;
    let dt2 = dt * dt;
    let mut dq = vec![0.0; t_len * D];
    let mut d_heads: [Vec<f64>; 4] = [
        vec![0.0; rows * D],
        vec![0.0; rows * D],
        vec![0.0; rows * PACKED_LEN],
        d_noise.to_vec(),
    ];
    for r in 0..rows {
        let s = r + 2;
        let g = &d_pred[r * D..(r + 1) * D];
        for i in 0..D {
            dq[s * D + i] += 2.0 * g[i];
            dq[(s - 1) * D + i] -= g[i];
        }
        let da: Vec<f64> = g.iter().map(|v| v * dt2).collect();
        let u = &tape.u[r * D..(r + 1) * D];
        let p = &tape.heads[HEAD_M].output()[r * PACKED_LEN..(r + 1) * PACKED_LEN];
        let m = &tape.heads[HEAD_N].output()[r * D..(r + 1) * D];
        let usum: f64 = u.iter().sum();
        let m_dot_da: f64 = m.iter().zip(&da).map(|(a, b)| a * b).sum();
        let mut du = [m_dot_da; D];
        let dp = &mut d_heads[HEAD_M][r * PACKED_LEN..(r + 1) * PACKED_LEN];
        let mut k = 0;
        for i in 0..D {
            dp[k] = da[i] * u[i];
            du[i] += p[k] * da[i];
            k += 1;
            for j in i + 1..D {
                dp[k] = da[i] * u[j] + da[j] * u[i];
                du[j] += p[k] * da[i];
                du[i] += p[k] * da[j];
                k += 1;
            }
        }
        if let Some(z) = &tape.z {
            let zr = &z[r * D * D..(r + 1) * D * D];
            for i in 0..D {
                for k in 0..D {
                    du[k] += zr[i * D + k] * da[i];
                }
            }
        }
        for i in 0..D {
            d_heads[HEAD_N][r * D + i] += da[i] * usum;
            d_heads[HEAD_J][r * D + i] = du[i];
            d_heads[HEAD_C][r * D + i] = -du[i];
        }
    }
    let head_params = [&params.head_j, &params.head_c, &params.head_m, &params.head_n];
    let head_grads = [
        &mut grads.head_j,
        &mut grads.head_c,
        &mut grads.head_m,
        &mut grads.head_n,
    ];
    for ((hp, hg), (htape, up)) in head_params
        .into_iter()
        .zip(head_grads)
        .zip(tape.heads.iter().zip(&d_heads))
    {
        let dq_in = hp.backward_rows(htape, up, hg);
        for (a, b) in dq[2 * D..(t_len - 3) * D].iter_mut().zip(dq_in) {
            *a += b;
        }
    }
    let local_grads = match (direction, &mut grads.local_encoder_reverse) {
        (Direction::Reverse, Some(rev)) => rev,
        _ => &mut grads.local_encoder,
    };
    params.local_for(direction).backward_rows(&tape.local, &dq, local_grads);
    dq
}

/// Parameter gradients given `∂L/∂output` (frames × 51) and `∂L/∂noise_means`
/// (ordered as [`ReestimateTape::noise_means`]).
pub fn reestimate_backward(
    params: &PhysNetParams,
    tape: &ReestimateTape,
    d_output: &[StateVector],
    d_noise_means: &[StateVector],
) -> Result<PhysNetParams> {
    let t_len = tape.t_len;
    if d_output.len() != t_len {
        return Err(Error::Length {
            expected: t_len,
            actual: d_output.len(),
        });
    }
    let rows = t_len - 5;
    if d_noise_means.len() != 2 * rows {
        return Err(Error::Length {
            expected: 2 * rows,
            actual: d_noise_means.len(),
        });
    }
    let mut grads = params.zeros_like();
    let n_dec = t_len - 4;
    let d_dec: Vec<f64> = d_output[2..t_len - 2].iter().flat_map(|s| s.0).collect();
    let d_qhat_dec = params
        .pose_decoder
        .backward_rows(&tape.decoder, &d_dec, &mut grads.pose_decoder);
    let mut d_pred = [vec![0.0; rows * D], vec![0.0; rows * D]];
    for t in 2..=t_len - 3 {
        let k = t - 2;
        debug_assert!(k < n_dec);
        let g: Vec<f64> = (0..D).map(|i| d_dec[k * D + i] + d_qhat_dec[k * D + i]).collect();
        let (f, r) = sources(t, t_len);
        let w = if f.is_some() && r.is_some() { 0.5 } else { 1.0 };
        if let Some(f) = f {
            d_pred[0][f * D..(f + 1) * D]
                .iter_mut()
                .zip(&g)
                .for_each(|(a, b)| *a += w * b);
        }
        if let Some(r) = r {
            d_pred[1][r * D..(r + 1) * D]
                .iter_mut()
                .zip(&g)
                .for_each(|(a, b)| *a += w * b);
        }
    }
    let d_noise: Vec<f64> = d_noise_means.iter().flat_map(|s| s.0).collect();
    let dq_fwd = direction_backward(
        params,
        Direction::Forward,
        &tape.passes[0],
        &d_pred[0],
        &d_noise[..rows * D],
        params.dt,
        &mut grads,
    );
    let dq_rev = direction_backward(
        params,
        Direction::Reverse,
        &tape.passes[1],
        &d_pred[1],
        &d_noise[rows * D..],
        params.dt,
        &mut grads,
    );
    let d_global: Vec<f64> = dq_fwd.iter().zip(reverse_rows(&dq_rev)).map(|(a, b)| a + b).collect();
    params
        .global_encoder
        .backward_rows(&tape.global, &d_global, &mut grads.global_encoder);
    debug_assert!(tape.fps > 0.0);
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhysNetStage {
    Pretrain3d,
    Finetune2d,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Supervision {
    Pose3d(PoseSequence3D),
    Pose2d(PoseSequence2D),
}

/// A lifted sequence and its training target.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysNetExample {
    pub s_dd: PoseSequence3D,
    pub target: Supervision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysNetTrainConfig {
    pub stage: PhysNetStage,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for PhysNetTrainConfig {
    fn default() -> Self {
        Self {
            stage: PhysNetStage::Pretrain3d,
            epochs: 10,
            batch_size: 8,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

fn joints_to_states(g: &[Joints3]) -> Vec<StateVector> {
    g.iter().map(StateVector::from_joints).collect()
}

/// Stage loss on the fused pose and its gradient with respect to the
/// physics output and the noise means.
pub fn physnet_loss(
    stage: PhysNetStage,
    example: &PhysNetExample,
    tape: &ReestimateTape,
) -> Result<(f64, Vec<StateVector>, Vec<StateVector>)> {
    let means = tape.noise_means();
    let fused = fuse_poses(&example.s_dd, tape.output())?;
    let (loss, d_fused) = match (stage, &example.target) {
        (PhysNetStage::Pretrain3d, Supervision::Pose3d(truth)) => {
            (loss_3d(&fused, truth, &means)?, loss_3d_grad(&fused, truth)?)
        }
        (PhysNetStage::Finetune2d, Supervision::Pose2d(obs)) => {
            // camera is refit per sequence and treated as a constant
            let cam = fit_camera(&fused, obs)?.camera;
            (loss_2d(&fused, obs, &cam, &means)?, loss_2d_grad(&fused, obs, &cam)?)
        }
        (stage, _) => {
            return Err(Error::Config(format!("stage {stage:?} needs matching supervision")));
        }
    };
    let d_out = joints_to_states(&d_fused)
        .into_iter()
        .map(|s| StateVector(s.0.map(|v| 0.5 * v)))
        .collect();
    Ok((loss, d_out, loss_noise_grad(&means)))
}

/// Mean stage loss over a dataset, evaluated in mean-only noise mode.
pub fn evaluate_physnet(params: &PhysNetParams, data: &[PhysNetExample], stage: PhysNetStage) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut p = params.clone();
    p.noise_mode = NoiseMode::MeanOnly;
    let mut sum = 0.0;
    for ex in data {
        let tape = reestimate_with_tape(&ex.s_dd, &p, 0)?;
        sum += physnet_loss(stage, ex, &tape)?.0;
    }
    Ok(sum / data.len() as f64)
}

/// Mini-batch AdamW on the stage loss. Returns the trained parameters and
/// the mean batch loss of every step. Training always runs in mean-only
/// noise mode; the returned parameters keep the caller's mode.
pub fn train_physnet(
    init: PhysNetParams,
    data: &[PhysNetExample],
    cfg: &PhysNetTrainConfig,
) -> Result<(PhysNetParams, Vec<f64>)> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if cfg.epochs == 0 {
        return Ok((init, Vec::new()));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for ex in data {
        let ok = matches!(
            (cfg.stage, &ex.target),
            (PhysNetStage::Pretrain3d, Supervision::Pose3d(_)) | (PhysNetStage::Finetune2d, Supervision::Pose2d(_))
        );
        if !ok {
            return Err(Error::Config(format!(
                "stage {:?} needs matching supervision",
                cfg.stage
            )));
        }
    }
    let mode = init.noise_mode;
    let mut params = init;
    params.noise_mode = NoiseMode::MeanOnly;
    let mut state = AdamState::new(&params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = rng::stream(cfg.seed, "physnet-train");
    let mut curve = Vec::new();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = params.zeros_like();
            let mut loss = 0.0;
            for &i in batch {
                let ex = &data[i];
                let tape = reestimate_with_tape(&ex.s_dd, &params, 0)?;
                let (l, d_out, d_noise) = physnet_loss(cfg.stage, ex, &tape)?;
                grads.add_assign_params(&reestimate_backward(&params, &tape, &d_out, &d_noise)?);
                loss += l;
            }
            let n = batch.len() as f64;
            grads.scale_params(1.0 / n);
            optimizer_step(&mut params, &grads, &mut state, cfg.adam.lr, cfg.adam.weight_decay)?;
            curve.push(loss / n);
        }
    }
    params.noise_mode = mode;
    Ok((params, curve))
}
