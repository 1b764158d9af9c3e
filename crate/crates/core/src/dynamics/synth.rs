//! Embedding of pendulum chains into the 17-joint skeleton and synthetic
//! noisy pose datasets built from simulated trajectories.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{simulate, AnalyticSystem, Trajectory};
use crate::error::{Error, Result};
use crate::projection::{project, CameraParams};
use crate::rng;
use crate::skeleton::{FrameOfReference, JointLayout, Joints3, PoseSequence2D, PoseSequence3D, JOINT_COUNT};

/// Rest skeleton with the chain hanging straight down (+y), meters.
const REST_POSE: Joints3 = [
    [0.0, 0.0, 0.0],
    [-0.12, 0.0, 0.02],
    [-0.13, -0.42, 0.06],
    [-0.13, -0.84, 0.0],
    [0.12, 0.0, 0.02],
    [0.13, -0.42, 0.06],
    [0.13, -0.84, 0.0],
    [0.0, 0.24, -0.01],
    [0.0, 0.48, 0.0],
    [0.0, 0.55, 0.02],
    [0.0, 0.68, 0.04],
    [0.16, 0.46, 0.0],
    [0.19, 0.72, 0.04],
    [0.2, 0.95, 0.08],
    [-0.16, 0.46, 0.0],
    [-0.19, 0.72, 0.04],
    [-0.2, 0.95, 0.08],
];

/// Skeleton joints carried by the chain's pivot and link end points.
pub fn chain_joint_path(n_links: usize) -> Result<Vec<usize>> {
    // pelvis, spine, thorax, neck, head
    let path = match n_links {
        1 => vec![0, 10],
        2 => vec![0, 8, 10],
        3 => vec![0, 7, 9, 10],
        4 => vec![0, 7, 8, 9, 10],
        n => {
            return Err(Error::Value(format!(
                "chains embed into the skeleton for 1..=4 links, got {n}"
            )))
        }
    };
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Placement {
    /// Position of chain point `k` (0 is the pivot).
    ChainPoint(usize),
    /// Rigid offset in the frame of the link leaving chain point `k`.
    Attached { anchor: usize, offset: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainEmbedding {
    n_links: usize,
    placements: [Placement; JOINT_COUNT],
}

impl ChainEmbedding {
    pub fn new(n_links: usize) -> Result<Self> {
        let path = chain_joint_path(n_links)?;
        let parents = JointLayout::h36m().parents();
        let placements = std::array::from_fn(|j| {
            if let Some(k) = path.iter().position(|&p| p == j) {
                return Placement::ChainPoint(k);
            }
            let mut anc = parents[j].expect("only the root lacks a parent and the root is mapped");
            let anchor = loop {
                if let Some(k) = path.iter().position(|&p| p == anc) {
                    break k;
                }
                anc = parents[anc].expect("walk ends at the mapped root");
            };
            let base = REST_POSE[path[anchor]];
            Placement::Attached {
                anchor,
                offset: [
                    REST_POSE[j][0] - base[0],
                    REST_POSE[j][1] - base[1],
                    REST_POSE[j][2] - base[2],
                ],
            }
        });
        Ok(Self { n_links, placements })
    }

    pub fn n_links(&self) -> usize {
        self.n_links
    }

    /// Skeleton pose for chain angles `q` (root-relative: the pivot is the pelvis).
    pub fn pose(&self, sys: &AnalyticSystem, q: &[f64]) -> Joints3 {
        assert_eq!(
            sys.n_links(),
            self.n_links,
            "system and embedding disagree on link count"
        );
        let mut points = vec![[0.0, 0.0]];
        points.extend(sys.link_endpoints(q));
        let mut out = [[0.0; 3]; JOINT_COUNT];
        for (o, placement) in out.iter_mut().zip(&self.placements) {
            *o = match *placement {
                Placement::ChainPoint(k) => [points[k][0], points[k][1], 0.0],
                Placement::Attached { anchor, offset } => {
                    let angle = q[anchor.min(self.n_links - 1)];
                    let (s, c) = angle.sin_cos();
                    [
                        points[anchor][0] + offset[0] * c + offset[1] * s,
                        points[anchor][1] - offset[0] * s + offset[1] * c,
                        offset[2],
                    ]
                }
            };
        }
        out
    }

    /// Samples every `stride`-th trajectory state into a pose sequence.
    pub fn sequence(&self, sys: &AnalyticSystem, traj: &Trajectory, stride: usize, fps: f64) -> Result<PoseSequence3D> {
        let frames = traj
            .q
            .iter()
            .step_by(stride.max(1))
            .map(|q| self.pose(sys, q))
            .collect();
        PoseSequence3D::new(frames, fps, FrameOfReference::RootRelative)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub frames: usize,
    pub fps: f64,
    /// Standard deviation of the additive 3D noise, meters.
    pub noise_sigma: f64,
    /// Integrator steps per output frame.
    pub substeps: usize,
    /// Initial angles are drawn from `±angle_range` rad.
    pub angle_range: f64,
    /// Initial angular velocities are drawn from `±velocity_range` rad/s.
    pub velocity_range: f64,
    pub camera: CameraParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 1,
            frames: 32,
            fps: 30.0,
            noise_sigma: 0.05,
            substeps: 10,
            angle_range: 1.0,
            velocity_range: 1.5,
            camera: CameraParams::new(0.3, [0.5, 0.3]).expect("valid default camera"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub clean: PoseSequence3D,
    pub noisy: PoseSequence3D,
    pub projected: PoseSequence2D,
}

/// Simulated chain motions embedded in the skeleton, with iid Gaussian
/// noise on every 3D coordinate and an orthographic view of the noisy poses.
pub fn synth_pose_dataset(sys: &AnalyticSystem, cfg: &SynthConfig, seed: u64) -> Result<Vec<SynthSample>> {
    if cfg.frames == 0 || cfg.substeps == 0 {
        return Err(Error::Value("frames and substeps must be positive".into()));
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite()) {
        return Err(Error::Value(format!(
            "noise sigma must be nonnegative, got {}",
            cfg.noise_sigma
        )));
    }
    let embedding = ChainEmbedding::new(sys.n_links())?;
    let mut rng = rng::stream(seed, "synth");
    let n = sys.n_links();
    let dt = 1.0 / (cfg.fps * cfg.substeps as f64);
    (0..cfg.count)
        .map(|_| {
            let q0: Vec<f64> = (0..n)
                .map(|_| rng.gen_range(-cfg.angle_range..=cfg.angle_range))
                .collect();
            let v0: Vec<f64> = (0..n)
                .map(|_| rng.gen_range(-cfg.velocity_range..=cfg.velocity_range))
                .collect();
            let traj = simulate(sys, &q0, &v0, dt, (cfg.frames - 1) * cfg.substeps)?;
            let clean = embedding.sequence(sys, &traj, cfg.substeps, cfg.fps)?;
            let noisy_frames: Vec<Joints3> = clean
                .frames()
                .iter()
                .map(|f| {
                    let mut g = *f;
                    for p in g.iter_mut() {
                        for c in p.iter_mut() {
                            let z: f64 = rng.sample(StandardNormal);
                            *c += cfg.noise_sigma * z;
                        }
                    }
                    g
                })
                .collect();
            let noisy = PoseSequence3D::infer(noisy_frames, cfg.fps)?;
            let projected = project(&noisy, &cfg.camera);
            Ok(SynthSample {
                clean,
                noisy,
                projected,
            })
        })
        .collect()
}
