//! 17-joint skeleton layout, pose sequence containers and the `.poseq.json`
//! file format.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

pub const JOINT_COUNT: usize = 17;
pub const STATE_DIM: usize = JOINT_COUNT * 3;

pub type Joints2 = [[f64; 2]; JOINT_COUNT];
pub type Joints3 = [[f64; 3]; JOINT_COUNT];

const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "pelvis",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
    "spine",
    "thorax",
    "neck",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
];

const LIMB_EDGES: [(usize, usize); JOINT_COUNT - 1] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (0, 4),
    (4, 5),
    (5, 6),
    (0, 7),
    (7, 8),
    (8, 9),
    (9, 10),
    (8, 11),
    (11, 12),
    (12, 13),
    (8, 14),
    (14, 15),
    (15, 16),
];

/// Pelvis-rooted joint order and the limb tree over it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointLayout {
    joint_names: Vec<&'static str>,
    limb_edges: Vec<(usize, usize)>,
}

impl JointLayout {
    pub fn h36m() -> Self {
        Self {
            joint_names: JOINT_NAMES.to_vec(),
            limb_edges: LIMB_EDGES.to_vec(),
        }
    }

    pub fn joint_names(&self) -> &[&'static str] {
        &self.joint_names
    }

    pub fn limb_edges(&self) -> &[(usize, usize)] {
        &self.limb_edges
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| *n == name)
    }

    /// Parent of each joint in the limb tree; the root has none.
    pub fn parents(&self) -> [Option<usize>; JOINT_COUNT] {
        let mut parents = [None; JOINT_COUNT];
        for &(p, c) in &self.limb_edges {
            parents[c] = Some(p);
        }
        parents
    }
}

impl Default for JointLayout {
    fn default() -> Self {
        Self::h36m()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameOfReference {
    RootRelative,
    World,
}

fn check_fps(fps: f64) -> Result<()> {
    if fps.is_finite() && fps > 0.0 {
        Ok(())
    } else {
        Err(Error::Value(format!("fps must be positive and finite, got {fps}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence2D {
    frames: Vec<Joints2>,
    confidence: Option<Vec<[f64; JOINT_COUNT]>>,
    fps: f64,
}

impl PoseSequence2D {
    pub fn new(frames: Vec<Joints2>, confidence: Option<Vec<[f64; JOINT_COUNT]>>, fps: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Schema("sequence has no frames".into()));
        }
        check_fps(fps)?;
        if frames.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Value("non-finite 2D coordinate".into()));
        }
        if let Some(conf) = &confidence {
            if conf.len() != frames.len() {
                return Err(Error::Schema(format!(
                    "confidence has {} frames, coordinates have {}",
                    conf.len(),
                    frames.len()
                )));
            }
            if conf.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::Value("confidence outside [0, 1]".into()));
            }
        }
        Ok(Self {
            frames,
            confidence,
            fps,
        })
    }

    pub fn frames(&self) -> &[Joints2] {
        &self.frames
    }

    pub fn confidence(&self) -> Option<&[[f64; JOINT_COUNT]]> {
        self.confidence.as_deref()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence3D {
    frames: Vec<Joints3>,
    fps: f64,
    frame_of_reference: FrameOfReference,
}

impl PoseSequence3D {
    pub fn new(frames: Vec<Joints3>, fps: f64, frame_of_reference: FrameOfReference) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Schema("sequence has no frames".into()));
        }
        check_fps(fps)?;
        if frames.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Value("non-finite 3D coordinate".into()));
        }
        if frame_of_reference == FrameOfReference::RootRelative && frames.iter().any(|f| f[0] != [0.0; 3]) {
            return Err(Error::Value("root-relative sequence with nonzero root joint".into()));
        }
        Ok(Self {
            frames,
            fps,
            frame_of_reference,
        })
    }

    /// Root-relative when joint 0 is exactly zero in every frame, world otherwise.
    pub fn infer(frames: Vec<Joints3>, fps: f64) -> Result<Self> {
        let frame = if frames.iter().all(|f| f[0] == [0.0; 3]) {
            FrameOfReference::RootRelative
        } else {
            FrameOfReference::World
        };
        Self::new(frames, fps, frame)
    }

    pub fn frames(&self) -> &[Joints3] {
        &self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frame_of_reference(&self) -> FrameOfReference {
        self.frame_of_reference
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn into_frames(self) -> Vec<Joints3> {
        self.frames
    }

    pub fn reversed(&self) -> Self {
        let mut frames = self.frames.clone();
        frames.reverse();
        Self {
            frames,
            fps: self.fps,
            frame_of_reference: self.frame_of_reference,
        }
    }

    /// Linear-interpolation resampling onto `target_len` uniformly spaced
    /// frames spanning the same time interval.
    pub fn resample(&self, target_len: usize) -> Result<Self> {
        if target_len == 0 {
            return Err(Error::Value("cannot resample to zero frames".into()));
        }
        let n = self.frames.len();
        if n == target_len {
            return Ok(self.clone());
        }
        let frames = (0..target_len)
            .map(|k| {
                if n == 1 || target_len == 1 {
                    return self.frames[0];
                }
                let pos = k as f64 * (n - 1) as f64 / (target_len - 1) as f64;
                let lo = (pos.floor() as usize).min(n - 1);
                let hi = (lo + 1).min(n - 1);
                let w = pos - lo as f64;
                let mut out = [[0.0; 3]; JOINT_COUNT];
                for (j, joint) in out.iter_mut().enumerate() {
                    for c in 0..3 {
                        joint[c] = (1.0 - w) * self.frames[lo][j][c] + w * self.frames[hi][j][c];
                    }
                }
                out
            })
            .collect();
        let fps = self.fps * (target_len.max(2) - 1) as f64 / (n.max(2) - 1) as f64;
        Self::infer(frames, fps)
    }
}

/// Flattened per-frame state: 17 joints × 3 coordinates, joint-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector(pub [f64; STATE_DIM]);

impl StateVector {
    pub fn zeros() -> Self {
        Self([0.0; STATE_DIM])
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; STATE_DIM] = values.try_into().map_err(|_| Error::Length {
            expected: STATE_DIM,
            actual: values.len(),
        })?;
        if arr.iter().any(|v| !v.is_finite()) {
            return Err(Error::Value("non-finite state entry".into()));
        }
        Ok(Self(arr))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn from_joints(joints: &Joints3) -> Self {
        let mut values = [0.0; STATE_DIM];
        for (j, p) in joints.iter().enumerate() {
            values[3 * j..3 * j + 3].copy_from_slice(p);
        }
        Self(values)
    }

    pub fn to_joints(&self) -> Joints3 {
        let mut joints = [[0.0; 3]; JOINT_COUNT];
        for (j, p) in joints.iter_mut().enumerate() {
            p.copy_from_slice(&self.0[3 * j..3 * j + 3]);
        }
        joints
    }
}

/// Subtracts joint 0 from every joint of every frame.
pub fn root_center(seq: &PoseSequence3D) -> PoseSequence3D {
    let frames = seq
        .frames
        .iter()
        .map(|f| {
            let root = f[0];
            let mut out = *f;
            for p in out.iter_mut() {
                for c in 0..3 {
                    p[c] -= root[c];
                }
            }
            out
        })
        .collect();
    PoseSequence3D {
        frames,
        fps: seq.fps,
        frame_of_reference: FrameOfReference::RootRelative,
    }
}

pub fn flatten_states(seq: &PoseSequence3D) -> Vec<StateVector> {
    seq.frames.iter().map(StateVector::from_joints).collect()
}

pub fn unflatten_states(states: &[StateVector], fps: f64) -> Result<PoseSequence3D> {
    let frames = states.iter().map(StateVector::to_joints).collect();
    PoseSequence3D::infer(frames, fps)
}

/// Same as [`unflatten_states`] for raw rows, rejecting any row whose length
/// is not 51.
pub fn unflatten_rows(rows: &[Vec<f64>], fps: f64) -> Result<PoseSequence3D> {
    let states = rows
        .iter()
        .map(|r| StateVector::from_slice(r))
        .collect::<Result<Vec<_>>>()?;
    unflatten_states(&states, fps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseKind {
    TwoD,
    ThreeD,
}

impl PoseKind {
    fn format_tag(self) -> &'static str {
        match self {
            PoseKind::TwoD => "h36m17-2d",
            PoseKind::ThreeD => "h36m17-3d",
        }
    }

    fn dims(self) -> usize {
        match self {
            PoseKind::TwoD => 2,
            PoseKind::ThreeD => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PoseSequence {
    TwoD(PoseSequence2D),
    ThreeD(PoseSequence3D),
}

#[derive(Serialize)]
struct PoseFileOut<'a, P: Serialize> {
    format: &'static str,
    fps: f64,
    frames: &'a [P],
    #[serde(skip_serializing_if = "Option::is_none")]
    confidence: Option<&'a [[f64; JOINT_COUNT]]>,
}

fn schema(msg: impl Into<String>) -> Error {
    Error::Schema(msg.into())
}

fn parse_frames(value: &Value, dims: usize) -> Result<Vec<Vec<f64>>> {
    let frames = value.as_array().ok_or_else(|| schema("\"frames\" must be an array"))?;
    frames
        .iter()
        .enumerate()
        .map(|(t, frame)| {
            let joints = frame
                .as_array()
                .ok_or_else(|| schema(format!("frame {t} is not an array")))?;
            if joints.len() != JOINT_COUNT {
                return Err(schema(format!(
                    "frame {t} has {} joints, expected {JOINT_COUNT}",
                    joints.len()
                )));
            }
            let mut flat = Vec::with_capacity(JOINT_COUNT * dims);
            for (j, joint) in joints.iter().enumerate() {
                let coords = joint
                    .as_array()
                    .ok_or_else(|| schema(format!("frame {t} joint {j} is not an array")))?;
                if coords.len() != dims {
                    return Err(schema(format!(
                        "frame {t} joint {j} has {} coordinates, expected {dims}",
                        coords.len()
                    )));
                }
                for c in coords {
                    let v = c
                        .as_f64()
                        .ok_or_else(|| schema(format!("frame {t} joint {j}: non-numeric value")))?;
                    flat.push(v);
                }
            }
            Ok(flat)
        })
        .collect()
}

/// Parses `.poseq.json` text. `path` is only used for error messages.
pub fn parse_pose_sequence(text: &str, kind: PoseKind, path: &Path) -> Result<PoseSequence> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let obj = root.as_object().ok_or_else(|| schema("top level must be an object"))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "format" | "fps" | "frames" | "confidence") {
            return Err(schema(format!("unknown key {key:?}")));
        }
    }
    let format = obj
        .get("format")
        .and_then(Value::as_str)
        .ok_or_else(|| schema("missing \"format\""))?;
    if format != kind.format_tag() {
        return Err(schema(format!(
            "format {format:?} does not match expected {:?}",
            kind.format_tag()
        )));
    }
    let fps = obj
        .get("fps")
        .and_then(Value::as_f64)
        .ok_or_else(|| schema("missing numeric \"fps\""))?;
    let frames = parse_frames(
        obj.get("frames").ok_or_else(|| schema("missing \"frames\""))?,
        kind.dims(),
    )?;
    let confidence = match obj.get("confidence") {
        None | Some(Value::Null) => None,
        Some(v) => {
            if kind == PoseKind::ThreeD {
                return Err(schema("confidence is only defined for 2D sequences"));
            }
            let rows = v.as_array().ok_or_else(|| schema("\"confidence\" must be an array"))?;
            let parsed = rows
                .iter()
                .map(|row| {
                    let row = row
                        .as_array()
                        .filter(|r| r.len() == JOINT_COUNT)
                        .ok_or_else(|| schema("confidence rows must hold 17 numbers"))?;
                    let mut out = [0.0; JOINT_COUNT];
                    for (o, c) in out.iter_mut().zip(row) {
                        *o = c.as_f64().ok_or_else(|| schema("non-numeric confidence"))?;
                    }
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()?;
            Some(parsed)
        }
    };
    match kind {
        PoseKind::TwoD => {
            let frames = frames
                .iter()
                .map(|flat| {
                    let mut out = [[0.0; 2]; JOINT_COUNT];
                    for (j, p) in out.iter_mut().enumerate() {
                        p.copy_from_slice(&flat[2 * j..2 * j + 2]);
                    }
                    out
                })
                .collect();
            Ok(PoseSequence::TwoD(PoseSequence2D::new(frames, confidence, fps)?))
        }
        PoseKind::ThreeD => {
            let frames = frames
                .iter()
                .map(|flat| {
                    let mut out = [[0.0; 3]; JOINT_COUNT];
                    for (j, p) in out.iter_mut().enumerate() {
                        p.copy_from_slice(&flat[3 * j..3 * j + 3]);
                    }
                    out
                })
                .collect();
            Ok(PoseSequence::ThreeD(PoseSequence3D::infer(frames, fps)?))
        }
    }
}

pub fn load_pose_sequence(path: &Path, kind: PoseKind) -> Result<PoseSequence> {
    let text = fs::read_to_string(path)?;
    parse_pose_sequence(&text, kind, path)
}

pub fn load_pose_2d(path: &Path) -> Result<PoseSequence2D> {
    match load_pose_sequence(path, PoseKind::TwoD)? {
        PoseSequence::TwoD(s) => Ok(s),
        PoseSequence::ThreeD(_) => unreachable!("2D loader returned a 3D sequence"),
    }
}

pub fn load_pose_3d(path: &Path) -> Result<PoseSequence3D> {
    match load_pose_sequence(path, PoseKind::ThreeD)? {
        PoseSequence::ThreeD(s) => Ok(s),
        PoseSequence::TwoD(_) => unreachable!("3D loader returned a 2D sequence"),
    }
}

pub fn pose_2d_to_json(seq: &PoseSequence2D) -> String {
    let out = PoseFileOut {
        format: PoseKind::TwoD.format_tag(),
        fps: seq.fps,
        frames: &seq.frames,
        confidence: seq.confidence.as_deref(),
    };
    serde_json::to_string(&out).expect("finite pose data always serializes")
}

pub fn pose_3d_to_json(seq: &PoseSequence3D) -> String {
    let out = PoseFileOut::<Joints3> {
        format: PoseKind::ThreeD.format_tag(),
        fps: seq.fps,
        frames: &seq.frames,
        confidence: None,
    };
    serde_json::to_string(&out).expect("finite pose data always serializes")
}

pub fn save_pose_2d(path: &Path, seq: &PoseSequence2D) -> Result<()> {
    fs::write(path, pose_2d_to_json(seq) + "\n")?;
    Ok(())
}

pub fn save_pose_3d(path: &Path, seq: &PoseSequence3D) -> Result<()> {
    fs::write(path, pose_3d_to_json(seq) + "\n")?;
    Ok(())
}
