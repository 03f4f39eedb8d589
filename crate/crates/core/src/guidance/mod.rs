//! Gradient guidance on a predicted trajectory mean: root and hand attraction
//! toward spatial anchors, truncated scene repulsion, and the joint-to-scene
//! distance loss used when conditioning poses.

mod losses;
mod synth;
mod update;

pub use losses::{
    hand_loss, root_loss, scene_distance_loss, scene_repulsion_loss, LossValue, RepulsionMask,
};
pub use synth::{canonical_skeleton, synthesize_walk, SynthConfig};
pub use update::{guided_update, run_guidance, Denoiser, GuidanceObjective, GuidanceReport, PassThrough};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Rotation6D, Vec3};

pub const JOINT_COUNT: usize = 22;
pub const HAND_ROTATIONS: usize = 16;
/// Pelvis is joint 0 in the body joint order.
pub const ROOT_JOINT: usize = 0;
pub const FRAME_DIM: usize = JOINT_COUNT * 3 + 3 + HAND_ROTATIONS * 6;
/// Offsets of each block inside one frame of the flattened layout.
pub const WRIST_OFFSET: usize = JOINT_COUNT * 3;
pub const HAND_OFFSET: usize = WRIST_OFFSET + 3;

/// Frames shared with the previous motion clip when generating autoregressively.
pub const SEGMENT_OVERLAP_FRAMES: usize = 10;
/// Half-width of the window around grasp frames during which finger rotations stay pinned.
pub const FINGER_LOCK_HALF_WINDOW: usize = 5;

pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;
pub const ANCHORS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("{what}: expected {expected} entries, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("frame index {frame} out of range for a {frames}-frame trajectory")]
    FrameOutOfRange { frame: usize, frames: usize },
    #[error("non-finite gradient at flat index {index}")]
    NonFiniteGradient { index: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid guidance parameter: {0}")]
    InvalidParams(String),
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandPose {
    pub wrist: Vec3,
    /// Wrist plus 15 finger joints, global 6D rotations.
    pub rotations: [Rotation6D; HAND_ROTATIONS],
}

impl HandPose {
    pub fn identity_at(wrist: Vec3) -> Self {
        Self {
            wrist,
            rotations: [Rotation6D::IDENTITY; HAND_ROTATIONS],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonPose {
    pub joints: [Vec3; JOINT_COUNT],
    pub hand: HandPose,
}

impl SkeletonPose {
    pub fn root(&self) -> Vec3 {
        self.joints[ROOT_JOINT]
    }

    pub fn translate(&mut self, offset: &Vec3) {
        for j in self.joints.iter_mut() {
            *j += offset;
        }
        self.hand.wrist += offset;
    }

    pub fn write_flat(&self, out: &mut [f64]) {
        for (k, j) in self.joints.iter().enumerate() {
            out[3 * k..3 * k + 3].copy_from_slice(j.as_slice());
        }
        out[WRIST_OFFSET..WRIST_OFFSET + 3].copy_from_slice(self.hand.wrist.as_slice());
        for (k, r) in self.hand.rotations.iter().enumerate() {
            out[HAND_OFFSET + 6 * k..HAND_OFFSET + 6 * k + 6].copy_from_slice(&r.0);
        }
    }

    pub fn read_flat(data: &[f64]) -> Self {
        let v = |o: usize| Vec3::new(data[o], data[o + 1], data[o + 2]);
        let joints = std::array::from_fn(|k| v(3 * k));
        let rotations = std::array::from_fn(|k| {
            let o = HAND_OFFSET + 6 * k;
            Rotation6D(std::array::from_fn(|c| data[o + c]))
        });
        Self {
            joints,
            hand: HandPose {
                wrist: v(WRIST_OFFSET),
                rotations,
            },
        }
    }

    /// Every hand rotation must decode to a proper rotation.
    pub fn validate(&self) -> Result<(), crate::geometry::GeometryError> {
        for r in &self.hand.rotations {
            r.to_matrix()?;
        }
        Ok(())
    }
}

/// The mean `μ` being refined: a sequence of poses stored flat, `FRAME_DIM` scalars per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    data: Vec<f64>,
    frame_rate: f64,
}

impl TrajectoryState {
    pub fn from_poses(poses: &[SkeletonPose], frame_rate: f64) -> Self {
        let mut data = vec![0.0; poses.len() * FRAME_DIM];
        for (f, p) in poses.iter().enumerate() {
            p.write_flat(&mut data[f * FRAME_DIM..(f + 1) * FRAME_DIM]);
        }
        Self { data, frame_rate }
    }

    pub fn from_flat(data: Vec<f64>, frame_rate: f64) -> Result<Self, GuidanceError> {
        if data.len() % FRAME_DIM != 0 {
            return Err(GuidanceError::LengthMismatch {
                what: "flat trajectory (multiple of frame size)",
                expected: (data.len() / FRAME_DIM + 1) * FRAME_DIM,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(GuidanceError::NonFinite("trajectory"));
        }
        Ok(Self { data, frame_rate })
    }

    pub fn frames(&self) -> usize {
        self.data.len() / FRAME_DIM
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pose(&self, frame: usize) -> SkeletonPose {
        SkeletonPose::read_flat(&self.data[frame * FRAME_DIM..(frame + 1) * FRAME_DIM])
    }

    pub fn poses(&self) -> Vec<SkeletonPose> {
        (0..self.frames()).map(|f| self.pose(f)).collect()
    }

    pub fn joint(&self, frame: usize, joint: usize) -> Vec3 {
        let o = frame * FRAME_DIM + 3 * joint;
        Vec3::new(self.data[o], self.data[o + 1], self.data[o + 2])
    }

    pub fn root(&self, frame: usize) -> Vec3 {
        self.joint(frame, ROOT_JOINT)
    }

    pub fn wrist(&self, frame: usize) -> Vec3 {
        let o = frame * FRAME_DIM + WRIST_OFFSET;
        Vec3::new(self.data[o], self.data[o + 1], self.data[o + 2])
    }

    pub fn hand_rotation(&self, frame: usize, k: usize) -> [f64; 6] {
        let o = frame * FRAME_DIM + HAND_OFFSET + 6 * k;
        std::array::from_fn(|c| self.data[o + c])
    }

    pub fn translated(&self, offset: &Vec3) -> Self {
        let mut out = self.clone();
        for f in 0..self.frames() {
            let base = f * FRAME_DIM;
            for k in 0..=JOINT_COUNT {
                // joints then the wrist, which directly follows them
                for c in 0..3 {
                    out.data[base + 3 * k + c] += offset[c];
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String, GuidanceError> {
        let file = TrajectoryFile {
            schema_version: TRAJECTORY_SCHEMA_VERSION,
            frame_rate: self.frame_rate,
            frames: self.poses(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, GuidanceError> {
        let file: TrajectoryFile = serde_json::from_str(text)?;
        if file.schema_version != TRAJECTORY_SCHEMA_VERSION {
            return Err(GuidanceError::SchemaVersion(file.schema_version));
        }
        if !(file.frame_rate > 0.0 && file.frame_rate.is_finite()) {
            return Err(GuidanceError::InvalidParams(format!("frame rate {}", file.frame_rate)));
        }
        let t = Self::from_poses(&file.frames, file.frame_rate);
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(GuidanceError::NonFinite("trajectory"));
        }
        Ok(t)
    }
}

#[derive(Serialize, Deserialize)]
struct TrajectoryFile {
    schema_version: u32,
    frame_rate: f64,
    frames: Vec<SkeletonPose>,
}

/// One wrist/hand target from a key pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandAnchor {
    pub frame: usize,
    pub wrist: Vec3,
    pub rotations: [Rotation6D; HAND_ROTATIONS],
}

/// Spatial anchors: root positions `a_r` with their frames, and per key pose
/// wrist positions `a_w` and hand rotations `a_h`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnchorTuple {
    pub root: Vec<Vec3>,
    pub root_frames: Vec<usize>,
    pub hands: Vec<HandAnchor>,
}

impl AnchorTuple {
    pub fn from_schedule(waypoints: &[[f64; 3]], frames: &[usize]) -> Self {
        Self {
            root: waypoints.iter().map(|w| Vec3::new(w[0], w[1], w[2])).collect(),
            root_frames: frames.to_vec(),
            hands: Vec::new(),
        }
    }

    pub fn validate(&self, frames: usize) -> Result<(), GuidanceError> {
        if self.root.len() != self.root_frames.len() {
            return Err(GuidanceError::LengthMismatch {
                what: "root anchor frames",
                expected: self.root.len(),
                got: self.root_frames.len(),
            });
        }
        for &f in self.root_frames.iter().chain(self.hands.iter().map(|h| &h.frame)) {
            if f >= frames {
                return Err(GuidanceError::FrameOutOfRange { frame: f, frames });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, GuidanceError> {
        Ok(serde_json::to_string_pretty(&AnchorsFile {
            schema_version: ANCHORS_SCHEMA_VERSION,
            anchors: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self, GuidanceError> {
        let file: AnchorsFile = serde_json::from_str(text)?;
        if file.schema_version != ANCHORS_SCHEMA_VERSION {
            return Err(GuidanceError::SchemaVersion(file.schema_version));
        }
        Ok(file.anchors)
    }
}

#[derive(Serialize, Deserialize)]
struct AnchorsFile {
    schema_version: u32,
    #[serde(flatten)]
    anchors: AnchorTuple,
}

/// Which denoising steps receive a guidance update. Steps count down to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidedTimesteps {
    /// The final `n` denoising steps, `t < n`.
    Last(usize),
    All,
    Explicit(Vec<usize>),
}

impl Default for GuidedTimesteps {
    fn default() -> Self {
        GuidedTimesteps::Last(10)
    }
}

impl GuidedTimesteps {
    pub fn contains(&self, t: usize) -> bool {
        match self {
            GuidedTimesteps::Last(n) => t < *n,
            GuidedTimesteps::All => true,
            GuidedTimesteps::Explicit(v) => v.contains(&t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceParams {
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub repulsion_radius: f64,
    pub guided_timesteps: GuidedTimesteps,
}

impl Default for GuidanceParams {
    fn default() -> Self {
        Self {
            tau: 0.1,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 0.01,
            repulsion_radius: 0.3,
            guided_timesteps: GuidedTimesteps::default(),
        }
    }
}

impl GuidanceParams {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(GuidanceError::InvalidParams(format!("tau must be >= 0, got {}", self.tau)));
        }
        if !(self.repulsion_radius > 0.0 && self.repulsion_radius.is_finite()) {
            return Err(GuidanceError::InvalidParams(format!(
                "repulsion radius must be > 0, got {}",
                self.repulsion_radius
            )));
        }
        for (name, l) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !l.is_finite() {
                return Err(GuidanceError::InvalidParams(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}
