use super::{
    GuidanceError, SkeletonPose, TrajectoryState, FRAME_DIM, HAND_OFFSET, HAND_ROTATIONS, JOINT_COUNT, ROOT_JOINT,
    WRIST_OFFSET,
};
use crate::geometry::{KdTree, PointCloud, Rotation6D, Vec3};

/// Loss value with its gradient in the flat layout of the input
/// (`FRAME_DIM` per frame, or one frame for single-pose losses).
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossValue {
    fn zero(len: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; len],
        }
    }
}

fn add3(grad: &mut [f64], offset: usize, v: &Vec3) {
    for c in 0..3 {
        grad[offset + c] += v[c];
    }
}

/// `−(1/N) Σ_j Σ_k ‖J_j − S_k‖²` over the body joints of one pose.
/// An empty cloud carries no scene context and yields zero.
pub fn scene_distance_loss(pose: &SkeletonPose, cloud: &PointCloud) -> LossValue {
    let mut out = LossValue::zero(FRAME_DIM);
    let n = cloud.len();
    if n == 0 {
        return out;
    }
    let nf = n as f64;
    let mean: Vec3 = cloud.points.iter().sum::<Vec3>() / nf;
    let mut total = 0.0;
    for (j, joint) in pose.joints.iter().enumerate() {
        total += cloud.points.iter().map(|s| (joint - s).norm_squared()).sum::<f64>();
        add3(&mut out.grad, 3 * j, &(-2.0 * (joint - mean)));
    }
    out.value = -total / nf;
    out
}

/// `Σ_i ‖j_r(f_i) − a_r^i‖²`, evaluated only at the scheduled frames `f_i`.
pub fn root_loss(traj: &TrajectoryState, anchors: &[Vec3], frames: &[usize]) -> Result<LossValue, GuidanceError> {
    if anchors.len() != frames.len() {
        return Err(GuidanceError::LengthMismatch {
            what: "root schedule",
            expected: anchors.len(),
            got: frames.len(),
        });
    }
    let mut out = LossValue::zero(traj.as_flat().len());
    for (a, &f) in anchors.iter().zip(frames) {
        check_frame(traj, f)?;
        let d = traj.root(f) - a;
        out.value += d.norm_squared();
        add3(&mut out.grad, f * FRAME_DIM + 3 * ROOT_JOINT, &(2.0 * d));
    }
    Ok(out)
}

/// Wrist attraction plus componentwise residual of the 16 global 6D hand rotations.
pub fn hand_loss(
    traj: &TrajectoryState,
    wrists: &[Vec3],
    rotations: &[[Rotation6D; HAND_ROTATIONS]],
    key_frames: &[usize],
) -> Result<LossValue, GuidanceError> {
    for (what, got) in [("hand rotations", rotations.len()), ("hand key frames", key_frames.len())] {
        if got != wrists.len() {
            return Err(GuidanceError::LengthMismatch {
                what,
                expected: wrists.len(),
                got,
            });
        }
    }
    let mut out = LossValue::zero(traj.as_flat().len());
    for ((w, rots), &f) in wrists.iter().zip(rotations).zip(key_frames) {
        check_frame(traj, f)?;
        let base = f * FRAME_DIM;
        let d = traj.wrist(f) - w;
        out.value += d.norm_squared();
        add3(&mut out.grad, base + WRIST_OFFSET, &(2.0 * d));
        for (k, target) in rots.iter().enumerate() {
            let cur = traj.hand_rotation(f, k);
            for c in 0..6 {
                let r = cur[c] - target.0[c];
                out.value += r * r;
                out.grad[base + HAND_OFFSET + 6 * k + c] += 2.0 * r;
            }
        }
    }
    Ok(out)
}

fn check_frame(traj: &TrajectoryState, frame: usize) -> Result<(), GuidanceError> {
    if frame >= traj.frames() {
        return Err(GuidanceError::FrameOutOfRange {
            frame,
            frames: traj.frames(),
        });
    }
    Ok(())
}

/// Neighbour sets `N(j, r)` per (frame, joint), frozen for one update step.
#[derive(Debug, Clone, PartialEq)]
pub struct RepulsionMask {
    pub radius: f64,
    neighbors: Vec<Vec<usize>>,
}

impl RepulsionMask {
    pub fn build(traj: &TrajectoryState, tree: &KdTree, radius: f64) -> Self {
        let mut neighbors = Vec::with_capacity(traj.frames() * JOINT_COUNT);
        for f in 0..traj.frames() {
            for j in 0..JOINT_COUNT {
                neighbors.push(tree.within_radius(&traj.joint(f, j), radius));
            }
        }
        Self { radius, neighbors }
    }

    /// Point indices within the radius of joint `j` at frame `f` when the mask was built.
    pub fn neighbors(&self, frame: usize, joint: usize) -> &[usize] {
        &self.neighbors[frame * JOINT_COUNT + joint]
    }

    pub fn pair_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    /// `−Σ_j Σ_{p∈N(j)} ‖j − p‖²` with the neighbour sets held fixed.
    pub fn loss(&self, traj: &TrajectoryState, tree: &KdTree) -> LossValue {
        let mut out = LossValue::zero(traj.as_flat().len());
        for f in 0..traj.frames() {
            for j in 0..JOINT_COUNT {
                let q = traj.joint(f, j);
                let mut g = Vec3::zeros();
                for &p in self.neighbors(f, j) {
                    let d = q - tree.point(p);
                    out.value -= d.norm_squared();
                    g -= 2.0 * d;
                }
                add3(&mut out.grad, f * FRAME_DIM + 3 * j, &g);
            }
        }
        out
    }
}

/// Truncated repulsion from the path-aligned cloud over all body joints.
pub fn scene_repulsion_loss(traj: &TrajectoryState, tree: &KdTree, radius: f64) -> LossValue {
    RepulsionMask::build(traj, tree, radius).loss(traj, tree)
}
