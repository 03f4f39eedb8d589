use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HandPose, SkeletonPose, TrajectoryState, HAND_ROTATIONS, JOINT_COUNT};
use crate::geometry::{Rotation6D, Vec3};

/// Standing rest pose relative to the pelvis; body frame x forward, y left, z up.
const REST_OFFSETS: [[f64; 3]; JOINT_COUNT] = [
    [0.0, 0.0, 0.0],
    [0.0, 0.09, -0.09],
    [0.0, -0.09, -0.09],
    [0.0, 0.0, 0.11],
    [0.0, 0.10, -0.47],
    [0.0, -0.10, -0.47],
    [0.0, 0.0, 0.25],
    [0.0, 0.10, -0.86],
    [0.0, -0.10, -0.86],
    [0.0, 0.0, 0.31],
    [0.12, 0.10, -0.90],
    [0.12, -0.10, -0.90],
    [0.0, 0.0, 0.52],
    [0.0, 0.07, 0.43],
    [0.0, -0.07, 0.43],
    [0.03, 0.0, 0.62],
    [0.0, 0.18, 0.45],
    [0.0, -0.18, 0.45],
    [0.0, 0.20, 0.20],
    [0.0, -0.20, 0.20],
    [0.0, 0.21, -0.05],
    [0.0, -0.21, -0.05],
];
const RIGHT_WRIST: usize = 21;

/// Rest pose with the pelvis at `root`, facing `yaw` radians about +z.
pub fn canonical_skeleton(root: Vec3, yaw: f64) -> SkeletonPose {
    let rot = Rotation3::from_axis_angle(&Vec3::z_axis(), yaw);
    let joints = std::array::from_fn(|k| {
        let [x, y, z] = REST_OFFSETS[k];
        root + rot * Vec3::new(x, y, z)
    });
    let r6 = Rotation6D::from_matrix(rot.matrix());
    SkeletonPose {
        hand: HandPose {
            wrist: joints[RIGHT_WRIST],
            rotations: [r6; HAND_ROTATIONS],
        },
        joints,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub frame_rate: f64,
    /// Amplitude of the smooth lateral/vertical wobble added to the root, meters.
    pub wobble: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frame_rate: 30.0,
            wobble: 0.03,
            seed: 0,
        }
    }
}

/// Rest-pose walk through `waypoints`, reaching waypoint `k` near frame
/// `frames[k]`, perturbed by a seeded wobble so guidance has something to correct.
pub fn synthesize_walk(waypoints: &[[f64; 3]], frames: &[usize], cfg: &SynthConfig) -> TrajectoryState {
    let count = frames.last().map_or(0, |f| f + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let phase: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::TAU));
    let freq: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.5..1.5));
    let wp: Vec<Vec3> = waypoints.iter().map(|w| Vec3::new(w[0], w[1], w[2])).collect();

    let mut poses = Vec::with_capacity(count);
    let mut seg = 0;
    let mut yaw = 0.0;
    for f in 0..count {
        while seg + 1 < frames.len() && f > frames[seg + 1] {
            seg += 1;
        }
        let base = if frames.len() < 2 {
            wp[0]
        } else {
            let (f0, f1) = (frames[seg], frames[seg + 1]);
            let s = (f - f0) as f64 / (f1 - f0) as f64;
            let dir = wp[seg + 1] - wp[seg];
            if dir.xy().norm() > 1e-9 {
                yaw = dir.y.atan2(dir.x);
            }
            wp[seg] + s * dir
        };
        let t = f as f64 / cfg.frame_rate;
        let wobble = Vec3::from_fn(|c, _| cfg.wobble * (freq[c] * t + phase[c]).sin());
        poses.push(canonical_skeleton(base + wobble, yaw));
    }
    TrajectoryState::from_poses(&poses, cfg.frame_rate)
}
