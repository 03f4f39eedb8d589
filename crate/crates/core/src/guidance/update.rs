use serde::Serialize;

use super::{hand_loss, root_loss, AnchorTuple, GuidanceError, GuidanceParams, RepulsionMask, TrajectoryState};
use crate::geometry::{KdTree, Rotation6D, Vec3};

/// Anchors plus the optional path-aligned scene cloud the update pulls toward and pushes from.
#[derive(Debug, Clone)]
pub struct GuidanceObjective {
    pub anchors: AnchorTuple,
    pub scene: Option<KdTree>,
}

impl GuidanceObjective {
    pub fn new(anchors: AnchorTuple, scene_points: Option<&[Vec3]>) -> Self {
        Self {
            anchors,
            scene: scene_points.filter(|p| !p.is_empty()).map(KdTree::new),
        }
    }
}

/// Loss values before the step, and how many joint/point pairs were inside the repulsion radius.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct GuidanceReport {
    pub root: f64,
    pub hand: f64,
    pub scene: f64,
    pub repulsion_pairs: usize,
}

/// One step `μ ← μ − τ ∇(λ1 L_root + λ2 L_hand + λ3 L_s)` with the repulsion
/// neighbourhoods frozen at the current `μ`.
pub fn guided_update(
    traj: &TrajectoryState,
    objective: &GuidanceObjective,
    params: &GuidanceParams,
) -> Result<(TrajectoryState, GuidanceReport), GuidanceError> {
    params.validate()?;
    if params.tau == 0.0 {
        return Ok((traj.clone(), GuidanceReport::default()));
    }
    let a = &objective.anchors;
    a.validate(traj.frames())?;
    let root = root_loss(traj, &a.root, &a.root_frames)?;
    let wrists: Vec<Vec3> = a.hands.iter().map(|h| h.wrist).collect();
    let rots: Vec<[Rotation6D; 16]> = a.hands.iter().map(|h| h.rotations).collect();
    let frames: Vec<usize> = a.hands.iter().map(|h| h.frame).collect();
    let hand = hand_loss(traj, &wrists, &rots, &frames)?;
    let scene = objective.scene.as_ref().map(|tree| {
        let mask = RepulsionMask::build(traj, tree, params.repulsion_radius);
        (mask.loss(traj, tree), mask.pair_count())
    });

    let x = traj.as_flat();
    let mut out = x.to_vec();
    for i in 0..x.len() {
        let mut g = params.lambda1 * root.grad[i] + params.lambda2 * hand.grad[i];
        if let Some((s, _)) = &scene {
            g += params.lambda3 * s.grad[i];
        }
        if !g.is_finite() {
            return Err(GuidanceError::NonFiniteGradient { index: i });
        }
        out[i] = x[i] - params.tau * g;
    }
    let report = GuidanceReport {
        root: root.value,
        hand: hand.value,
        scene: scene.as_ref().map_or(0.0, |(s, _)| s.value),
        repulsion_pairs: scene.map_or(0, |(_, n)| n),
    };
    Ok((TrajectoryState::from_flat(out, traj.frame_rate())?, report))
}

/// Source of the predicted mean at each denoising step.
pub trait Denoiser {
    fn denoise(&mut self, traj: &TrajectoryState, t: usize) -> TrajectoryState;
}

/// Stands in for a trained model: the mean passes through unchanged.
pub struct PassThrough;

impl Denoiser for PassThrough {
    fn denoise(&mut self, traj: &TrajectoryState, _t: usize) -> TrajectoryState {
        traj.clone()
    }
}

/// Denoise from `t = total_steps − 1` down to 0, applying a guided update at
/// every step in `params.guided_timesteps`. Returns the final mean and one
/// report per guided step.
pub fn run_guidance(
    initial: &TrajectoryState,
    objective: &GuidanceObjective,
    params: &GuidanceParams,
    denoiser: &mut dyn Denoiser,
    total_steps: usize,
) -> Result<(TrajectoryState, Vec<GuidanceReport>), GuidanceError> {
    let mut mu = initial.clone();
    let mut reports = Vec::new();
    for t in (0..total_steps).rev() {
        mu = denoiser.denoise(&mu, t);
        if params.guided_timesteps.contains(t) {
            let (next, report) = guided_update(&mu, objective, params)?;
            mu = next;
            reports.push(report);
        }
    }
    Ok((mu, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::tests::sample_pose;
    use crate::guidance::{scene_repulsion_loss, GuidedTimesteps, HandAnchor, FRAME_DIM, ROOT_JOINT};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (TrajectoryState, GuidanceObjective) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let poses: Vec<_> = (0..5).map(|_| sample_pose(rng.gen())).collect();
        let t = TrajectoryState::from_poses(&poses, 30.0);
        let mut anchors = AnchorTuple::from_schedule(&[[0.0, 0.0, 0.95], [0.5, 0.2, 0.9]], &[0, 4]);
        anchors.hands.push(HandAnchor {
            frame: 2,
            wrist: Vec3::new(0.2, 0.3, 1.0),
            rotations: std::array::from_fn(|_| Rotation6D(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))),
        });
        let pts: Vec<Vec3> = (0..400)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0)))
            .collect();
        (t, GuidanceObjective::new(anchors, Some(&pts)))
    }

    #[test]
    fn zero_tau_is_bitwise_identity() {
        let (t, obj) = setup(1);
        let params = GuidanceParams {
            tau: 0.0,
            ..GuidanceParams::default()
        };
        let (out, _) = guided_update(&t, &obj, &params).unwrap();
        let same = t.as_flat().iter().zip(out.as_flat()).all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same);
    }

    #[test]
    fn root_only_step_moves_toward_anchor() {
        let pose = sample_pose(2);
        let t = TrajectoryState::from_poses(&[pose.clone()], 30.0);
        let d = Vec3::new(0.1, -0.2, 0.05);
        let anchor = pose.root() + d;
        let obj = GuidanceObjective::new(AnchorTuple::from_schedule(&[[anchor.x, anchor.y, anchor.z]], &[0]), None);
        let params = GuidanceParams {
            tau: 0.1,
            lambda1: 0.7,
            ..GuidanceParams::default()
        };
        let (out, _) = guided_update(&t, &obj, &params).unwrap();
        let moved = out.root(0) - pose.root();
        assert!((moved - 2.0 * 0.1 * 0.7 * d).norm() < 1e-15);
        assert_eq!(out.joint(0, 3), t.joint(0, 3));
    }

    #[test]
    fn update_is_termwise_recomposition() {
        let (t, obj) = setup(3);
        let params = GuidanceParams {
            repulsion_radius: 0.3,
            ..GuidanceParams::default()
        };
        let (out, report) = guided_update(&t, &obj, &params).unwrap();
        assert!(report.repulsion_pairs > 0);
        let a = &obj.anchors;
        let g1 = root_loss(&t, &a.root, &a.root_frames).unwrap().grad;
        let g2 = hand_loss(&t, &[a.hands[0].wrist], &[a.hands[0].rotations], &[a.hands[0].frame])
            .unwrap()
            .grad;
        let g3 = scene_repulsion_loss(&t, obj.scene.as_ref().unwrap(), 0.3).grad;
        for i in 0..t.as_flat().len() {
            let expected = t.as_flat()[i] - params.tau * (params.lambda1 * g1[i] + params.lambda2 * g2[i] + params.lambda3 * g3[i]);
            assert_eq!(out.as_flat()[i], expected);
        }
    }

    #[test]
    fn gradients_are_linear_in_weights() {
        let (t, obj) = setup(4);
        let run = |l1: f64, l3: f64| {
            let p = GuidanceParams {
                tau: 1.0,
                lambda1: l1,
                lambda2: 0.0,
                lambda3: l3,
                ..GuidanceParams::default()
            };
            let (out, _) = guided_update(&t, &obj, &p).unwrap();
            t.as_flat().iter().zip(out.as_flat()).map(|(a, b)| a - b).collect::<Vec<f64>>()
        };
        let (a, b, ab) = (run(2.0, 0.0), run(0.0, 3.0), run(2.0, 3.0));
        for i in 0..a.len() {
            assert!((a[i] + b[i] - ab[i]).abs() <= 1e-12 * (1.0 + ab[i].abs()));
        }
    }

    #[test]
    fn satisfied_anchors_and_empty_neighbourhoods_are_identity() {
        let pose = sample_pose(5);
        let t = TrajectoryState::from_poses(&[pose.clone()], 30.0);
        let r = pose.root();
        let mut anchors = AnchorTuple::from_schedule(&[[r.x, r.y, r.z]], &[0]);
        anchors.hands.push(HandAnchor {
            frame: 0,
            wrist: pose.hand.wrist,
            rotations: pose.hand.rotations,
        });
        let far = [Vec3::new(100.0, 100.0, 100.0)];
        let obj = GuidanceObjective::new(anchors, Some(&far));
        let (out, report) = guided_update(&t, &obj, &GuidanceParams::default()).unwrap();
        assert_eq!(out, t);
        assert_eq!(report.repulsion_pairs, 0);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let t = TrajectoryState::from_poses(&[sample_pose(6)], 30.0);
        let obj = GuidanceObjective::new(AnchorTuple::from_schedule(&[[1e308, 0.0, 0.0]], &[0]), None);
        let params = GuidanceParams {
            lambda1: 10.0,
            ..GuidanceParams::default()
        };
        match guided_update(&t, &obj, &params) {
            Err(GuidanceError::NonFiniteGradient { index }) => assert_eq!(index, ROOT_JOINT * 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schedule_controls_guided_steps() {
        let (t, obj) = setup(7);
        let params = GuidanceParams::default();
        let (_, reports) = run_guidance(&t, &obj, &params, &mut PassThrough, 50).unwrap();
        assert_eq!(reports.len(), 10);
        let all = GuidanceParams {
            guided_timesteps: GuidedTimesteps::All,
            lambda3: 0.0,
            lambda2: 0.0,
            ..GuidanceParams::default()
        };
        let (out, reports) = run_guidance(&t, &obj, &all, &mut PassThrough, 200).unwrap();
        assert_eq!(reports.len(), 200);
        for (a, &f) in obj.anchors.root.iter().zip(&obj.anchors.root_frames) {
            assert!((out.root(f) - a).norm() < 1e-9);
        }
        assert_eq!(out.as_flat()[FRAME_DIM + 5], t.as_flat()[FRAME_DIM + 5]);
    }
}
