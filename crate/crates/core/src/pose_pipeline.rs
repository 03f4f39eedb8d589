//! Everything downstream of grasp-pose generation: the conditioning feature
//! vector, collision-aware candidate selection, and anchor extraction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    bps_encode, crop_volume_for_object, directional_offsets, farthest_point_sample, relative_to_global_rotations,
    surface_sample, volumetric_sample, BpsBasis, GeometryError, PointCloud, Rotation6D, SdfScene, TriMesh, Vec3,
    BPS_SIZE, DEFAULT_VOXEL_EDGE,
};
use crate::guidance::{HandAnchor, HAND_ROTATIONS, JOINT_COUNT, ROOT_JOINT};
use crate::metrics::frame_penetration_score;

pub const BODY_SAMPLE_COUNT: usize = 400;
pub const SHAPE_DIM: usize = 10;
pub const DEFAULT_CANDIDATE_COUNT: usize = 10;
pub const CANDIDATE_SCHEMA_VERSION: u32 = 1;
pub const FEATURE_SCHEMA_VERSION: u32 = 1;

/// Parent of each hand joint: wrist first, then five three-joint fingers.
pub const HAND_PARENTS: [i32; HAND_ROTATIONS] = [-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 0, 10, 11, 0, 13, 14];

#[derive(Debug, Error)]
pub enum PoseError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("head direction must be finite and non-zero")]
    HeadDirection,
    #[error("shape vector must have {SHAPE_DIM} entries, got {0}")]
    ShapeLength(usize),
    #[error("non-finite object translation")]
    ObjectTranslation,
    #[error("no candidates to choose from")]
    NoCandidates,
    #[error("candidate {index}: hand block needs {HAND_ROTATIONS} rotations, got {got}")]
    HandRotations { index: usize, got: usize },
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub voxel_edge: f64,
    /// Radius of the scene basis ball around the crop center.
    pub scene_bps_radius: f64,
    /// Radius of the object basis ball around the object origin.
    pub object_bps_radius: f64,
    pub bps_seed: u64,
    pub body_sample_seed: u64,
    pub object_surface_spacing: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            voxel_edge: DEFAULT_VOXEL_EDGE,
            scene_bps_radius: 1.2,
            object_bps_radius: 0.3,
            bps_seed: 0,
            body_sample_seed: 0,
            object_surface_spacing: 0.01,
        }
    }
}

/// Pass-through generator parameters for one pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    /// Axis-angle per joint, any joint count.
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub head_dir: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgapFeatureVector {
    pub schema_version: u32,
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub body_vertices: Vec<Vec3>,
    pub offsets: Vec<Vec3>,
    pub head_dir: Vec3,
    pub object_translation: Vec3,
    pub object_bps: Vec<f64>,
    /// Absent when the crop around the object holds no scene geometry.
    pub scene_bps: Option<Vec<f64>>,
    pub degenerate: bool,
    pub scene_points: usize,
    pub interior_skipped: bool,
}

impl SgapFeatureVector {
    /// Concatenation in the order Θ, β, V, D, ĥ, t, B_o, B_s. A missing scene encoding becomes zeros.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.theta.len() + SHAPE_DIM + 6 * BODY_SAMPLE_COUNT + 6 + 2 * BPS_SIZE);
        out.extend_from_slice(&self.theta);
        out.extend_from_slice(&self.beta);
        out.extend(self.body_vertices.iter().flat_map(|v| [v.x, v.y, v.z]));
        out.extend(self.offsets.iter().flat_map(|v| [v.x, v.y, v.z]));
        out.extend_from_slice(self.head_dir.as_slice());
        out.extend_from_slice(self.object_translation.as_slice());
        out.extend_from_slice(&self.object_bps);
        match &self.scene_bps {
            Some(b) => out.extend_from_slice(b),
            None => out.extend(std::iter::repeat_n(0.0, BPS_SIZE)),
        }
        out
    }
}

/// Builds the conditioning vector. `body_mesh_vertices` are world-space body
/// vertices, `object` is the object mesh in its rest frame placed at `object_translation`.
pub fn assemble_features(
    pose: &PoseParams,
    body_mesh_vertices: &[Vec3],
    object: &TriMesh,
    object_translation: Vec3,
    scene: &SdfScene,
    cfg: &FeatureConfig,
) -> Result<SgapFeatureVector, PoseError> {
    if !object_translation.iter().all(|v| v.is_finite()) {
        return Err(PoseError::ObjectTranslation);
    }
    if pose.beta.len() != SHAPE_DIM {
        return Err(PoseError::ShapeLength(pose.beta.len()));
    }
    let norm = pose.head_dir.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(PoseError::HeadDirection);
    }
    let head_dir = pose.head_dir / norm;

    let picks = farthest_point_sample(body_mesh_vertices, BODY_SAMPLE_COUNT, cfg.body_sample_seed)?;
    let body_vertices: Vec<Vec3> = picks.iter().map(|&i| body_mesh_vertices[i]).collect();

    let object_local = PointCloud::new(surface_sample(object, cfg.object_surface_spacing))?;
    let object_world = object_local.translated(&object_translation);
    let offsets = directional_offsets(&body_vertices, &object_world)?;
    let object_basis = BpsBasis::sample_ball(Vec3::zeros(), cfg.object_bps_radius, BPS_SIZE, cfg.bps_seed);
    let object_bps = bps_encode(&object_local, &object_basis.points)?;

    let crop = crop_volume_for_object(&object_translation);
    let sample = volumetric_sample(scene, &crop, cfg.voxel_edge)?;
    let scene_basis = BpsBasis::sample_ball(crop.center(), cfg.scene_bps_radius, BPS_SIZE, cfg.bps_seed.wrapping_add(1));
    let scene_bps = if sample.cloud.is_empty() {
        log::warn!("scene crop around the object is empty; scene encoding left undefined");
        None
    } else {
        Some(bps_encode(&sample.cloud, &scene_basis.points)?)
    };

    Ok(SgapFeatureVector {
        schema_version: FEATURE_SCHEMA_VERSION,
        theta: pose.theta.clone(),
        beta: pose.beta.clone(),
        body_vertices,
        offsets,
        head_dir,
        object_translation,
        object_bps,
        degenerate: scene_bps.is_none(),
        scene_bps,
        scene_points: sample.cloud.len(),
        interior_skipped: sample.interior_skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationFrame {
    #[default]
    Global,
    /// Parent-relative; the wrist rotation (index 0 on the default chain) is global.
    Relative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandBlock {
    pub wrist: Vec3,
    pub rotations: Vec<Rotation6D>,
    #[serde(default)]
    pub frame: RotationFrame,
    /// Parent chain for relative input; defaults to [`HAND_PARENTS`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parents: Option<Vec<i32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseCandidate {
    #[serde(default)]
    pub id: String,
    pub joints: [Vec3; JOINT_COUNT],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hand: Option<HandBlock>,
    /// Body points used for collision scoring; the joints stand in when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Vec<Vec3>>,
}

impl PoseCandidate {
    pub fn scoring_points(&self) -> &[Vec3] {
        self.body.as_deref().unwrap_or(&self.joints)
    }
}

#[derive(Serialize, Deserialize)]
struct CandidateFile {
    schema_version: u32,
    candidates: Vec<PoseCandidate>,
}

pub fn candidates_from_json(text: &str) -> Result<Vec<PoseCandidate>, PoseError> {
    let file: CandidateFile = serde_json::from_str(text)?;
    if file.schema_version != CANDIDATE_SCHEMA_VERSION {
        return Err(PoseError::SchemaVersion(file.schema_version));
    }
    Ok(file.candidates)
}

pub fn candidates_to_json(candidates: &[PoseCandidate]) -> Result<String, PoseError> {
    Ok(serde_json::to_string_pretty(&CandidateFile {
        schema_version: CANDIDATE_SCHEMA_VERSION,
        candidates: candidates.to_vec(),
    })?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub index: usize,
    pub scores: Vec<f64>,
}

/// Index of the smallest score; the earliest index wins ties.
pub fn argmin_score(scores: &[f64]) -> Option<usize> {
    scores
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &s)| match best {
            Some((_, b)) if b <= s => best,
            _ => Some((i, s)),
        })
        .map(|(i, _)| i)
}

/// Scores each candidate by its penetration into the scene and keeps the least colliding.
pub fn filter_candidates(candidates: &[PoseCandidate], scene: &SdfScene) -> Result<Selection, PoseError> {
    let scores: Vec<f64> = candidates
        .iter()
        .map(|c| frame_penetration_score(c.scoring_points(), scene))
        .collect();
    let index = argmin_score(&scores).ok_or(PoseError::NoCandidates)?;
    Ok(Selection { index, scores })
}

/// Anchor entry for one key pose; `hand` is absent for root-only anchors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorEntry {
    pub root: Vec3,
    pub hand: Option<(Vec3, [Rotation6D; HAND_ROTATIONS])>,
}

impl AnchorEntry {
    pub fn hand_anchor(&self, frame: usize) -> Option<HandAnchor> {
        self.hand.map(|(wrist, rotations)| HandAnchor {
            frame,
            wrist,
            rotations,
        })
    }
}

pub fn extract_anchors(candidate: &PoseCandidate, index: usize) -> Result<AnchorEntry, PoseError> {
    let root = candidate.joints[ROOT_JOINT];
    let Some(hand) = &candidate.hand else {
        return Ok(AnchorEntry { root, hand: None });
    };
    if hand.rotations.len() != HAND_ROTATIONS {
        return Err(PoseError::HandRotations {
            index,
            got: hand.rotations.len(),
        });
    }
    let rotations: [Rotation6D; HAND_ROTATIONS] = match hand.frame {
        RotationFrame::Global => std::array::from_fn(|k| hand.rotations[k]),
        RotationFrame::Relative => {
            let parents = hand.parents.as_deref().unwrap_or(&HAND_PARENTS);
            let local = hand.rotations.iter().map(Rotation6D::to_matrix).collect::<Result<Vec<_>, _>>()?;
            let global = relative_to_global_rotations(parents, &local)?;
            std::array::from_fn(|k| Rotation6D::from_matrix(&global[k]))
        }
    };
    Ok(AnchorEntry {
        root,
        hand: Some((hand.wrist, rotations)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{penetration_stats, MotionSequence};
    use nalgebra::{Matrix3, Rotation3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene_box() -> SdfScene {
        SdfScene::new(TriMesh::cuboid(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0))).unwrap()
    }

    fn body_cloud(center: Vec3, n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| center + Vec3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.9..0.8)))
            .collect()
    }

    fn params(head: Vec3) -> PoseParams {
        PoseParams {
            theta: vec![0.1; 66],
            beta: vec![0.0; SHAPE_DIM],
            head_dir: head,
        }
    }

    fn candidate(joints_at: Vec3, body: Vec<Vec3>) -> PoseCandidate {
        PoseCandidate {
            id: String::new(),
            joints: [joints_at; JOINT_COUNT],
            hand: None,
            body: Some(body),
        }
    }

    #[test]
    fn features_layout_and_normalization() {
        let scene = scene_box();
        let object = TriMesh::cuboid(Vec3::from([-0.05; 3]), Vec3::from([0.05; 3]));
        let body = body_cloud(Vec3::new(1.5, 0.5, 0.95), 800, 1);
        let f = assemble_features(&params(Vec3::new(0.0, 2.0, 0.0)), &body, &object, Vec3::new(1.2, 0.5, 0.9), &scene, &FeatureConfig::default())
            .unwrap();
        assert_eq!(f.head_dir, Vec3::new(0.0, 1.0, 0.0));
        assert!(!f.degenerate);
        assert_eq!(f.body_vertices.len(), BODY_SAMPLE_COUNT);
        assert_eq!(f.offsets.len(), BODY_SAMPLE_COUNT);
        assert_eq!(f.object_bps.len(), BPS_SIZE);
        assert_eq!(f.scene_bps.as_ref().unwrap().len(), BPS_SIZE);
        assert_eq!(f.to_flat().len(), 66 + SHAPE_DIM + 2400 + 6 + 2048);
    }

    #[test]
    fn empty_crop_is_degenerate() {
        let scene = scene_box();
        let object = TriMesh::cuboid(Vec3::from([-0.05; 3]), Vec3::from([0.05; 3]));
        let far = Vec3::new(20.0, 20.0, 0.9);
        let body = body_cloud(far, 500, 2);
        let f = assemble_features(&params(Vec3::x()), &body, &object, far, &scene, &FeatureConfig::default()).unwrap();
        assert!(f.degenerate);
        assert!(f.scene_bps.is_none());
        assert_eq!(f.scene_points, 0);
    }

    #[test]
    fn feature_errors() {
        let scene = scene_box();
        let object = TriMesh::cuboid(Vec3::from([-0.05; 3]), Vec3::from([0.05; 3]));
        let body = body_cloud(Vec3::new(1.5, 0.5, 0.95), 500, 3);
        let cfg = FeatureConfig::default();
        let t = Vec3::new(1.2, 0.5, 0.9);
        assert!(matches!(
            assemble_features(&params(Vec3::zeros()), &body, &object, t, &scene, &cfg),
            Err(PoseError::HeadDirection)
        ));
        assert!(matches!(
            assemble_features(&params(Vec3::x()), &body[..100], &object, t, &scene, &cfg),
            Err(PoseError::Geometry(GeometryError::NotEnoughPoints { .. }))
        ));
        let nan = Vec3::new(f64::NAN, 0.0, 0.0);
        assert!(matches!(
            assemble_features(&params(Vec3::x()), &body, &object, nan, &scene, &cfg),
            Err(PoseError::ObjectTranslation)
        ));
    }

    #[test]
    fn features_are_byte_identical_across_runs() {
        let scene = scene_box();
        let object = TriMesh::cuboid(Vec3::from([-0.05; 3]), Vec3::from([0.05; 3]));
        let body = body_cloud(Vec3::new(1.5, 0.5, 0.95), 600, 4);
        let run = || {
            let f = assemble_features(&params(Vec3::x()), &body, &object, Vec3::new(1.2, 0.5, 0.9), &scene, &FeatureConfig::default())
                .unwrap();
            serde_json::to_vec(&f).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn argmin_examples() {
        assert_eq!(argmin_score(&[0.1, 0.0, 0.3]), Some(1));
        assert_eq!(argmin_score(&[0.0, 0.0, 0.0]), Some(0));
        assert_eq!(argmin_score(&[]), None);
    }

    /// Depth below the surface of the unit box at the origin, 0 outside.
    fn box_depth(p: &Vec3) -> f64 {
        let d = [p.x, 1.0 - p.x, p.y, 1.0 - p.y, p.z, 1.0 - p.z];
        let m = d.iter().copied().fold(f64::INFINITY, f64::min);
        m.max(0.0)
    }

    #[test]
    fn selection_matches_brute_force() {
        let scene = scene_box();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..20 {
            let cands: Vec<PoseCandidate> = (0..DEFAULT_CANDIDATE_COUNT)
                .map(|_| {
                    let c = Vec3::new(rng.gen_range(0.6..2.0), rng.gen_range(-0.5..1.5), 0.95);
                    candidate(c, body_cloud(c, 60, rng.gen()))
                })
                .collect();
            let sel = filter_candidates(&cands, &scene).unwrap();
            let brute: Vec<f64> = cands.iter().map(|c| c.scoring_points().iter().map(box_depth).sum()).collect();
            for (a, b) in sel.scores.iter().zip(&brute) {
                assert!((a - b).abs() < 1e-9, "trial {trial}");
            }
            assert_eq!(Some(sel.index), argmin_score(&brute));
            // shared with the metric's single-frame penetration volume
            for (c, s) in cands.iter().zip(&sel.scores) {
                let seq = MotionSequence {
                    frame_rate: 30.0,
                    body: vec![c.scoring_points().to_vec()],
                    hand_vertices: vec![],
                    objects: vec![],
                };
                assert_eq!(penetration_stats(&seq, &scene).mean, *s);
            }
        }
        assert!(matches!(filter_candidates(&[], &scene), Err(PoseError::NoCandidates)));
    }

    #[test]
    fn anchors_projection_and_chain() {
        let mut c = candidate(Vec3::zeros(), vec![]);
        c.joints[ROOT_JOINT] = Vec3::new(1.0, 2.0, 0.95);
        let a = extract_anchors(&c, 0).unwrap();
        assert_eq!(a.root, Vec3::new(1.0, 2.0, 0.95));
        assert!(a.hand.is_none());

        let odd = Rotation6D([0.6, 0.8, 0.0, -0.8, 0.6, 0.0]);
        c.hand = Some(HandBlock {
            wrist: Vec3::new(0.3, 0.1, 1.0),
            rotations: vec![odd; HAND_ROTATIONS],
            frame: RotationFrame::Global,
            parents: None,
        });
        let (_, g) = extract_anchors(&c, 0).unwrap().hand.unwrap();
        // pure projection, no renormalization
        assert!(g.iter().all(|r| r.0 == odd.0));

        c.hand.as_mut().unwrap().frame = RotationFrame::Relative;
        c.hand.as_mut().unwrap().rotations = vec![Rotation6D::IDENTITY; HAND_ROTATIONS];
        let (_, g) = extract_anchors(&c, 0).unwrap().hand.unwrap();
        assert!(g.iter().all(|r| *r == Rotation6D::IDENTITY));
    }

    fn recursive_fk(parents: &[i32], local: &[Matrix3<f64>], i: usize) -> Matrix3<f64> {
        match parents[i] {
            p if p < 0 => local[i],
            p => recursive_fk(parents, local, p as usize) * local[i],
        }
    }

    #[test]
    fn relative_hand_matches_recursive_fk() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let local: Vec<Matrix3<f64>> = (0..HAND_ROTATIONS)
            .map(|_| {
                let axis = nalgebra::Unit::new_normalize(Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
                Rotation3::from_axis_angle(&axis, rng.gen_range(-2.0..2.0)).into_inner()
            })
            .collect();
        let mut c = candidate(Vec3::zeros(), vec![]);
        c.hand = Some(HandBlock {
            wrist: Vec3::zeros(),
            rotations: local.iter().map(Rotation6D::from_matrix).collect(),
            frame: RotationFrame::Relative,
            parents: None,
        });
        let (_, g) = extract_anchors(&c, 0).unwrap().hand.unwrap();
        for k in 0..HAND_ROTATIONS {
            let oracle = recursive_fk(&HAND_PARENTS, &local, k);
            assert!((g[k].to_matrix().unwrap() - oracle).norm() < 1e-12);
        }
        c.hand.as_mut().unwrap().rotations.pop();
        assert!(matches!(extract_anchors(&c, 3), Err(PoseError::HandRotations { index: 3, got: 15 })));
    }

    #[test]
    fn candidate_file_round_trip() {
        let c = candidate(Vec3::new(1.0, 0.0, 0.9), vec![Vec3::zeros()]);
        let text = candidates_to_json(&[c.clone()]).unwrap();
        assert_eq!(candidates_from_json(&text).unwrap(), vec![c]);
    }
}
