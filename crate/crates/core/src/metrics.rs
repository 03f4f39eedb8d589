//! Object locomotion and SDF-based interaction metrics over motion sequences.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{SdfScene, Vec3};

pub const DEFAULT_SUCCESS_THRESHOLD: f64 = 0.05;
pub const DEFAULT_CONTACT_EPSILON: f64 = 0.005;
pub const MOTION_SCHEMA_VERSION: u32 = 1;
/// Penetration scores are sums of per-vertex depths.
pub const PENETRATION_UNITS: &str = "meters summed over vertices";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("sequence has no frames")]
    EmptySequence,
    #[error("object frames ({objects}) do not match human frames ({humans})")]
    FrameMismatch { humans: usize, objects: usize },
    #[error("frame rate must be > 0, got {0}")]
    InvalidFrameRate(f64),
    #[error("rotation is not orthonormal (deviation {0:.3e})")]
    NotOrthonormal(f64),
    #[error("hand vertex index {index} out of range for frame {frame} with {count} vertices")]
    HandIndex { frame: usize, index: usize, count: usize },
    #[error("sequence has no object poses")]
    NoObject,
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Rigid pose; `rotation` rows are stored in reading order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl RigidPose {
    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [t.x, t.y, t.z],
        }
    }

    pub fn from_parts(r: &Matrix3<f64>, t: Vec3) -> Self {
        Self {
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])),
            translation: [t.x, t.y, t.z],
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.rotation[i][j])
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::from(self.translation)
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let r = self.matrix();
        let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(dev < 1e-6 && r.determinant() > 0.0) {
            return Err(MetricsError::NotOrthonormal(dev));
        }
        Ok(())
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.matrix() * p + self.translation()
    }

    /// World point expressed in the body frame of this pose.
    pub fn inverse_apply(&self, p: &Vec3) -> Vec3 {
        self.matrix().transpose() * (p - self.translation())
    }

    pub fn compose(&self, inner: &RigidPose) -> RigidPose {
        RigidPose::from_parts(&(self.matrix() * inner.matrix()), self.apply(&inner.translation()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSequence {
    pub frame_rate: f64,
    /// Human vertices per frame.
    pub body: Vec<Vec<Vec3>>,
    /// Indices into each body frame that belong to the hands.
    #[serde(default)]
    pub hand_vertices: Vec<usize>,
    /// Object pose per frame, empty when no object is carried.
    #[serde(default)]
    pub objects: Vec<RigidPose>,
}

impl MotionSequence {
    pub fn frames(&self) -> usize {
        self.body.len()
    }

    /// Elapsed time between the first and last frame.
    pub fn duration(&self) -> f64 {
        self.frames().saturating_sub(1) as f64 / self.frame_rate
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.body.is_empty() {
            return Err(MetricsError::EmptySequence);
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(MetricsError::InvalidFrameRate(self.frame_rate));
        }
        if !self.objects.is_empty() && self.objects.len() != self.body.len() {
            return Err(MetricsError::FrameMismatch {
                humans: self.body.len(),
                objects: self.objects.len(),
            });
        }
        for o in &self.objects {
            o.validate()?;
        }
        for (frame, verts) in self.body.iter().enumerate() {
            if let Some(&index) = self.hand_vertices.iter().find(|&&i| i >= verts.len()) {
                return Err(MetricsError::HandIndex {
                    frame,
                    index,
                    count: verts.len(),
                });
            }
        }
        Ok(())
    }

    /// Apply one rigid transform to every vertex and object pose.
    pub fn transformed(&self, t: &RigidPose) -> MotionSequence {
        MotionSequence {
            frame_rate: self.frame_rate,
            body: self.body.iter().map(|f| f.iter().map(|v| t.apply(v)).collect()).collect(),
            hand_vertices: self.hand_vertices.clone(),
            objects: self.objects.iter().map(|o| t.compose(o)).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String, MetricsError> {
        Ok(serde_json::to_string_pretty(&MotionFile {
            schema_version: MOTION_SCHEMA_VERSION,
            sequence: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self, MetricsError> {
        let file: MotionFile = serde_json::from_str(text)?;
        if file.schema_version != MOTION_SCHEMA_VERSION {
            return Err(MetricsError::SchemaVersion(file.schema_version));
        }
        file.sequence.validate()?;
        Ok(file.sequence)
    }
}

#[derive(Serialize, Deserialize)]
struct MotionFile {
    schema_version: u32,
    #[serde(flatten)]
    sequence: MotionSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectTask {
    pub start: RigidPose,
    pub target: RigidPose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Locomotion {
    pub dist: f64,
    pub time: f64,
    pub success: bool,
}

pub fn locomotion_metrics(seq: &MotionSequence, task: &ObjectTask, threshold: f64) -> Result<Locomotion, MetricsError> {
    let last = seq.objects.last().ok_or(MetricsError::NoObject)?;
    let dist = (last.translation() - task.target.translation()).norm();
    Ok(Locomotion {
        dist,
        time: seq.duration(),
        success: dist <= threshold,
    })
}

/// `Σ_v |φ(v)| · 𝕀(φ(v) < 0)` for one set of vertices. Candidate filtering uses the same score.
pub fn frame_penetration_score(vertices: &[Vec3], scene: &SdfScene) -> f64 {
    vertices
        .iter()
        .map(|v| scene.sdf(v))
        .filter(|d| *d < 0.0)
        .map(f64::abs)
        .sum()
}

fn frame_penetration(vertices: &[Vec3], sdf: impl Fn(&Vec3) -> f64) -> (bool, f64) {
    let mut any = false;
    let mut score = 0.0;
    for v in vertices {
        let d = sdf(v);
        if d < 0.0 {
            any = true;
            score += -d;
        }
    }
    (any, score)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenetrationStats {
    pub rate: f64,
    pub mean: f64,
    pub max: f64,
    pub per_frame: Vec<f64>,
}

fn stats_from(frames: Vec<(bool, f64)>) -> PenetrationStats {
    let n = frames.len().max(1) as f64;
    let rate = frames.iter().filter(|f| f.0).count() as f64 / n;
    let per_frame: Vec<f64> = frames.into_iter().map(|f| f.1).collect();
    let mean = per_frame.iter().sum::<f64>() / n;
    let max = per_frame.iter().copied().fold(0.0, f64::max);
    PenetrationStats {
        rate,
        mean,
        max,
        per_frame,
    }
}

/// Rate of frames with any vertex inside `scene`, and mean/max of the per-frame score.
pub fn penetration_stats(seq: &MotionSequence, scene: &SdfScene) -> PenetrationStats {
    stats_from(seq.body.iter().map(|f| frame_penetration(f, |v| scene.sdf(v))).collect())
}

pub fn penetration_rate(seq: &MotionSequence, scene: &SdfScene) -> f64 {
    penetration_stats(seq, scene).rate
}

/// `(mean, max)` of the per-frame penetration score.
pub fn penetration_volume(seq: &MotionSequence, scene: &SdfScene) -> (f64, f64) {
    let s = penetration_stats(seq, scene);
    (s.mean, s.max)
}

/// Penetration of the body into the carried object, whose rest-frame mesh is `object`.
pub fn object_penetration_stats(seq: &MotionSequence, object: &SdfScene) -> Result<PenetrationStats, MetricsError> {
    if seq.objects.is_empty() {
        return Err(MetricsError::NoObject);
    }
    Ok(stats_from(
        seq.body
            .iter()
            .zip(&seq.objects)
            .map(|(f, pose)| frame_penetration(f, |v| object.sdf(&pose.inverse_apply(v))))
            .collect(),
    ))
}

/// Fraction of frames in the inclusive `window` where some hand vertex lies
/// within `epsilon` of the posed object surface. `None` when the window is empty.
pub fn contact_rate(
    seq: &MotionSequence,
    object: &SdfScene,
    window: Option<[usize; 2]>,
    epsilon: f64,
) -> Result<Option<f64>, MetricsError> {
    let Some([first, last]) = window else {
        return Ok(None);
    };
    if seq.objects.is_empty() {
        return Err(MetricsError::NoObject);
    }
    let last = last.min(seq.frames().saturating_sub(1));
    if first > last || seq.hand_vertices.is_empty() {
        return Ok(None);
    }
    let mut hits = 0usize;
    for f in first..=last {
        let pose = &seq.objects[f];
        let touching = seq.hand_vertices.iter().any(|&i| {
            let local = pose.inverse_apply(&seq.body[f][i]);
            object.unsigned_distance(&local) <= epsilon
        });
        hits += touching as usize;
    }
    Ok(Some(hits as f64 / (last - first + 1) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub success_threshold: f64,
    pub contact_epsilon: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            success_threshold: DEFAULT_SUCCESS_THRESHOLD,
            contact_epsilon: DEFAULT_CONTACT_EPSILON,
        }
    }
}

/// One row of the evaluation table. Keys follow the usual column names;
/// object-related entries are absent without an object.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    #[serde(rename = "Dist.")]
    pub dist: Option<f64>,
    #[serde(rename = "Time")]
    pub time: f64,
    #[serde(rename = "Rate")]
    pub success: Option<bool>,
    #[serde(rename = "Pene. Rate")]
    pub pene_rate: f64,
    #[serde(rename = "Pene. Mean")]
    pub pene_mean: f64,
    #[serde(rename = "Pene. Max")]
    pub pene_max: f64,
    #[serde(rename = "Contact Rate")]
    pub contact_rate: Option<f64>,
    #[serde(rename = "Obj. Pene. Mean")]
    pub object_pene_mean: Option<f64>,
    #[serde(rename = "Obj. Pene. Max")]
    pub object_pene_max: Option<f64>,
    pub frames: usize,
    pub success_threshold: f64,
    pub contact_epsilon: f64,
    pub penetration_units: &'static str,
}

pub struct EvalInputs<'a> {
    pub sequence: &'a MotionSequence,
    pub scene: &'a SdfScene,
    pub task: Option<&'a ObjectTask>,
    pub object: Option<&'a SdfScene>,
    pub contact_window: Option<[usize; 2]>,
}

pub fn evaluate(inputs: &EvalInputs, cfg: &MetricConfig) -> Result<MetricReport, MetricsError> {
    let seq = inputs.sequence;
    seq.validate()?;
    let loco = match inputs.task {
        Some(task) if !seq.objects.is_empty() => Some(locomotion_metrics(seq, task, cfg.success_threshold)?),
        _ => None,
    };
    let scene = penetration_stats(seq, inputs.scene);
    let (contact, obj) = match inputs.object {
        Some(object) if !seq.objects.is_empty() => (
            contact_rate(seq, object, inputs.contact_window, cfg.contact_epsilon)?,
            Some(object_penetration_stats(seq, object)?),
        ),
        _ => (None, None),
    };
    Ok(MetricReport {
        dist: loco.map(|l| l.dist),
        time: seq.duration(),
        success: loco.map(|l| l.success),
        pene_rate: scene.rate,
        pene_mean: scene.mean,
        pene_max: scene.max,
        contact_rate: contact,
        object_pene_mean: obj.as_ref().map(|o| o.mean),
        object_pene_max: obj.as_ref().map(|o| o.max),
        frames: seq.frames(),
        success_threshold: cfg.success_threshold,
        contact_epsilon: cfg.contact_epsilon,
        penetration_units: PENETRATION_UNITS,
    })
}

pub const CSV_HEADER: &str =
    "sequence,Dist.,Time,Rate,Pene. Rate,Pene. Mean,Pene. Max,Contact Rate,Obj. Pene. Mean,Obj. Pene. Max";

/// One CSV row per named report; undefined entries are left empty.
pub fn reports_to_csv(rows: &[(String, MetricReport)]) -> String {
    fn opt(v: Option<f64>) -> String {
        v.map(|x| format!("{x:.6}")).unwrap_or_default()
    }
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (name, r) in rows {
        let fields = [
            name.replace(',', "_"),
            opt(r.dist),
            format!("{:.6}", r.time),
            r.success.map(|s| if s { "1" } else { "0" }.to_string()).unwrap_or_default(),
            format!("{:.6}", r.pene_rate),
            format!("{:.6}", r.pene_mean),
            format!("{:.6}", r.pene_max),
            opt(r.contact_rate),
            opt(r.object_pene_mean),
            opt(r.object_pene_max),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}
