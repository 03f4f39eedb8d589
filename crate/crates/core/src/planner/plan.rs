use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{
    astar_segment, HeuristicConfig, InvalidNode, PlanError, DEFAULT_BASE_HEIGHT, DEFAULT_FRAME_INTERVAL,
    DEFAULT_STRIDE,
};
use crate::obstacle_map::{GridCoord, ObstacleMap};

/// World-space keypoint. Reads as `[x, y]` or `[x, y, z]`; a given `z`
/// overrides the root height at that keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "KeypointRepr", into = "KeypointRepr")]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub height: Option<f64>,
}

impl Keypoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y, height: None }
    }

    pub fn with_height(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, height: Some(z) }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum KeypointRepr {
    Xy([f64; 2]),
    Xyz([f64; 3]),
}

impl From<KeypointRepr> for Keypoint {
    fn from(r: KeypointRepr) -> Self {
        match r {
            KeypointRepr::Xy([x, y]) => Keypoint::new(x, y),
            KeypointRepr::Xyz([x, y, z]) => Keypoint::with_height(x, y, z),
        }
    }
}

impl From<Keypoint> for KeypointRepr {
    fn from(k: Keypoint) -> Self {
        match k.height {
            Some(z) => KeypointRepr::Xyz([k.x, k.y, z]),
            None => KeypointRepr::Xy([k.x, k.y]),
        }
    }
}

/// Nearest walkable cell for an operator to move a keypoint onto.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub cell: GridCoord,
    pub world: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum KeypointStatus {
    Walkable {
        cell: GridCoord,
    },
    Obstacle {
        cell: GridCoord,
        value: f64,
        suggestion: Option<Suggestion>,
    },
    OutOfBounds {
        nearest_cell: GridCoord,
        suggestion: Option<Suggestion>,
    },
}

impl KeypointStatus {
    pub fn is_walkable(&self) -> bool {
        matches!(self, KeypointStatus::Walkable { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            KeypointStatus::Walkable { .. } => "walkable",
            KeypointStatus::Obstacle { .. } => "obstacle",
            KeypointStatus::OutOfBounds { .. } => "out_of_bounds",
        }
    }
}

/// Breadth-first search for the closest zero-valued cell (Manhattan metric).
fn nearest_walkable(map: &ObstacleMap, from: GridCoord) -> Option<GridCoord> {
    let mut seen = vec![false; map.values().len()];
    let mut queue = VecDeque::from([from]);
    seen[map.index(from)] = true;
    while let Some(c) = queue.pop_front() {
        if map.is_walkable(c) {
            return Some(c);
        }
        for nb in map.neighbors4(c) {
            let k = map.index(nb);
            if !seen[k] {
                seen[k] = true;
                queue.push_back(nb);
            }
        }
    }
    None
}

fn suggest(map: &ObstacleMap, from: GridCoord) -> Option<Suggestion> {
    nearest_walkable(map, from).map(|cell| Suggestion {
        cell,
        world: map.grid_to_world(cell),
    })
}

pub fn validate_keypoints(map: &ObstacleMap, keypoints: &[Keypoint]) -> Vec<KeypointStatus> {
    keypoints
        .iter()
        .map(|k| match map.world_to_grid(k.x, k.y) {
            Ok(cell) if map.is_walkable(cell) => KeypointStatus::Walkable { cell },
            Ok(cell) => KeypointStatus::Obstacle {
                cell,
                value: map.value(cell),
                suggestion: suggest(map, cell),
            },
            Err(_) => {
                let nearest_cell = map.clamp_to_grid(k.x, k.y);
                KeypointStatus::OutOfBounds {
                    nearest_cell,
                    suggestion: suggest(map, nearest_cell),
                }
            }
        })
        .collect()
}

/// Dense-path indices kept by stride subsampling; both ends always survive.
pub fn downsample_indices(len: usize, stride: usize) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    let stride = stride.max(1);
    let mut out: Vec<usize> = (0..len).step_by(stride).collect();
    if *out.last().unwrap() != len - 1 {
        out.push(len - 1);
    }
    out
}

/// Douglas–Peucker simplification with tolerance in cells. Returns kept indices.
pub fn douglas_peucker(path: &[GridCoord], tolerance: f64) -> Vec<usize> {
    if path.len() <= 2 {
        return (0..path.len()).collect();
    }
    let mut keep = vec![false; path.len()];
    keep[0] = true;
    keep[path.len() - 1] = true;
    let mut stack = vec![(0, path.len() - 1)];
    while let Some((a, b)) = stack.pop() {
        if b <= a + 1 {
            continue;
        }
        let (pa, pb) = (path[a], path[b]);
        let (ax, ay) = (pa.i as f64, pa.j as f64);
        let (dx, dy) = (pb.i as f64 - ax, pb.j as f64 - ay);
        let len = (dx * dx + dy * dy).sqrt();
        let mut best = (a, -1.0);
        for (k, p) in path.iter().enumerate().take(b).skip(a + 1) {
            let (px, py) = (p.i as f64 - ax, p.j as f64 - ay);
            let d = if len == 0.0 {
                (px * px + py * py).sqrt()
            } else {
                (px * dy - py * dx).abs() / len
            };
            if d > best.1 {
                best = (k, d);
            }
        }
        if best.1 > tolerance {
            keep[best.0] = true;
            stack.push((a, best.0));
            stack.push((best.0, b));
        }
    }
    keep.iter().enumerate().filter_map(|(i, &k)| k.then_some(i)).collect()
}

/// Stride subsampling followed by grid→world conversion at a fixed height.
pub fn downsample_and_lift(dense: &[GridCoord], map: &ObstacleMap, base_height: f64, stride: usize) -> Vec<[f64; 3]> {
    downsample_indices(dense.len(), stride)
        .into_iter()
        .map(|k| {
            let [x, y] = map.grid_to_world(dense[k]);
            [x, y, base_height]
        })
        .collect()
}

/// Waypoint `k` is driven at frame `k * interval`.
pub fn schedule_frames(count: usize, interval: usize) -> Vec<usize> {
    let interval = interval.max(1);
    (0..count).map(|k| k * interval).collect()
}

/// Sum of map values over the cells of a path.
pub fn path_density_sum(map: &ObstacleMap, path: &[GridCoord]) -> f64 {
    path.iter().map(|c| map.value(*c)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Simplify {
    Stride { stride: usize },
    DouglasPeucker { tolerance: f64 },
}

impl Default for Simplify {
    fn default() -> Self {
        Simplify::Stride { stride: DEFAULT_STRIDE }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    pub heuristic: HeuristicConfig,
    pub simplify: Simplify,
    pub base_height: f64,
    pub frame_interval: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            heuristic: HeuristicConfig::default(),
            simplify: Simplify::default(),
            base_height: DEFAULT_BASE_HEIGHT,
            frame_interval: DEFAULT_FRAME_INTERVAL,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        self.heuristic.validate()?;
        match self.simplify {
            Simplify::Stride { stride: 0 } => return Err(PlanError::InvalidConfig("stride must be >= 1".into())),
            Simplify::DouglasPeucker { tolerance } if !(tolerance >= 0.0 && tolerance.is_finite()) => {
                return Err(PlanError::InvalidConfig(format!("tolerance must be >= 0, got {tolerance}")))
            }
            _ => {}
        }
        if self.frame_interval == 0 {
            return Err(PlanError::InvalidConfig("frame interval must be >= 1".into()));
        }
        if !self.base_height.is_finite() {
            return Err(PlanError::InvalidConfig("base height must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub index: usize,
    pub start: GridCoord,
    pub goal: GridCoord,
    pub cost: f64,
    pub expanded: usize,
    /// Inclusive range of this segment within the dense path.
    pub dense_range: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPlan {
    pub dense_path: Vec<GridCoord>,
    /// Dense-path index of each sparse waypoint.
    pub sparse_indices: Vec<usize>,
    pub sparse_path: Vec<[f64; 3]>,
    pub frame_schedule: Vec<usize>,
    pub segments: Vec<SegmentSummary>,
    pub total_cost: f64,
}

/// Plan through all keypoints in order. Every keypoint survives into the
/// sparse path, so per-keypoint heights stay attached to their positions.
pub fn plan_path(map: &ObstacleMap, keypoints: &[Keypoint], cfg: &PlanConfig) -> Result<PathPlan, PlanError> {
    cfg.validate()?;
    if keypoints.len() < 2 {
        return Err(PlanError::TooFewKeypoints(keypoints.len()));
    }
    let statuses = validate_keypoints(map, keypoints);
    let invalid: Vec<InvalidNode> = statuses
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.is_walkable())
        .map(|(index, s)| InvalidNode {
            index,
            status: s.clone(),
        })
        .collect();
    if !invalid.is_empty() {
        return Err(PlanError::InvalidNodes(invalid));
    }
    let cells: Vec<GridCoord> = statuses
        .iter()
        .map(|s| match s {
            KeypointStatus::Walkable { cell } => *cell,
            _ => unreachable!(),
        })
        .collect();

    let mut dense: Vec<GridCoord> = vec![cells[0]];
    let mut sparse_indices = vec![0usize];
    // keypoint index that pins each sparse waypoint, if any
    let mut pinned: Vec<Option<usize>> = vec![Some(0)];
    let mut segments = Vec::with_capacity(cells.len() - 1);
    let mut total_cost = 0.0;

    for (index, pair) in cells.windows(2).enumerate() {
        let seg = astar_segment(map, pair[0], pair[1], &cfg.heuristic).map_err(|e| PlanError::Segment {
            index,
            source: Box::new(e),
        })?;
        let offset = dense.len() - 1;
        dense.extend_from_slice(&seg.path[1..]);
        let local = match cfg.simplify {
            Simplify::Stride { stride } => downsample_indices(seg.path.len(), stride),
            Simplify::DouglasPeucker { tolerance } => douglas_peucker(&seg.path, tolerance),
        };
        for &k in &local[1..] {
            sparse_indices.push(offset + k);
            pinned.push(None);
        }
        if seg.path.len() > 1 {
            *pinned.last_mut().unwrap() = Some(index + 1);
        } else if let Some(p) = pinned.last_mut() {
            // zero-length segment: the later keypoint's height wins
            *p = Some(index + 1);
        }
        log::debug!("segment {index}: {} cells, cost {}, {} expanded", seg.path.len(), seg.cost, seg.expanded);
        total_cost += seg.cost;
        segments.push(SegmentSummary {
            index,
            start: pair[0],
            goal: pair[1],
            cost: seg.cost,
            expanded: seg.expanded,
            dense_range: [offset, dense.len() - 1],
        });
    }

    let sparse_path: Vec<[f64; 3]> = sparse_indices
        .iter()
        .zip(&pinned)
        .map(|(&k, pin)| {
            let [x, y] = map.grid_to_world(dense[k]);
            let z = pin.and_then(|p| keypoints[p].height).unwrap_or(cfg.base_height);
            [x, y, z]
        })
        .collect();
    let frame_schedule = schedule_frames(sparse_path.len(), cfg.frame_interval);
    Ok(PathPlan {
        dense_path: dense,
        sparse_indices,
        sparse_path,
        frame_schedule,
        segments,
        total_cost,
    })
}
