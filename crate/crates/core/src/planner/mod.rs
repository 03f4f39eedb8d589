//! Dual-heuristic A* over the obstacle-aware map, multi-keypoint chaining,
//! downsampling to sparse 3D waypoints and frame scheduling.

mod astar;
mod bresenham;
mod plan;

pub use astar::{astar_segment, heuristic, ExploredSummary, Segment};
pub use bresenham::bresenham;
pub use plan::{
    douglas_peucker, downsample_and_lift, downsample_indices, path_density_sum, plan_path, schedule_frames,
    validate_keypoints, Keypoint, KeypointStatus, PathPlan, PlanConfig, SegmentSummary, Simplify, Suggestion,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::obstacle_map::GridCoord;

/// Control signal spacing for root waypoints, in frames.
pub const DEFAULT_FRAME_INTERVAL: usize = 38;
/// Standing pelvis height assigned to lifted waypoints, meters.
pub const DEFAULT_BASE_HEIGHT: f64 = 0.95;
pub const DEFAULT_STRIDE: usize = 5;

/// Relaxation cost for stepping onto a neighbour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepCost {
    /// `1 + v(neighbour)`.
    #[default]
    UnitPlusDensity,
    /// `v(neighbour)` only, literally as in the relaxation rule.
    DensityOnly,
}

impl StepCost {
    pub fn cost(self, value: f64) -> f64 {
        match self {
            StepCost::UnitPlusDensity => 1.0 + value,
            StepCost::DensityOnly => value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicConfig {
    /// Weight of the density term along the Bresenham line to the goal.
    pub lambda: f64,
    pub step_cost: StepCost,
    /// Cells with a value above this are impassable.
    pub blocked_above: Option<f64>,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            step_cost: StepCost::UnitPlusDensity,
            blocked_above: None,
        }
    }
}

impl HeuristicConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(PlanError::InvalidConfig(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    pub fn is_blocked(&self, value: f64) -> bool {
        self.blocked_above.is_some_and(|t| value > t)
    }
}

/// A keypoint that cannot be used as a start or goal node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvalidNode {
    pub index: usize,
    pub status: KeypointStatus,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("invalid nodes at keypoint indices {:?}", .0.iter().map(|n| n.index).collect::<Vec<_>>())]
    InvalidNodes(Vec<InvalidNode>),
    #[error("no path: open set exhausted after expanding {} cells", .0.expanded)]
    NoPath(ExploredSummary),
    #[error("segment {index}: {source}")]
    Segment {
        index: usize,
        #[source]
        source: Box<PlanError>,
    },
    #[error("at least two keypoints are required, got {0}")]
    TooFewKeypoints(usize),
    #[error("invalid planner configuration: {0}")]
    InvalidConfig(String),
}

impl PlanError {
    /// Innermost error, unwrapping segment context.
    pub fn root(&self) -> &PlanError {
        match self {
            PlanError::Segment { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn segment_index(&self) -> Option<usize> {
        match self {
            PlanError::Segment { index, .. } => Some(*index),
            _ => None,
        }
    }
}

pub(crate) fn invalid_cell_status(cell: GridCoord, value: f64) -> KeypointStatus {
    KeypointStatus::Obstacle {
        cell,
        value,
        suggestion: None,
    }
}
