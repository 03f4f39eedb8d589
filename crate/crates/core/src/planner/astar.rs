use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::{bresenham, invalid_cell_status, HeuristicConfig, InvalidNode, PlanError};
use crate::obstacle_map::{GridCoord, ObstacleMap};

/// `‖a − b‖₂` in cell units plus `λ · Σ v` over the Bresenham cells from `a` to `b`.
pub fn heuristic(map: &ObstacleMap, a: GridCoord, b: GridCoord, cfg: &HeuristicConfig) -> f64 {
    let euclid = a.euclidean(&b);
    if cfg.lambda == 0.0 {
        return euclid;
    }
    let density: f64 = bresenham(a, b).into_iter().map(|c| map.value(c)).sum();
    euclid + cfg.lambda * density
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub path: Vec<GridCoord>,
    /// Accumulated g-score at the goal.
    pub cost: f64,
    pub expanded: usize,
}

/// What the search saw before the open set ran dry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploredSummary {
    pub expanded: usize,
    pub reached: usize,
    pub bbox_min: GridCoord,
    pub bbox_max: GridCoord,
    /// Reached cell with the smallest Euclidean distance to the goal.
    pub closest_to_goal: GridCoord,
}

#[derive(Debug, Clone, Copy)]
struct QueueEntry {
    key: f64,
    seq: u64,
    g: f64,
    node: usize,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    // reversed: BinaryHeap is a max-heap; equal keys pop in insertion order
    fn cmp(&self, other: &Self) -> Ordering {
        other.key.total_cmp(&self.key).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Per-query search tables: open queue, g-scores, came-from and cached heuristics.
struct PlannerState {
    open: BinaryHeap<QueueEntry>,
    g: Vec<f64>,
    came_from: Vec<usize>,
    f_cache: Vec<f64>,
    seq: u64,
}

const NONE: usize = usize::MAX;

impl PlannerState {
    fn new(cells: usize) -> Self {
        Self {
            open: BinaryHeap::new(),
            g: vec![f64::INFINITY; cells],
            came_from: vec![NONE; cells],
            f_cache: vec![f64::NAN; cells],
            seq: 0,
        }
    }

    fn push(&mut self, node: usize, g: f64, f: f64) {
        self.open.push(QueueEntry {
            key: g + f,
            seq: self.seq,
            g,
            node,
        });
        self.seq += 1;
    }
}

/// One start/goal search. Nodes re-enter the open set whenever their g-score
/// improves; stale queue entries are skipped on pop.
pub fn astar_segment(
    map: &ObstacleMap,
    start: GridCoord,
    goal: GridCoord,
    cfg: &HeuristicConfig,
) -> Result<Segment, PlanError> {
    cfg.validate()?;
    let mut invalid = Vec::new();
    for (index, c) in [(0, start), (1, goal)] {
        if !map.contains(c) {
            invalid.push(InvalidNode {
                index,
                status: super::KeypointStatus::OutOfBounds {
                    nearest_cell: GridCoord::new(c.i.min(map.width() - 1), c.j.min(map.height() - 1)),
                    suggestion: None,
                },
            });
        } else if !map.is_walkable(c) {
            invalid.push(InvalidNode {
                index,
                status: invalid_cell_status(c, map.value(c)),
            });
        }
    }
    if !invalid.is_empty() {
        return Err(PlanError::InvalidNodes(invalid));
    }
    if start == goal {
        return Ok(Segment {
            path: vec![start],
            cost: 0.0,
            expanded: 0,
        });
    }

    let mut st = PlannerState::new(map.values().len());
    let (s, e) = (map.index(start), map.index(goal));
    let f_start = heuristic(map, start, goal, cfg);
    st.f_cache[s] = f_start;
    st.g[s] = 0.0;
    st.push(s, 0.0, f_start);
    let mut expanded = 0usize;

    while let Some(entry) = st.open.pop() {
        let q = entry.node;
        if entry.g > st.g[q] {
            continue;
        }
        if q == e {
            let mut path = vec![goal];
            let mut cur = q;
            while st.came_from[cur] != NONE {
                cur = st.came_from[cur];
                path.push(map.coord(cur));
            }
            path.reverse();
            return Ok(Segment {
                path,
                cost: st.g[e],
                expanded,
            });
        }
        expanded += 1;
        let qc = map.coord(q);
        for nb in map.neighbors4(qc) {
            let value = map.value(nb);
            if cfg.is_blocked(value) {
                continue;
            }
            let n = map.index(nb);
            let candidate = st.g[q] + cfg.step_cost.cost(value);
            if candidate < st.g[n] {
                st.g[n] = candidate;
                st.came_from[n] = q;
                if st.f_cache[n].is_nan() {
                    st.f_cache[n] = heuristic(map, nb, goal, cfg);
                }
                let f = st.f_cache[n];
                st.push(n, candidate, f);
            }
        }
    }

    let mut reached = 0;
    let mut bbox_min = start;
    let mut bbox_max = start;
    let mut closest = (start, start.euclidean(&goal));
    for (idx, g) in st.g.iter().enumerate() {
        if g.is_finite() {
            reached += 1;
            let c = map.coord(idx);
            bbox_min = GridCoord::new(bbox_min.i.min(c.i), bbox_min.j.min(c.j));
            bbox_max = GridCoord::new(bbox_max.i.max(c.i), bbox_max.j.max(c.j));
            let d = c.euclidean(&goal);
            if d < closest.1 {
                closest = (c, d);
            }
        }
    }
    Err(PlanError::NoPath(ExploredSummary {
        expanded,
        reached,
        bbox_min,
        bbox_max,
        closest_to_goal: closest.0,
    }))
}
