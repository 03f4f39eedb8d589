//! Small synthetic scenes used by tests, the service and the examples in the README.

use crate::geometry::{TriMesh, Vec3};
use crate::planner::Keypoint;

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: &'static str,
    pub mesh: TriMesh,
    pub keypoints: Vec<Keypoint>,
}

pub const FIXTURE_NAMES: [&str; 3] = ["desk_room", "corridor", "u_shape"];

pub fn fixture(name: &str) -> Option<Fixture> {
    match name {
        "desk_room" => Some(desk_room()),
        "corridor" => Some(corridor()),
        "u_shape" => Some(u_shape()),
        _ => None,
    }
}

fn cuboid(min: [f64; 3], max: [f64; 3]) -> TriMesh {
    TriMesh::cuboid(Vec3::from(min), Vec3::from(max))
}

/// Floor slab under `[x0,x1]×[y0,y1]` and 2.4 m walls just outside it, with
/// an optional door gap in the west wall.
fn room(x1: f64, y1: f64, door: Option<(f64, f64)>) -> Vec<TriMesh> {
    let (t, h) = (0.1, 2.4);
    let mut parts = vec![
        cuboid([0.0, 0.0, -t], [x1, y1, 0.0]),
        cuboid([-t, -t, 0.0], [x1 + t, 0.0, h]),
        cuboid([-t, y1, 0.0], [x1 + t, y1 + t, h]),
        cuboid([x1, 0.0, 0.0], [x1 + t, y1, h]),
    ];
    match door {
        Some((a, b)) => {
            parts.push(cuboid([-t, 0.0, 0.0], [0.0, a, h]));
            parts.push(cuboid([-t, b, 0.0], [0.0, y1, h]));
        }
        None => parts.push(cuboid([-t, 0.0, 0.0], [0.0, y1, h])),
    }
    parts
}

/// 6×6 m room entered through a door in the west wall, with a shelf in the
/// middle and a table near the east wall. Keypoints go from the door to the table.
pub fn desk_room() -> Fixture {
    let mut parts = room(6.0, 6.0, Some((2.5, 3.5)));
    parts.push(cuboid([2.0, 1.8, 0.0], [3.0, 4.2, 1.2]));
    parts.push(cuboid([4.4, 2.4, 0.0], [5.4, 3.6, 0.75]));
    Fixture {
        name: "desk_room",
        mesh: TriMesh::merge(&parts),
        keypoints: vec![Keypoint::new(0.45, 3.05), Keypoint::new(3.75, 3.05)],
    }
}

/// 8×3 m corridor blocked across most of its width by a low bench; the only
/// clear passage hugs the north wall.
pub fn corridor() -> Fixture {
    let mut parts = room(8.0, 3.0, None);
    parts.push(cuboid([3.8, 0.0, 0.0], [4.2, 2.2, 0.3]));
    Fixture {
        name: "corridor",
        mesh: TriMesh::merge(&parts),
        keypoints: vec![Keypoint::new(1.05, 1.05), Keypoint::new(7.05, 1.05)],
    }
}

/// U-shaped block open to the west inside a 6×6 m room; the goal sits in the
/// pocket, the start behind the closed side.
pub fn u_shape() -> Fixture {
    let mut parts = room(6.0, 6.0, None);
    parts.push(cuboid([1.8, 1.5, 0.0], [4.2, 1.9, 1.0]));
    parts.push(cuboid([1.8, 4.1, 0.0], [4.2, 4.5, 1.0]));
    parts.push(cuboid([3.8, 1.9, 0.0], [4.2, 4.1, 1.0]));
    Fixture {
        name: "u_shape",
        mesh: TriMesh::merge(&parts),
        keypoints: vec![Keypoint::new(5.25, 3.05), Keypoint::new(2.85, 3.05)],
    }
}
