//! Signed distance queries against triangle meshes.
//!
//! Magnitude comes from a closest-point search over a bounding volume
//! hierarchy; the sign comes from ray-parity inside tests, majority-voted over
//! three fixed ray directions so grazing hits on shared edges cannot flip it.

use super::{Aabb, GeometryError, TriMesh, Vec3};

const LEAF_SIZE: usize = 4;
const SURFACE_EPS: f64 = 1e-12;

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Möller–Trumbore intersection; returns the ray parameter of a hit with `t > 0`.
pub fn ray_triangle_hit(origin: &Vec3, dir: &Vec3, tri: &[Vec3; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let h = dir.cross(&e2);
    let det = e1.dot(&h);
    if det.abs() < 1e-15 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = inv * s.dot(&h);
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = inv * dir.dot(&q);
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = inv * e2.dot(&q);
    (t > 0.0).then_some(t)
}

#[derive(Debug, Clone)]
struct BvhNode {
    bounds: Aabb,
    /// Leaf: `count > 0`, triangles `first..first+count`. Inner: children at `first`, `first+1`.
    first: usize,
    count: usize,
}

/// Triangle mesh prepared for signed distance and inside queries.
#[derive(Debug, Clone)]
pub struct SdfScene {
    mesh: TriMesh,
    tris: Vec<[Vec3; 3]>,
    nodes: Vec<BvhNode>,
    closed: bool,
}

fn ray_directions() -> [Vec3; 3] {
    [
        Vec3::new(0.5773, 0.5181, 0.6311).normalize(),
        Vec3::new(-0.3121, 0.8214, -0.4773).normalize(),
        Vec3::new(0.7071, -0.1903, -0.6811).normalize(),
    ]
}

impl SdfScene {
    pub fn new(mesh: TriMesh) -> Result<Self, GeometryError> {
        if mesh.faces.is_empty() {
            return Err(GeometryError::Empty);
        }
        let closed = mesh.is_closed();
        if !closed {
            log::warn!("mesh is not closed; signed distance degrades to unsigned distance");
        }
        let mut tris: Vec<[Vec3; 3]> = mesh.triangles().collect();
        let mut nodes = Vec::with_capacity(2 * tris.len() / LEAF_SIZE + 1);
        nodes.push(BvhNode {
            bounds: Aabb::empty(),
            first: 0,
            count: 0,
        });
        let count = tris.len();
        build(&mut tris, &mut nodes, 0, 0, count);
        Ok(Self {
            mesh,
            tris,
            nodes,
            closed,
        })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    /// Whether signs are meaningful (the mesh is closed).
    pub fn is_signed(&self) -> bool {
        self.closed
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    /// Closest surface point and its squared distance.
    pub fn closest_point(&self, p: &Vec3) -> (Vec3, f64) {
        let mut best = (self.tris[0][0], f64::INFINITY);
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if node.bounds.distance_squared(p) > best.1 {
                continue;
            }
            if node.count > 0 {
                for tri in &self.tris[node.first..node.first + node.count] {
                    let c = closest_point_on_triangle(p, &tri[0], &tri[1], &tri[2]);
                    let d2 = (c - p).norm_squared();
                    if d2 < best.1 {
                        best = (c, d2);
                    }
                }
            } else {
                let (l, r) = (node.first, node.first + 1);
                let dl = self.nodes[l].bounds.distance_squared(p);
                let dr = self.nodes[r].bounds.distance_squared(p);
                // visit nearer child first (pushed last)
                if dl < dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }

    pub fn unsigned_distance(&self, p: &Vec3) -> f64 {
        self.closest_point(p).1.sqrt()
    }

    /// Number of surface crossings along the ray `p + t·dir`, `t > 0`.
    pub fn ray_crossings(&self, p: &Vec3, dir: &Vec3) -> usize {
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut hits = 0;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if !ray_hits_box(p, &inv, &node.bounds) {
                continue;
            }
            if node.count > 0 {
                hits += self.tris[node.first..node.first + node.count]
                    .iter()
                    .filter(|tri| ray_triangle_hit(p, dir, tri).is_some())
                    .count();
            } else {
                stack.push(node.first);
                stack.push(node.first + 1);
            }
        }
        hits
    }

    /// Ray-parity point-in-mesh test. Always false for open meshes.
    pub fn is_inside(&self, p: &Vec3) -> bool {
        if !self.closed || !self.bounds().contains(p) {
            return false;
        }
        let votes = ray_directions()
            .iter()
            .filter(|d| self.ray_crossings(p, d) % 2 == 1)
            .count();
        votes >= 2
    }

    /// Signed distance: negative inside, positive outside, zero on the surface.
    pub fn sdf(&self, p: &Vec3) -> f64 {
        let d = self.unsigned_distance(p);
        if d <= SURFACE_EPS {
            return 0.0;
        }
        if self.is_inside(p) {
            -d
        } else {
            d
        }
    }
}

fn ray_hits_box(origin: &Vec3, inv_dir: &Vec3, bb: &Aabb) -> bool {
    let mut tmin = 0.0f64;
    let mut tmax = f64::INFINITY;
    for k in 0..3 {
        let t1 = (bb.min[k] - origin[k]) * inv_dir[k];
        let t2 = (bb.max[k] - origin[k]) * inv_dir[k];
        tmin = tmin.max(t1.min(t2));
        tmax = tmax.min(t1.max(t2));
    }
    tmin <= tmax
}

fn tri_bounds(tri: &[Vec3; 3]) -> Aabb {
    Aabb::from_points(tri.iter()).expect("triangle has vertices")
}

fn build(tris: &mut [[Vec3; 3]], nodes: &mut Vec<BvhNode>, id: usize, start: usize, end: usize) {
    let bounds = tris[start..end]
        .iter()
        .map(tri_bounds)
        .fold(Aabb::empty(), |acc, b| acc.merge(&b));
    nodes[id].bounds = bounds;
    if end - start <= LEAF_SIZE {
        nodes[id].first = start;
        nodes[id].count = end - start;
        return;
    }
    let centroid = |t: &[Vec3; 3]| (t[0] + t[1] + t[2]) / 3.0;
    let mut cb = Aabb::empty();
    for t in &tris[start..end] {
        cb.grow(&centroid(t));
    }
    let axis = cb.extent().imax();
    let mid = start + (end - start) / 2;
    tris[start..end].select_nth_unstable_by(mid - start, |a, b| {
        centroid(a)[axis].total_cmp(&centroid(b)[axis])
    });
    let left = nodes.len();
    for _ in 0..2 {
        nodes.push(BvhNode {
            bounds: Aabb::empty(),
            first: 0,
            count: 0,
        });
    }
    nodes[id].first = left;
    nodes[id].count = 0;
    build(tris, nodes, left, start, mid);
    build(tris, nodes, left + 1, mid, end);
}
