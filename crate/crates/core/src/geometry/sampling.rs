//! Scene crop volumes and volumetric (surface + interior) point sampling.

use serde::{Deserialize, Serialize};

use super::{Aabb, GeometryError, PointCloud, SdfScene, TriMesh, Vec3};

/// Half side length of the crop box in x and y, meters.
pub const CROP_HALF_WIDTH: f64 = 0.8;
/// Fixed vertical extent of the crop box, meters, independent of object height.
pub const CROP_Z_MIN: f64 = 0.2;
pub const CROP_Z_MAX: f64 = 1.8;
pub const DEFAULT_VOXEL_EDGE: f64 = 0.08;

/// Axis-aligned scene context box around an object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropVolume {
    pub min: Vec3,
    pub max: Vec3,
}

impl CropVolume {
    pub fn new(min: Vec3, max: Vec3) -> Option<Self> {
        (0..3).all(|k| max[k] > min[k]).then_some(Self { min, max })
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn as_aabb(&self) -> Aabb {
        Aabb {
            min: self.min,
            max: self.max,
        }
    }
}

pub fn crop_volume_for_object(object_translation: &Vec3) -> CropVolume {
    let t = object_translation;
    CropVolume {
        min: Vec3::new(t.x - CROP_HALF_WIDTH, t.y - CROP_HALF_WIDTH, CROP_Z_MIN),
        max: Vec3::new(t.x + CROP_HALF_WIDTH, t.y + CROP_HALF_WIDTH, CROP_Z_MAX),
    }
}

/// Deterministic, area-uniform surface samples: each face is split into k²
/// congruent sub-triangles (k from the longest edge and `spacing`) and the
/// sub-triangle centroids are emitted, followed by the mesh vertices.
pub fn surface_sample(mesh: &TriMesh, spacing: f64) -> Vec<Vec3> {
    let mut out = Vec::new();
    for tri in mesh.triangles() {
        sample_triangle(&tri, spacing, &mut out);
    }
    out.extend_from_slice(&mesh.vertices);
    out
}

fn sample_triangle(tri: &[Vec3; 3], spacing: f64, out: &mut Vec<Vec3>) {
    let [a, b, c] = tri;
    let longest = (b - a).norm().max((c - b).norm()).max((a - c).norm());
    let k = ((longest / spacing).ceil() as usize).max(1);
    let (u, v) = ((b - a) / k as f64, (c - a) / k as f64);
    for i in 0..k {
        for j in 0..k - i {
            out.push(a + u * (i as f64 + 1.0 / 3.0) + v * (j as f64 + 1.0 / 3.0));
            if i + j + 2 <= k {
                out.push(a + u * (i as f64 + 2.0 / 3.0) + v * (j as f64 + 2.0 / 3.0));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumetricSample {
    pub cloud: PointCloud,
    pub surface_count: usize,
    pub interior_count: usize,
    /// Set when the mesh is open and interior voxels could not be classified.
    pub interior_skipped: bool,
}

/// Surface samples clipped to `volume` plus the centers of voxels that lie inside the mesh.
pub fn volumetric_sample(
    scene: &SdfScene,
    volume: &CropVolume,
    voxel_edge: f64,
) -> Result<VolumetricSample, GeometryError> {
    if !(voxel_edge > 0.0 && voxel_edge.is_finite()) {
        return Err(GeometryError::InvalidVoxelEdge(voxel_edge));
    }
    let mesh = scene.mesh();
    let bb = volume.as_aabb();
    let mut points = Vec::new();
    for tri in mesh.triangles() {
        let tb = Aabb::from_points(tri.iter()).expect("triangle");
        if tb.intersects(&bb) {
            sample_triangle(&tri, voxel_edge, &mut points);
        }
    }
    points.extend(mesh.vertices.iter().copied());
    points.retain(|p| volume.contains(p));
    let surface_count = points.len();

    let interior_skipped = !scene.is_signed();
    if interior_skipped {
        log::warn!("open mesh: interior voxel sampling skipped");
    } else {
        for center in voxel_centers(volume, voxel_edge) {
            if scene.is_inside(&center) {
                points.push(center);
            }
        }
    }
    let interior_count = points.len() - surface_count;
    Ok(VolumetricSample {
        cloud: PointCloud { points },
        surface_count,
        interior_count,
        interior_skipped,
    })
}

/// Centers of the voxel lattice anchored at the volume's min corner that fall inside it.
pub(crate) fn voxel_centers(volume: &CropVolume, edge: f64) -> Vec<Vec3> {
    let ext = volume.max - volume.min;
    let n: Vec<usize> = (0..3).map(|k| ((ext[k] / edge) - 1e-9).ceil().max(0.0) as usize).collect();
    let mut out = Vec::with_capacity(n[0] * n[1] * n[2]);
    for i in 0..n[0] {
        for j in 0..n[1] {
            for k in 0..n[2] {
                let c = volume.min
                    + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * edge;
                if volume.contains(&c) {
                    out.push(c);
                }
            }
        }
    }
    out
}

/// One centroid per occupied cubic voxel of side `edge`, ordered by voxel index.
pub fn voxel_downsample(points: &[Vec3], edge: f64) -> Vec<Vec3> {
    let mut cells: std::collections::BTreeMap<[i64; 3], (Vec3, usize)> = Default::default();
    for p in points {
        let key = [0, 1, 2].map(|k| (p[k] / edge).floor() as i64);
        let e = cells.entry(key).or_insert((Vec3::zeros(), 0));
        e.0 += p;
        e.1 += 1;
    }
    cells.into_values().map(|(s, n)| s / n as f64).collect()
}
