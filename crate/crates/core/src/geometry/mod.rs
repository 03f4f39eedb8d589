//! Geometric substrate: point clouds, triangle meshes, file loaders, spatial
//! indexing, signed distance queries, volumetric sampling, basis point set
//! encoding and rotation representations.

mod bps;
mod io;
mod kdtree;
mod rotation;
mod sampling;
mod sdf;
mod types;

pub use bps::{bps_encode, directional_offsets, farthest_point_sample, BpsBasis, BPS_SIZE};
pub use io::{load_geometry, parse_geometry, write_obj, AxisRemap, Geometry, GeometryFormat, Location, UpAxis};
pub use kdtree::KdTree;
pub use rotation::{relative_to_global_rotations, Rotation6D};
pub use sampling::{
    crop_volume_for_object, surface_sample, volumetric_sample, voxel_downsample, CropVolume, VolumetricSample,
    CROP_HALF_WIDTH, CROP_Z_MAX, CROP_Z_MIN, DEFAULT_VOXEL_EDGE,
};
pub use sdf::{closest_point_on_triangle, ray_triangle_hit, SdfScene};
pub use types::{Aabb, PointCloud, TriMesh, Vec3};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("parse error at {location}: {message}")]
    Parse { location: Location, message: String },
    #[error("geometry file contains no points")]
    Empty,
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported or unknown geometry format: {0}")]
    UnknownFormat(String),
    #[error("face {face} references vertex {index} but mesh has {vertex_count} vertices")]
    FaceIndex {
        face: usize,
        index: usize,
        vertex_count: usize,
    },
    #[error("non-finite coordinate at point {index}")]
    NonFinite { index: usize },
    #[error("point cloud is empty; encoding is undefined")]
    EmptyCloud,
    #[error("requested {requested} samples from {available} points")]
    NotEnoughPoints { requested: usize, available: usize },
    #[error("6D rotation first column has near-zero norm {norm:e}")]
    DegenerateRotation { norm: f64 },
    #[error("kinematic chain is invalid at joint {joint}: {reason}")]
    InvalidChain { joint: usize, reason: String },
    #[error("voxel edge must be positive, got {0}")]
    InvalidVoxelEdge(f64),
}
