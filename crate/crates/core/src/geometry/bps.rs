//! Basis point set encoding and nearest-surface offsets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GeometryError, KdTree, PointCloud, Vec3};

pub const BPS_SIZE: usize = 1024;

/// Fixed reference points; a cloud is encoded by the distance from each basis
/// point to its nearest cloud point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpsBasis {
    pub center: Vec3,
    pub radius: f64,
    pub seed: u64,
    pub points: Vec<Vec3>,
}

impl BpsBasis {
    /// `count` points uniform in the ball, by rejection from the enclosing cube.
    pub fn sample_ball(center: Vec3, radius: f64, count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(count);
        while points.len() < count {
            let p = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if p.norm_squared() <= 1.0 {
                points.push(center + p * radius);
            }
        }
        Self {
            center,
            radius,
            seed,
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn bps_encode(cloud: &PointCloud, basis: &[Vec3]) -> Result<Vec<f64>, GeometryError> {
    if cloud.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    let tree = KdTree::new(&cloud.points);
    Ok(basis
        .iter()
        .map(|b| tree.nearest(b).expect("nonempty").1.sqrt())
        .collect())
}

/// `offset[i] = nearest(target, v_i) - v_i`.
pub fn directional_offsets(vertices: &[Vec3], target: &PointCloud) -> Result<Vec<Vec3>, GeometryError> {
    if target.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    let tree = KdTree::new(&target.points);
    Ok(vertices
        .iter()
        .map(|v| {
            let (idx, _) = tree.nearest(v).expect("nonempty");
            tree.point(idx) - v
        })
        .collect())
}

/// Farthest point sampling; the seed chooses the starting point. Returns indices.
pub fn farthest_point_sample(points: &[Vec3], count: usize, seed: u64) -> Result<Vec<usize>, GeometryError> {
    if count > points.len() {
        return Err(GeometryError::NotEnoughPoints {
            requested: count,
            available: points.len(),
        });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..points.len());
    let mut chosen = vec![first];
    let mut dist: Vec<f64> = points.iter().map(|p| (p - points[first]).norm_squared()).collect();
    while chosen.len() < count {
        // first index wins ties
        let (next, _) = dist
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        chosen.push(next);
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min((p - points[next]).norm_squared());
        }
    }
    Ok(chosen)
}
