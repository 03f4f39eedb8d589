//! Continuous 6D rotation representation and kinematic-chain composition.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{GeometryError, Vec3};

const MIN_COLUMN_NORM: f64 = 1e-8;

/// First two columns of a rotation matrix, column-major: `(c0.x, c0.y, c0.z, c1.x, c1.y, c1.z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rotation6D(pub [f64; 6]);

impl Rotation6D {
    pub const IDENTITY: Rotation6D = Rotation6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Rotation6D([m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]])
    }

    /// Gram–Schmidt on the two stored columns; the third is their cross product.
    pub fn to_matrix(&self) -> Result<Matrix3<f64>, GeometryError> {
        let a = Vec3::new(self.0[0], self.0[1], self.0[2]);
        let b = Vec3::new(self.0[3], self.0[4], self.0[5]);
        let na = a.norm();
        if !(na >= MIN_COLUMN_NORM) {
            return Err(GeometryError::DegenerateRotation { norm: na });
        }
        let c0 = a / na;
        let b_perp = b - c0 * c0.dot(&b);
        let nb = b_perp.norm();
        if !(nb >= MIN_COLUMN_NORM) {
            return Err(GeometryError::DegenerateRotation { norm: nb });
        }
        let c1 = b_perp / nb;
        let c2 = c0.cross(&c1);
        Ok(Matrix3::from_columns(&[c0, c1, c2]))
    }

    /// Re-encodes through the matrix so the stored columns are orthonormal.
    pub fn normalized(&self) -> Result<Self, GeometryError> {
        Ok(Self::from_matrix(&self.to_matrix()?))
    }

    pub fn as_slice(&self) -> &[f64; 6] {
        &self.0
    }
}

/// Composes parent-relative rotations into global ones:
/// `global[i] = global[parent[i]] * local[i]`, roots (`parent < 0`) keep their local rotation.
pub fn relative_to_global_rotations(
    parents: &[i32],
    local: &[Matrix3<f64>],
) -> Result<Vec<Matrix3<f64>>, GeometryError> {
    if parents.len() != local.len() {
        return Err(GeometryError::InvalidChain {
            joint: parents.len().min(local.len()),
            reason: format!("{} parents for {} rotations", parents.len(), local.len()),
        });
    }
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Todo,
        Active,
        Done,
    }
    let n = parents.len();
    let mut state = vec![State::Todo; n];
    let mut global = vec![Matrix3::identity(); n];
    for root in 0..n {
        if state[root] == State::Done {
            continue;
        }
        // walk up to a resolved ancestor, then resolve back down
        let mut path = Vec::new();
        let mut j = root;
        loop {
            match state[j] {
                State::Done => break,
                State::Active => {
                    return Err(GeometryError::InvalidChain {
                        joint: j,
                        reason: "cycle in parent chain".into(),
                    })
                }
                State::Todo => {}
            }
            state[j] = State::Active;
            path.push(j);
            let p = parents[j];
            if p < 0 {
                break;
            }
            if p as usize >= n {
                return Err(GeometryError::InvalidChain {
                    joint: j,
                    reason: format!("parent {p} out of range"),
                });
            }
            j = p as usize;
        }
        for &k in path.iter().rev() {
            global[k] = match parents[k] {
                p if p < 0 => local[k],
                p => global[p as usize] * local[k],
            };
            state[k] = State::Done;
        }
    }
    Ok(global)
}
