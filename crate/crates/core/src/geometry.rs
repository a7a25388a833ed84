//! Rigid-body types and operations underlying the whole pipeline.
//!
//! Conventions: right-handed frames, z up, yaw is a counter-clockwise
//! rotation about +z. Poses map robot-frame coordinates into the map frame,
//! `m = R * p + t`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Orthonormality / determinant tolerance for rotation matrices.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("rotation matrix is not orthonormal within {ROTATION_TOL:e} (deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("rotation matrix determinant is {0}, expected +1 within {ROTATION_TOL:e}")]
    NotProperRotation(f64),
    #[error("quaternion norm {0} deviates from 1 by more than 1e-3")]
    QuaternionNotUnit(f64),
    #[error("trajectory must contain at least one pose")]
    EmptyTrajectory,
    #[error("trajectory indices must be strictly increasing (index {0} follows {1})")]
    NonIncreasingIndex(u64, u64),
    #[error("non-finite component in {0}")]
    NonFinite(&'static str),
}

/// A 3D point in meters. All components are finite by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        debug_assert!(x.is_finite() && y.is_finite() && z.is_finite());
        Self { x, y, z }
    }

    /// Constructor for untrusted input; `None` if any component is non-finite.
    pub fn try_new(x: f64, y: f64, z: f64) -> Option<Self> {
        if x.is_finite() && y.is_finite() && z.is_finite() {
            Some(Self { x, y, z })
        } else {
            None
        }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn norm(self) -> f64 {
        self.to_vector().norm()
    }

    pub fn distance(self, other: Point3) -> f64 {
        (self.to_vector() - other.to_vector()).norm()
    }
}

/// A rigid transform of SE(3): rotation `R` and translation `t`.
///
/// Invariants (checked by every public constructor): `R^T R = I` and
/// `det R = +1`, both within [`ROTATION_TOL`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let dev = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if dev > ROTATION_TOL {
            return Err(GeometryError::NotOrthonormal(dev));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::NotProperRotation(det));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("translation"));
        }
        Ok(Self { rotation, translation })
    }

    /// Internal constructor for products of already-validated rotations.
    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        debug_assert!(
            (rotation.transpose() * rotation - Matrix3::identity()).norm() < 1e-6,
            "rotation drifted off the manifold"
        );
        Self { rotation, translation }
    }

    /// Rotation about +z by `theta` radians, zero translation.
    pub fn from_yaw(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let rotation = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Self::from_parts_unchecked(rotation, Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::from_parts_unchecked(Matrix3::identity(), t)
    }

    /// Pose with a yaw-only rotation at the given position.
    pub fn from_yaw_and_position(theta: f64, position: Point3) -> Self {
        let rot = Self::from_yaw(theta);
        Self::from_parts_unchecked(rot.rotation, position.to_vector())
    }

    /// From a unit quaternion `(qx, qy, qz, qw)`. The norm must be within
    /// 1e-3 of 1; it is renormalized before conversion so the resulting
    /// matrix satisfies the rotation invariants exactly.
    pub fn from_quaternion(qx: f64, qy: f64, qz: f64, qw: f64, t: Vector3<f64>) -> Result<Self, GeometryError> {
        let norm = (qx * qx + qy * qy + qz * qz + qw * qw).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-3 {
            return Err(GeometryError::QuaternionNotUnit(norm));
        }
        let (x, y, z, w) = (qx / norm, qy / norm, qz / norm, qw / norm);
        let rotation = Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        );
        Self::from_parts(rotation, t)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn position(&self) -> Point3 {
        Point3::from_vector(self.translation)
    }

    /// Yaw angle of the rotation, `atan2(R10, R00)`.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        Point3::from_vector(self.rotation * p.to_vector() + self.translation)
    }

    /// Composition `self * other` as homogeneous 4x4 product.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3::from_parts_unchecked(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Inverse transform `(R^T, -R^T t)`.
    pub fn inverse(&self) -> PoseSE3 {
        let rt = self.rotation.transpose();
        PoseSE3::from_parts_unchecked(rt, -(rt * self.translation))
    }

    /// Translation distance and rotation angle of `self^-1 * other`.
    pub fn delta(&self, other: &PoseSE3) -> (f64, f64) {
        let rel = self.inverse().compose(other);
        let trans = rel.translation.norm();
        let cos = ((rel.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        (trans, cos.acos())
    }

    /// Row-major 4x4 homogeneous matrix.
    pub fn to_matrix_row_major(&self) -> [f64; 16] {
        let m = self.to_matrix4();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix_row_major(m: &[f64; 16]) -> Result<Self, GeometryError> {
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vector3::new(m[3], m[7], m[11]);
        Self::from_parts(rotation, translation)
    }
}

/// One trajectory entry: a pose with its sequence index and optional stamp.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryNode {
    pub index: u64,
    pub timestamp: Option<f64>,
    pub pose: PoseSE3,
}

/// Ordered sequence of stamped map poses.
#[derive(Debug, Clone)]
pub struct Trajectory {
    nodes: Vec<TrajectoryNode>,
}

impl Trajectory {
    pub fn new(nodes: Vec<TrajectoryNode>) -> Result<Self, GeometryError> {
        if nodes.is_empty() {
            return Err(GeometryError::EmptyTrajectory);
        }
        for pair in nodes.windows(2) {
            if pair[1].index <= pair[0].index {
                return Err(GeometryError::NonIncreasingIndex(pair[1].index, pair[0].index));
            }
        }
        Ok(Self { nodes })
    }

    /// Build from bare positions, synthesizing yaw from the tangent of
    /// consecutive positions (the last pose reuses the previous heading,
    /// zero roll and pitch). Degenerate tangents keep the prior heading.
    pub fn from_positions(positions: &[Point3]) -> Result<Self, GeometryError> {
        if positions.is_empty() {
            return Err(GeometryError::EmptyTrajectory);
        }
        let mut heading = 0.0f64;
        let mut nodes = Vec::with_capacity(positions.len());
        for (i, &p) in positions.iter().enumerate() {
            if i + 1 < positions.len() {
                let dx = positions[i + 1].x - p.x;
                let dy = positions[i + 1].y - p.y;
                if dx.hypot(dy) > 1e-9 {
                    heading = dy.atan2(dx);
                }
            }
            let rot = PoseSE3::from_yaw(heading);
            let pose = PoseSE3::from_parts_unchecked(*rot.rotation(), p.to_vector());
            nodes.push(TrajectoryNode { index: i as u64, timestamp: None, pose });
        }
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[TrajectoryNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// A 3D point cloud with optional per-point intensity (ignored by the
/// pipeline, preserved through IO).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub intensity: Option<Vec<f32>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Point3>) -> Self {
        Self { points, intensity: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Keep the first point per voxel cell; deterministic for a fixed input
/// order. `voxel_m <= 0` returns the cloud unchanged.
pub fn voxel_thin(cloud: &PointCloud, voxel_m: f64) -> PointCloud {
    if voxel_m <= 0.0 {
        return cloud.clone();
    }
    let mut seen = std::collections::HashSet::new();
    let points: Vec<Point3> = cloud
        .points
        .iter()
        .filter(|p| {
            seen.insert((
                (p.x / voxel_m).floor() as i64,
                (p.y / voxel_m).floor() as i64,
                (p.z / voxel_m).floor() as i64,
            ))
        })
        .copied()
        .collect();
    PointCloud::from_points(points)
}

/// Map every point by `p' = R p + t`; count and order are preserved.
pub fn transform_cloud(cloud: &PointCloud, t: &PoseSE3) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|&p| t.apply(p)).collect(),
        intensity: cloud.intensity.clone(),
    }
}

/// Rotation about +z by `theta`, zero translation.
pub fn yaw_rotation(theta: f64) -> PoseSE3 {
    PoseSE3::from_yaw(theta)
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut a = theta % two_pi;
    if a <= -std::f64::consts::PI {
        a += two_pi;
    } else if a > std::f64::consts::PI {
        a -= two_pi;
    }
    a
}
