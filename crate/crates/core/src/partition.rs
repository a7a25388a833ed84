//! Split a global map into per-pose submaps expressed in the robot frame.

use crate::geometry::{PointCloud, PoseSE3, Trajectory};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("no submap reached the minimum point count {0}")]
    NoSubmaps(usize),
    #[error("crop radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("stride must be at least 1")]
    BadStride,
}

/// One trajectory pose's view of the map: the points within the crop radius
/// of the pose, re-expressed in the robot frame.
#[derive(Debug, Clone)]
pub struct Submap {
    pub index: u64,
    pub origin: PoseSE3,
    pub cloud: PointCloud,
}

/// Crop and re-express the map around every `stride`-th trajectory pose.
/// Submaps below `min_points` are skipped (logged); producing none at all is
/// an error.
pub fn partition_map(
    map: &PointCloud,
    trajectory: &Trajectory,
    crop_radius_m: f64,
    stride: usize,
    min_points: usize,
) -> Result<Vec<Submap>, PartitionError> {
    if !(crop_radius_m > 0.0) {
        return Err(PartitionError::BadRadius(crop_radius_m));
    }
    if stride < 1 {
        return Err(PartitionError::BadStride);
    }
    let r2 = crop_radius_m * crop_radius_m;
    let mut submaps = Vec::new();
    for node in trajectory.nodes().iter().step_by(stride) {
        let pos = node.pose.position();
        let inverse = node.pose.inverse();
        let points: Vec<_> = map
            .points
            .iter()
            .filter(|m| {
                let dx = m.x - pos.x;
                let dy = m.y - pos.y;
                let dz = m.z - pos.z;
                dx * dx + dy * dy + dz * dz <= r2
            })
            .map(|&m| inverse.apply(m))
            .collect();
        if points.len() < min_points {
            log::warn!(
                "submap {} has {} points (< {min_points}), skipping",
                node.index,
                points.len()
            );
            continue;
        }
        submaps.push(Submap {
            index: node.index,
            origin: node.pose,
            cloud: PointCloud::from_points(points),
        });
    }
    if submaps.is_empty() {
        return Err(PartitionError::NoSubmaps(min_points));
    }
    Ok(submaps)
}
