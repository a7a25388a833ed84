//! On-disk formats: PCD point clouds, trajectories, run configuration, and
//! result reports.

mod config;
mod pcd;
mod report;
mod trajectory;

pub use config::{load_config, Backend, RunConfig};
pub use pcd::{read_pcd, write_pcd, PcdEncoding};
pub use report::{
    emit_eval_report, emit_report, read_eval_report, read_report, CandidateReport, EvalMetrics,
    EvalReport, QuerySummary, RelocReport, StageTimingsMs,
};
pub use trajectory::{read_trajectory, TrajectoryFormat};

use crate::geometry::{PointCloud, Trajectory};
use thiserror::Error;

/// A map and the trajectory it was built along, as loaded from disk.
#[derive(Debug, Clone)]
pub struct MapBundle {
    pub map: PointCloud,
    pub trajectory: Trajectory,
    pub map_path: String,
    pub trajectory_path: String,
}

impl MapBundle {
    /// Couples a map with its trajectory. Every trajectory position must lie
    /// within the map's axis-aligned bounding box expanded by 10 m.
    pub fn new(
        map: PointCloud,
        trajectory: Trajectory,
        map_path: String,
        trajectory_path: String,
    ) -> Result<Self, IoError> {
        if map.is_empty() {
            return Err(IoError::EmptyCloud);
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &map.points {
            for (i, v) in [p.x, p.y, p.z].into_iter().enumerate() {
                lo[i] = lo[i].min(v);
                hi[i] = hi[i].max(v);
            }
        }
        for node in trajectory.nodes() {
            let pos = node.pose.position();
            let inside = [pos.x, pos.y, pos.z]
                .into_iter()
                .enumerate()
                .all(|(i, v)| v >= lo[i] - 10.0 && v <= hi[i] + 10.0);
            if !inside {
                return Err(IoError::Parse {
                    path: trajectory_path,
                    line: 0,
                    message: format!(
                        "trajectory pose {} at ({:.2}, {:.2}, {:.2}) lies outside the map bounds (+10 m)",
                        node.index, pos.x, pos.y, pos.z
                    ),
                });
            }
        }
        Ok(Self { map, trajectory, map_path, trajectory_path })
    }
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: unsupported format: {message}")]
    Unsupported { path: String, message: String },
    #[error("config key {0:?}: {1}")]
    ConfigValue(&'static str, String),
    #[error("{path}: invalid JSON: {message}")]
    Json { path: String, message: String },
    #[error("cloud is empty")]
    EmptyCloud,
}

impl IoError {
    fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.display().to_string(), source }
    }

    fn parse(path: &std::path::Path, line: usize, message: impl Into<String>) -> Self {
        IoError::Parse { path: path.display().to_string(), line, message: message.into() }
    }
}
