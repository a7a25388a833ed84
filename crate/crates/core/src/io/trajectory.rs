//! Trajectory files: TUM lines (`t tx ty tz qx qy qz qw`) as the primary
//! format, bare `tx ty tz` lines as fallback with yaw synthesized from the
//! path tangent. `#` comments and blank lines are skipped.

use super::IoError;
use crate::geometry::{Point3, PoseSE3, Trajectory, TrajectoryNode};
use nalgebra::Vector3;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryFormat {
    Tum,
    Xyz,
}

pub fn read_trajectory(path: &Path, format: TrajectoryFormat) -> Result<Trajectory, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let reader = BufReader::new(file);

    let expected_tokens = match format {
        TrajectoryFormat::Tum => 8,
        TrajectoryFormat::Xyz => 3,
    };

    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| IoError::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let values: Result<Vec<f64>, _> = trimmed.split_whitespace().map(str::parse).collect();
        let values = values.map_err(|_| {
            IoError::parse(path, line_no, format!("non-numeric token in {trimmed:?}"))
        })?;
        if values.len() != expected_tokens {
            return Err(IoError::parse(
                path,
                line_no,
                format!("expected {expected_tokens} values, found {}", values.len()),
            ));
        }
        rows.push((line_no, values));
    }

    match format {
        TrajectoryFormat::Tum => {
            let mut nodes = Vec::with_capacity(rows.len());
            for (seq, (line_no, v)) in rows.iter().enumerate() {
                let t = Vector3::new(v[1], v[2], v[3]);
                let pose = PoseSE3::from_quaternion(v[4], v[5], v[6], v[7], t)
                    .map_err(|e| IoError::parse(path, *line_no, e.to_string()))?;
                nodes.push(TrajectoryNode { index: seq as u64, timestamp: Some(v[0]), pose });
            }
            Trajectory::new(nodes).map_err(|e| IoError::parse(path, 0, e.to_string()))
        }
        TrajectoryFormat::Xyz => {
            let positions: Vec<Point3> = rows
                .iter()
                .map(|(line_no, v)| {
                    Point3::try_new(v[0], v[1], v[2]).ok_or_else(|| {
                        IoError::parse(path, *line_no, "non-finite position".to_string())
                    })
                })
                .collect::<Result<_, _>>()?;
            Trajectory::from_positions(&positions).map_err(|e| IoError::parse(path, 0, e.to_string()))
        }
    }
}
