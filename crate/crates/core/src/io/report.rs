//! Result reports. Stable key set, matrices row-major; timing blocks are
//! optional so that stable-fields reports are byte-reproducible.

use super::IoError;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimingsMs {
    pub descriptor: f64,
    pub query: f64,
    pub yaw: f64,
    pub icp: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub rank: usize,
    pub index: u64,
    pub descriptor_distance: f64,
    pub yaw_estimate_rad: f64,
    pub initial_pose_row_major: [f64; 16],
    pub refined_pose_row_major: [f64; 16],
    pub fitness: f64,
    pub inlier_rmse_m: f64,
    pub iterations: usize,
    pub converged: bool,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rejection: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelocReport {
    pub schema_version: u32,
    pub failed: bool,
    pub chosen_index: Option<u64>,
    pub chosen_pose_row_major: Option<[f64; 16]>,
    pub candidates: Vec<CandidateReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timings_ms: Option<StageTimingsMs>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics: Option<EvalMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub queries: usize,
    pub failed_queries: usize,
    pub success_radius_m: f64,
    /// Entry k-1 = recall@k.
    pub recall_at_k: Vec<f64>,
    pub yaw_mae_deg: f64,
    pub yaw_std_deg: f64,
    pub pose_mean_m: f64,
    pub pose_std_m: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stage_means_ms: Option<StageTimingsMs>,
}

/// Per-query row of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySummary {
    pub query: usize,
    pub failed: bool,
    pub chosen_index: Option<u64>,
    pub translation_error_m: Option<f64>,
    pub yaw_error_deg: Option<f64>,
    pub top1_index: u64,
    pub top1_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub metrics: EvalMetrics,
    pub queries: Vec<QuerySummary>,
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| IoError::Json { path: path.display().to_string(), message: e.to_string() })?;
    std::fs::write(path, text + "\n").map_err(|e| IoError::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| IoError::Json { path: path.display().to_string(), message: e.to_string() })
}

pub fn emit_report(report: &RelocReport, path: &Path) -> Result<(), IoError> {
    write_json(report, path)
}

pub fn read_report(path: &Path) -> Result<RelocReport, IoError> {
    read_json(path)
}

pub fn emit_eval_report(report: &EvalReport, path: &Path) -> Result<(), IoError> {
    write_json(report, path)
}

pub fn read_eval_report(path: &Path) -> Result<EvalReport, IoError> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PoseSE3;
    use nalgebra::Matrix3;
    use tempfile::tempdir;

    #[test]
    fn report_round_trip_keeps_pose_orthonormal() {
        let pose = PoseSE3::from_yaw(0.83).compose(&PoseSE3::from_translation(
            nalgebra::Vector3::new(10.0, -2.0, 0.5),
        ));
        let report = RelocReport {
            schema_version: 1,
            failed: false,
            chosen_index: Some(7),
            chosen_pose_row_major: Some(pose.to_matrix_row_major()),
            candidates: vec![],
            timings_ms: None,
            metrics: None,
        };
        let dir = tempdir().unwrap();
        let p = dir.path().join("report.json");
        emit_report(&report, &p).unwrap();
        let back = read_report(&p).unwrap();
        assert_eq!(back, report);

        let m = back.chosen_pose_row_major.unwrap();
        let r = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-6);
    }

    #[test]
    fn stable_report_omits_timings() {
        let report = RelocReport {
            schema_version: 1,
            failed: true,
            chosen_index: None,
            chosen_pose_row_major: None,
            candidates: vec![],
            timings_ms: None,
            metrics: None,
        };
        let text = serde_json::to_string(&report).unwrap();
        assert!(!text.contains("timings_ms"));
    }
}
