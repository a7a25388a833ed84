//! Run configuration: a flat JSON document, every key required, unknown
//! keys rejected.

use super::IoError;
use crate::projection::ProjectionParams;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Learned,
    Spectral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub max_cloud_points: usize,

    // Spherical projection.
    pub projection_height: usize,
    pub projection_width: usize,
    pub fov_up_deg: f64,
    pub fov_down_deg: f64,
    pub max_range_m: f64,

    // Map partitioning.
    pub crop_radius_m: f64,
    pub min_submap_points: usize,
    pub partition_stride: usize,

    // Retrieval.
    pub backend: Backend,
    pub top_k: usize,

    // ICP refinement and candidate acceptance.
    pub icp_max_iterations: usize,
    pub icp_translation_tol_m: f64,
    pub icp_rotation_tol_rad: f64,
    /// Voxel size for thinning the query scan before ICP (0 disables).
    pub icp_source_voxel_m: f64,
    pub corr_base_m: f64,
    pub corr_slope_m_per_dist: f64,
    pub corr_min_m: f64,
    pub corr_max_m: f64,
    pub min_fitness: f64,
    pub max_rmse_m: f64,

    // Event trigger.
    pub trigger_debounce: usize,
    pub trigger_cooldown: usize,

    // Training.
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub label_smoothing: f64,
    pub mining_switch_epoch: usize,
    pub classifier_switch_epoch: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            max_cloud_points: 20_000_000,
            projection_height: 16,
            projection_width: 360,
            fov_up_deg: 15.0,
            fov_down_deg: -15.0,
            max_range_m: 100.0,
            crop_radius_m: 100.0,
            min_submap_points: 100,
            partition_stride: 1,
            backend: Backend::Spectral,
            top_k: 5,
            icp_max_iterations: 50,
            icp_translation_tol_m: 1e-4,
            icp_rotation_tol_rad: 1e-4,
            icp_source_voxel_m: 0.0,
            corr_base_m: 0.5,
            corr_slope_m_per_dist: 1.0,
            corr_min_m: 0.5,
            corr_max_m: 3.0,
            min_fitness: 0.6,
            max_rmse_m: 0.3,
            trigger_debounce: 3,
            trigger_cooldown: 20,
            margin: 0.5,
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 16,
            label_smoothing: 0.1,
            mining_switch_epoch: 15,
            classifier_switch_epoch: 21,
        }
    }
}

impl RunConfig {
    pub fn projection(&self) -> ProjectionParams {
        ProjectionParams {
            height: self.projection_height,
            width: self.projection_width,
            fov_up_deg: self.fov_up_deg,
            fov_down_deg: self.fov_down_deg,
            max_range_m: self.max_range_m,
        }
    }

    pub fn validate(&self) -> Result<(), IoError> {
        fn at_least_one(key: &'static str, v: usize) -> Result<(), IoError> {
            if v >= 1 {
                Ok(())
            } else {
                Err(IoError::ConfigValue(key, "must be at least 1".into()))
            }
        }
        at_least_one("projection_height", self.projection_height)?;
        at_least_one("projection_width", self.projection_width)?;
        at_least_one("top_k", self.top_k)?;
        at_least_one("icp_max_iterations", self.icp_max_iterations)?;
        at_least_one("partition_stride", self.partition_stride)?;
        at_least_one("epochs", self.epochs)?;
        at_least_one("batch_size", self.batch_size)?;
        at_least_one("trigger_debounce", self.trigger_debounce)?;
        if self.projection_width < crate::descriptor::DESCRIPTOR_DIM {
            return Err(IoError::ConfigValue(
                "projection_width",
                format!("must be at least {}", crate::descriptor::DESCRIPTOR_DIM),
            ));
        }
        if self.fov_up_deg <= self.fov_down_deg {
            return Err(IoError::ConfigValue("fov_up_deg", "must exceed fov_down_deg".into()));
        }
        if !(self.max_range_m > 0.0) {
            return Err(IoError::ConfigValue("max_range_m", "must be positive".into()));
        }
        if !(self.crop_radius_m > 0.0) {
            return Err(IoError::ConfigValue("crop_radius_m", "must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(IoError::ConfigValue("label_smoothing", "must lie in [0, 1)".into()));
        }
        if !(self.margin > 0.0) {
            return Err(IoError::ConfigValue("margin", "must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(IoError::ConfigValue("learning_rate", "must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.min_fitness) {
            return Err(IoError::ConfigValue("min_fitness", "must lie in [0, 1]".into()));
        }
        if self.corr_min_m > self.corr_max_m {
            return Err(IoError::ConfigValue("corr_min_m", "must not exceed corr_max_m".into()));
        }
        if self.icp_source_voxel_m < 0.0 {
            return Err(IoError::ConfigValue("icp_source_voxel_m", "must be nonnegative".into()));
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| IoError::Json { path: path.display().to_string(), message: e.to_string() })?;
    cfg.validate()?;
    Ok(cfg)
}
