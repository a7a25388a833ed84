//! Initial pose composition and the full re-localization pass: retrieve
//! top-k candidates, seed each with the candidate pose composed with the
//! regressed yaw, refine by ICP in the candidate frame, and accept the
//! first candidate clearing the fitness and RMSE gates.

mod icp;

pub use icp::{icp_refine, RefinedPose};

use crate::db::{DatabaseError, DescriptorDatabase, SubmapRecord};
use crate::descriptor::{BackendError, DescriptorBackend};
use crate::geometry::{voxel_thin, PointCloud, PoseSE3};
use crate::io::{RunConfig, StageTimingsMs};
use crate::projection::project;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RelocError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Database(#[from] DatabaseError),
    #[error("query scan is empty")]
    EmptyScan,
}

/// Candidate pose seeded from retrieval: the candidate origin composed with
/// a pure yaw in its local frame.
#[derive(Debug, Clone)]
pub struct InitialEstimate {
    pub transform: PoseSE3,
    pub candidate_index: u64,
    pub yaw: f64,
    pub descriptor_distance: f64,
}

/// `T0 = origin * R_z(yaw)`: the regressed yaw is the scan's heading offset
/// within the candidate submap frame.
pub fn initial_pose(candidate: &SubmapRecord, yaw: f64, descriptor_distance: f64) -> InitialEstimate {
    InitialEstimate {
        transform: candidate.origin.compose(&PoseSE3::from_yaw(yaw)),
        candidate_index: candidate.index,
        yaw,
        descriptor_distance,
    }
}

/// ICP correspondence radius from the descriptor distance:
/// `clamp(base + slope * distance, min, max)`.
pub fn correspondence_threshold(descriptor_distance: f64, cfg: &RunConfig) -> f64 {
    debug_assert!(descriptor_distance >= 0.0);
    (cfg.corr_base_m + cfg.corr_slope_m_per_dist * descriptor_distance)
        .clamp(cfg.corr_min_m, cfg.corr_max_m)
}

/// Outcome of evaluating one ranked candidate.
#[derive(Debug, Clone)]
pub struct CandidateOutcome {
    pub rank: usize,
    pub initial: InitialEstimate,
    pub refined: RefinedPose,
    /// Map-frame pose: `origin * refined-local-transform`.
    pub final_transform: PoseSE3,
    pub accepted: bool,
    pub rejection: Option<String>,
}

/// Result of one re-localization pass.
#[derive(Debug, Clone)]
pub struct ReLocResult {
    /// The full ranked retrieval list `(submap index, descriptor distance)`.
    pub retrieved: Vec<(u64, f64)>,
    /// Candidates evaluated in rank order (stops at the first acceptance).
    pub candidates: Vec<CandidateOutcome>,
    /// Position in `candidates` of the chosen one.
    pub chosen: Option<usize>,
    /// Set when no candidate cleared the acceptance gates.
    pub failed: bool,
    pub timings: StageTimingsMs,
}

impl ReLocResult {
    pub fn final_transform(&self) -> Option<&PoseSE3> {
        self.chosen.map(|i| &self.candidates[i].final_transform)
    }

    pub fn chosen_index(&self) -> Option<u64> {
        self.chosen.map(|i| self.candidates[i].initial.candidate_index)
    }

    /// Report form; `stable` omits the timing block for byte-reproducible
    /// output.
    pub fn to_report(&self, stable: bool) -> crate::io::RelocReport {
        crate::io::RelocReport {
            schema_version: 1,
            failed: self.failed,
            chosen_index: self.chosen_index(),
            chosen_pose_row_major: if self.failed {
                None
            } else {
                self.final_transform().map(|t| t.to_matrix_row_major())
            },
            candidates: self
                .candidates
                .iter()
                .map(|c| crate::io::CandidateReport {
                    rank: c.rank,
                    index: c.initial.candidate_index,
                    descriptor_distance: c.initial.descriptor_distance,
                    yaw_estimate_rad: c.initial.yaw,
                    initial_pose_row_major: c.initial.transform.to_matrix_row_major(),
                    refined_pose_row_major: c.final_transform.to_matrix_row_major(),
                    fitness: c.refined.fitness,
                    inlier_rmse_m: if c.refined.inlier_rmse.is_finite() {
                        c.refined.inlier_rmse
                    } else {
                        -1.0
                    },
                    iterations: c.refined.iterations,
                    converged: c.refined.converged,
                    accepted: c.accepted,
                    rejection: c.rejection.clone(),
                })
                .collect(),
            timings_ms: (!stable).then_some(self.timings),
            metrics: None,
        }
    }
}

/// Run the whole pass for one scan against a database.
pub fn relocalize(
    scan: &PointCloud,
    db: &DescriptorDatabase,
    backend: &DescriptorBackend,
    cfg: &RunConfig,
) -> Result<ReLocResult, RelocError> {
    if scan.is_empty() {
        return Err(RelocError::EmptyScan);
    }
    let t_total = std::time::Instant::now();
    let mut timings = StageTimingsMs::default();

    let t_stage = std::time::Instant::now();
    let img = project(scan, &cfg.projection());
    let descriptor = backend.describe(&img)?;
    timings.descriptor = t_stage.elapsed().as_secs_f64() * 1e3;

    // Descriptors use the full scan; ICP runs on a thinned copy.
    let icp_source = voxel_thin(scan, cfg.icp_source_voxel_m);

    let t_stage = std::time::Instant::now();
    let retrieved = db.query_top_k(&descriptor.q, cfg.top_k)?;
    timings.query = t_stage.elapsed().as_secs_f64() * 1e3;

    let mut candidates = Vec::new();
    let mut chosen = None;
    for (rank, &(index, distance)) in retrieved.iter().enumerate() {
        let record = db.record_by_index(index).expect("retrieved index exists");

        let t_stage = std::time::Instant::now();
        let yaw = backend.estimate_yaw(&descriptor.w, &record.descriptor.w)?;
        timings.yaw += t_stage.elapsed().as_secs_f64() * 1e3;

        let initial = initial_pose(record, yaw, distance);
        let max_corr = correspondence_threshold(distance, cfg);

        let t_stage = std::time::Instant::now();
        let target = record.cloud.load()?;
        // Refine in the candidate frame: the local seed is the pure yaw.
        let refined = icp_refine(
            &icp_source,
            &target,
            &PoseSE3::from_yaw(yaw),
            max_corr,
            cfg.icp_max_iterations,
            cfg.icp_translation_tol_m,
            cfg.icp_rotation_tol_rad,
        );
        timings.icp += t_stage.elapsed().as_secs_f64() * 1e3;

        let final_transform = record.origin.compose(&refined.transform);
        let mut rejection = None;
        if refined.fitness < cfg.min_fitness {
            rejection = Some(format!(
                "fitness {:.3} below the {:.3} gate",
                refined.fitness, cfg.min_fitness
            ));
        } else if refined.inlier_rmse > cfg.max_rmse_m {
            rejection = Some(format!(
                "inlier RMSE {:.3} m above the {:.3} m gate",
                refined.inlier_rmse, cfg.max_rmse_m
            ));
        }
        let accepted = rejection.is_none();
        if let Some(reason) = &rejection {
            log::info!("candidate {index} (rank {rank}) rejected: {reason}");
        }
        candidates.push(CandidateOutcome {
            rank,
            initial,
            refined,
            final_transform,
            accepted,
            rejection,
        });
        if accepted {
            chosen = Some(rank);
            break;
        }
    }

    // Fall back to the best evaluated candidate by fitness, flagged failed.
    let failed = chosen.is_none();
    if failed && !candidates.is_empty() {
        let best = candidates
            .iter()
            .enumerate()
            .max_by(|a, b| {
                a.1.refined
                    .fitness
                    .partial_cmp(&b.1.refined.fitness)
                    .unwrap()
                    .then(b.0.cmp(&a.0))
            })
            .map(|(i, _)| i);
        chosen = best;
    }

    timings.total = t_total.elapsed().as_secs_f64() * 1e3;
    Ok(ReLocResult { retrieved, candidates, chosen, failed, timings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::db::{CloudRef, SubmapRecord};
    use crate::descriptor::DescriptorPair;
    use crate::geometry::{transform_cloud, Point3};
    use crate::kdtree::KdTree;
    use crate::partition::partition_map;
    use crate::sim::{generate_world, map_from_scans, route_poses, simulate_scan, LidarModel, WorldSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn test_config() -> RunConfig {
        // Projection range matches the crop radius so query scans and
        // cropped submaps see the same extent; image bins are sized so that
        // a cell's footprint at the nearest wall exceeds the map's voxel
        // spacing.
        RunConfig {
            crop_radius_m: 60.0,
            max_range_m: 60.0,
            projection_height: 8,
            projection_width: 90,
            icp_source_voxel_m: 0.25,
            ..RunConfig::default()
        }
    }

    fn build_world() -> (crate::sim::TunnelGraph, PointCloud) {
        let spec = WorldSpec {
            straights: 2,
            turns: 1,
            junctions: 1,
            segment_length_m: (60.0, 60.001),
            ..WorldSpec::default()
        };
        let world = generate_world(77, &spec).unwrap();
        let lidar = LidarModel { azimuth_steps: 720, max_range_m: 60.0, ..LidarModel::default() };
        let map = map_from_scans(&world, 2.0, &lidar, 0.12, 3).unwrap();
        (world, map)
    }

    fn build_db(world: &crate::sim::TunnelGraph, map: &PointCloud, cfg: &RunConfig) -> DescriptorDatabase {
        let poses = route_poses(world, 2.0);
        let nodes: Vec<_> = poses
            .iter()
            .enumerate()
            .map(|(i, p)| crate::geometry::TrajectoryNode {
                index: i as u64,
                timestamp: None,
                pose: *p,
            })
            .collect();
        let trajectory = crate::geometry::Trajectory::new(nodes).unwrap();
        let submaps = partition_map(map, &trajectory, cfg.crop_radius_m, 1, 50).unwrap();
        let backend = DescriptorBackend::Spectral;
        let records: Vec<SubmapRecord> = submaps
            .into_iter()
            .map(|s| {
                let img = project(&s.cloud, &cfg.projection());
                let descriptor = backend.describe(&img).unwrap();
                SubmapRecord {
                    index: s.index,
                    origin: s.origin,
                    descriptor,
                    class: None,
                    cloud: CloudRef::Memory(s.cloud),
                }
            })
            .collect();
        DescriptorDatabase::build(records).unwrap()
    }

    #[test]
    fn initial_pose_composition() {
        let record = SubmapRecord {
            index: 0,
            origin: PoseSE3::identity(),
            descriptor: DescriptorPair::new(vec![0.0; 64], vec![0.0; 64]),
            class: None,
            cloud: CloudRef::Memory(PointCloud::from_points(vec![Point3::new(0.0, 0.0, 0.0)])),
        };
        let est = initial_pose(&record, 0.0, 0.1);
        let (dt, dr) = est.transform.delta(&PoseSE3::identity());
        assert!(dt < 1e-12 && dr < 1e-9);

        let est = initial_pose(&record, FRAC_PI_2, 0.1);
        assert!((est.transform.yaw() - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn threshold_examples() {
        let cfg = RunConfig::default();
        assert_eq!(correspondence_threshold(0.0, &cfg), 0.5);
        assert_eq!(correspondence_threshold(1e9, &cfg), 3.0);
        assert!((correspondence_threshold(1.0, &cfg) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn yaw_seed_overlaps_submap_before_icp() {
        // Synthetic-overlap oracle for the yaw sign convention: a scan taken
        // at the submap origin with a heading offset, seeded with the
        // spectral yaw estimate, must land close to the submap cloud.
        let (world, map) = build_world();
        let cfg = test_config();
        let db = build_db(&world, &map, &cfg);
        let backend = DescriptorBackend::Spectral;

        let record = db.record_by_index(10).unwrap();
        let true_yaw = 30.0f64.to_radians();
        let scan_pose = record.origin.compose(&PoseSE3::from_yaw(true_yaw));
        let lidar = LidarModel { azimuth_steps: 360, ..LidarModel::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scan = simulate_scan(&world, &scan_pose, &lidar, &mut rng).unwrap();

        let img = project(&scan, &cfg.projection());
        let desc = backend.describe(&img).unwrap();
        let yaw = backend.estimate_yaw(&desc.w, &record.descriptor.w).unwrap();
        assert!(
            (yaw - true_yaw).abs() < 2.0 * std::f64::consts::TAU / 64.0,
            "estimated {yaw}, true {true_yaw}"
        );

        // Pre-ICP overlap: mean nearest-neighbor distance under the seed.
        let est = initial_pose(record, yaw, 0.0);
        let local_seed = record.origin.inverse().compose(&est.transform);
        let moved = transform_cloud(&scan, &local_seed);
        let target = record.cloud.load().unwrap();
        let tree = KdTree::from_cloud(&target);
        let mean_nn: f64 = moved
            .points
            .iter()
            .map(|p| tree.nearest_k(&[p.x, p.y, p.z], 1)[0].1)
            .sum::<f64>()
            / moved.len() as f64;
        assert!(mean_nn < 0.2, "pre-ICP mean NN distance {mean_nn}");
    }

    #[test]
    fn exact_revisit_is_recovered() {
        let (world, map) = build_world();
        let cfg = test_config();
        let db = build_db(&world, &map, &cfg);
        let backend = DescriptorBackend::Spectral;

        // Query with a stored submap's own cloud: identity pose.
        let record = db.record_by_index(7).unwrap();
        let scan = record.cloud.load().unwrap().into_owned();
        let result = relocalize(&scan, &db, &backend, &cfg).unwrap();
        assert!(!result.failed);
        assert_eq!(result.chosen_index(), Some(7));
        let (dt, _) = result.final_transform().unwrap().delta(&record.origin);
        assert!(dt < 1e-3, "translation error {dt}");
        // Rank order respected: every earlier candidate was rejected.
        for c in &result.candidates[..result.chosen.unwrap()] {
            assert!(!c.accepted && c.rejection.is_some());
        }
    }

    #[test]
    fn out_of_map_scan_is_flagged_failed() {
        let (world, map) = build_world();
        let cfg = test_config();
        let db = build_db(&world, &map, &cfg);
        let backend = DescriptorBackend::Spectral;

        // An adversarial scan from a structurally different world: corridors
        // twice as wide as anything in the mapped network.
        let other = generate_world(
            5150,
            &WorldSpec {
                straights: 2,
                turns: 1,
                junctions: 1,
                width_m: (11.0, 12.0),
                height_m: (7.0, 8.0),
                segment_length_m: (80.0, 90.0),
                ..WorldSpec::default()
            },
        )
        .unwrap();
        let pose = route_poses(&other, 1.0)[40];
        let lidar = LidarModel { azimuth_steps: 360, ..LidarModel::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let scan = simulate_scan(&other, &pose, &lidar, &mut rng).unwrap();
        let result = relocalize(&scan, &db, &backend, &cfg).unwrap();
        assert!(result.failed);
        assert!(result.candidates.iter().all(|c| !c.accepted));
        assert!(result.chosen.is_some(), "failed result still reports the best candidate");
    }
}
