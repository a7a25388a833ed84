//! Labeled datasets over a tunnel world: poses sampled along the route,
//! ray-cast scans, class labels from world geometry, and map-cloud surface
//! sampling. Everything is deterministic per seed; per-pose rng streams are
//! derived from `(seed, pose index)` so parallel and serial runs agree.

use super::lidar::{boxes_of, simulate_scan, strictly_inside, LidarModel, SimError};
use super::{NodeKind, TunnelGraph};
use crate::geometry::{Point3, PointCloud, PoseSE3};
use crate::io::{read_pcd, read_trajectory, write_pcd, IoError, PcdEncoding, TrajectoryFormat};
use crate::model::ClassLabel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Poses within this distance of a junction base are labeled junction.
pub const JUNCTION_LABEL_RADIUS_M: f64 = 5.0;
/// Poses within this distance of a bend (outside junctions) are turns.
pub const TURN_LABEL_RADIUS_M: f64 = 4.0;

/// One ground-truth sample: a sensor-frame scan taken at a known pose.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub scan: PointCloud,
    pub pose: PoseSE3,
    pub label: ClassLabel,
}

/// The label is a pure function of position and world geometry.
pub fn label_for(world: &TunnelGraph, position: Point3) -> ClassLabel {
    let near = |kind: NodeKind, radius: f64| {
        world
            .nodes()
            .iter()
            .enumerate()
            .filter(|(i, _)| world.node_kind(*i) == kind)
            .any(|(_, n)| n.distance(position) <= radius)
    };
    let junction = world
        .junction_nodes()
        .iter()
        .any(|&i| world.nodes()[i].distance(position) <= JUNCTION_LABEL_RADIUS_M);
    if junction {
        ClassLabel::Junction
    } else if near(NodeKind::Bend, TURN_LABEL_RADIUS_M) {
        ClassLabel::Turn
    } else {
        ClassLabel::Straight
    }
}

/// Poses every `spacing_m` meters of arc length along the route, heading
/// along the local tangent.
pub fn route_poses(world: &TunnelGraph, spacing_m: f64) -> Vec<PoseSE3> {
    assert!(spacing_m > 0.0);
    let route = world.route();
    let mut poses = Vec::new();
    let mut carry = 0.0f64;
    for w in route.windows(2) {
        let a = world.nodes()[w[0]];
        let b = world.nodes()[w[1]];
        let len = a.distance(b);
        if len < 1e-9 {
            continue;
        }
        let ux = (b.x - a.x) / len;
        let uy = (b.y - a.y) / len;
        let heading = uy.atan2(ux);
        let mut t = carry;
        while t < len {
            poses.push(PoseSE3::from_yaw_and_position(
                heading,
                Point3::new(a.x + ux * t, a.y + uy * t, 0.0),
            ));
            t += spacing_m;
        }
        carry = t - len;
    }
    poses
}

/// Scans + ground truth along the route at the given spacing.
pub fn generate_dataset(
    world: &TunnelGraph,
    spacing_m: f64,
    lidar: &LidarModel,
    seed: u64,
) -> Result<Vec<LabeledSample>, SimError> {
    let mut out = Vec::new();
    for (i, pose) in route_poses(world, spacing_m).into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let scan = simulate_scan(world, &pose, lidar, &mut rng)?;
        let label = label_for(world, pose.position());
        out.push(LabeledSample { scan, pose, label });
    }
    Ok(out)
}

/// Build a map the way SLAM builds one: accumulate registered scans along
/// the route, thinned to one point per `voxel_m` cell (first write wins, so
/// the result is deterministic). Near-trajectory walls come out with
/// scan-like density, which keeps submap projections comparable to query
/// scans.
pub fn map_from_scans(
    world: &TunnelGraph,
    spacing_m: f64,
    lidar: &LidarModel,
    voxel_m: f64,
    seed: u64,
) -> Result<PointCloud, SimError> {
    assert!(voxel_m > 0.0);
    let mut seen = std::collections::HashSet::new();
    let mut points = Vec::new();
    for (i, pose) in route_poses(world, spacing_m).into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Stream domain disjoint from generate_dataset's.
        rng.set_stream(u64::MAX - i as u64);
        let scan = simulate_scan(world, &pose, lidar, &mut rng)?;
        for p in crate::geometry::transform_cloud(&scan, &pose).points {
            let key = (
                (p.x / voxel_m).floor() as i64,
                (p.y / voxel_m).floor() as i64,
                (p.z / voxel_m).floor() as i64,
            );
            if seen.insert(key) {
                points.push(p);
            }
        }
    }
    Ok(PointCloud::from_points(points))
}

/// Sample the union boundary (walls, floor, ceiling, end caps) on a regular
/// grid, dropping points that fall strictly inside another corridor (open
/// passages). `jitter_m` adds deterministic surface roughness. Useful for
/// geometry checks; for pipeline-realistic maps prefer [`map_from_scans`].
pub fn map_cloud(world: &TunnelGraph, grid_m: f64, jitter_m: f64, seed: u64) -> PointCloud {
    assert!(grid_m > 0.0);
    let boxes = boxes_of(world);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    for b in &boxes {
        let perp = [-b.axis[1], b.axis[0]];
        let mut emit = |s: f64, l: f64, z: f64, rng: &mut ChaCha8Rng| {
            let mut p = Point3::new(
                b.origin.x + b.axis[0] * s + perp[0] * l,
                b.origin.y + b.axis[1] * s + perp[1] * l,
                z,
            );
            if jitter_m > 0.0 {
                p = Point3::new(
                    p.x + rng.gen_range(-jitter_m..jitter_m),
                    p.y + rng.gen_range(-jitter_m..jitter_m),
                    p.z + rng.gen_range(-jitter_m..jitter_m),
                );
            }
            if !strictly_inside(&boxes, p, 1e-6) {
                points.push(p);
            }
        };
        let (ns, nl, nz) = (
            (b.length / grid_m).ceil() as usize,
            (2.0 * b.half_width / grid_m).ceil() as usize,
            ((b.z_hi - b.z_lo) / grid_m).ceil() as usize,
        );
        for is in 0..=ns {
            let s = b.length * is as f64 / ns as f64;
            for iz in 0..=nz {
                let z = b.z_lo + (b.z_hi - b.z_lo) * iz as f64 / nz as f64;
                emit(s, -b.half_width, z, &mut rng);
                emit(s, b.half_width, z, &mut rng);
            }
            for il in 1..nl {
                let l = -b.half_width + 2.0 * b.half_width * il as f64 / nl as f64;
                emit(s, l, b.z_lo, &mut rng);
                emit(s, l, b.z_hi, &mut rng);
            }
        }
        for iz in 0..=nz {
            let z = b.z_lo + (b.z_hi - b.z_lo) * iz as f64 / nz as f64;
            for il in 0..=nl {
                let l = -b.half_width + 2.0 * b.half_width * il as f64 / nl as f64;
                emit(0.0, l, z, &mut rng);
                emit(b.length, l, z, &mut rng);
            }
        }
    }
    PointCloud::from_points(points)
}

/// Write `scans/scan_NNNNNN.pcd`, a TUM `trajectory.txt`, and `labels.csv`.
pub fn export_dataset(samples: &[LabeledSample], dir: &Path) -> Result<(), IoError> {
    let scans = dir.join("scans");
    std::fs::create_dir_all(&scans).map_err(|e| IoError::Io {
        path: scans.display().to_string(),
        source: e,
    })?;
    let mut trajectory = String::new();
    let mut labels = String::from("index,class\n");
    for (i, s) in samples.iter().enumerate() {
        write_pcd(&s.scan, &scans.join(format!("scan_{i:06}.pcd")), PcdEncoding::Binary)?;
        let p = s.pose.position();
        let half = s.pose.yaw() / 2.0;
        trajectory.push_str(&format!(
            "{} {} {} {} 0 0 {} {}\n",
            i as f64,
            p.x,
            p.y,
            p.z,
            half.sin(),
            half.cos()
        ));
        labels.push_str(&format!("{i},{}\n", s.label.name()));
    }
    std::fs::write(dir.join("trajectory.txt"), trajectory)
        .map_err(|e| IoError::Io { path: dir.display().to_string(), source: e })?;
    std::fs::write(dir.join("labels.csv"), labels)
        .map_err(|e| IoError::Io { path: dir.display().to_string(), source: e })?;
    Ok(())
}

/// Read a dataset directory written by [`export_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Vec<LabeledSample>, IoError> {
    let trajectory = read_trajectory(&dir.join("trajectory.txt"), TrajectoryFormat::Tum)?;
    let labels_path = dir.join("labels.csv");
    let text = std::fs::read_to_string(&labels_path)
        .map_err(|e| IoError::Io { path: labels_path.display().to_string(), source: e })?;
    let mut labels = Vec::new();
    for (lno, line) in text.lines().enumerate().skip(1) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (_, name) = line.split_once(',').ok_or_else(|| IoError::Parse {
            path: labels_path.display().to_string(),
            line: lno + 1,
            message: "expected index,class".into(),
        })?;
        let label = ClassLabel::ALL
            .iter()
            .find(|c| c.name() == name)
            .copied()
            .ok_or_else(|| IoError::Parse {
                path: labels_path.display().to_string(),
                line: lno + 1,
                message: format!("unknown class {name:?}"),
            })?;
        labels.push(label);
    }
    if labels.len() != trajectory.len() {
        return Err(IoError::Parse {
            path: labels_path.display().to_string(),
            line: 0,
            message: format!(
                "labels.csv has {} rows but the trajectory has {} poses",
                labels.len(),
                trajectory.len()
            ),
        });
    }
    let mut samples = Vec::with_capacity(labels.len());
    for (i, (node, label)) in trajectory.nodes().iter().zip(labels).enumerate() {
        let scan = read_pcd(&dir.join("scans").join(format!("scan_{i:06}.pcd")))?;
        samples.push(LabeledSample { scan, pose: node.pose, label });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_world, WorldSpec};
    use tempfile::tempdir;

    fn straight_world(len: f64) -> TunnelGraph {
        let spec = WorldSpec {
            straights: 1,
            turns: 0,
            junctions: 0,
            segment_length_m: (len, len + 1e-6),
            ..WorldSpec::default()
        };
        generate_world(5, &spec).unwrap()
    }

    #[test]
    fn straight_corridor_all_straight_labels() {
        let world = straight_world(100.0);
        let lidar = LidarModel { channels: 4, azimuth_steps: 90, ..LidarModel::default() };
        let samples = generate_dataset(&world, 1.0, &lidar, 3).unwrap();
        assert!((samples.len() as i64 - 100).abs() <= 1, "got {}", samples.len());
        assert!(samples.iter().all(|s| s.label == ClassLabel::Straight));
    }

    #[test]
    fn junction_vicinity_labeled_junction() {
        let spec = WorldSpec {
            straights: 2,
            turns: 1,
            junctions: 1,
            segment_length_m: (60.0, 60.0001),
            ..WorldSpec::default()
        };
        let world = generate_world(4, &spec).unwrap();
        let lidar = LidarModel { channels: 4, azimuth_steps: 90, ..LidarModel::default() };
        let samples = generate_dataset(&world, 1.0, &lidar, 3).unwrap();
        let junction = world.nodes()[world.junction_nodes()[0]];
        for s in &samples {
            let d = s.pose.position().distance(junction);
            if d <= JUNCTION_LABEL_RADIUS_M {
                assert_eq!(s.label, ClassLabel::Junction, "at distance {d}");
            }
        }
        let hist: Vec<usize> = ClassLabel::ALL
            .iter()
            .map(|c| samples.iter().filter(|s| s.label == *c).count())
            .collect();
        assert!(hist.iter().all(|&c| c > 0), "all classes present: {hist:?}");

        // Same seed gives the same histogram.
        let again = generate_dataset(&world, 1.0, &lidar, 3).unwrap();
        let hist2: Vec<usize> = ClassLabel::ALL
            .iter()
            .map(|c| again.iter().filter(|s| s.label == *c).count())
            .collect();
        assert_eq!(hist, hist2);
    }

    #[test]
    fn map_cloud_lies_on_union_boundary() {
        let world = straight_world(40.0);
        let cloud = map_cloud(&world, 0.5, 0.0, 1);
        assert!(cloud.len() > 1000);
        // Corridor runs along +x from the origin: every wall point must sit
        // on one of the six planes.
        let e = world.edges()[0];
        let (hw, zl, zh) = (e.width_m / 2.0, -1.0, e.height_m - 1.0);
        let len = world.nodes()[e.b].distance(world.nodes()[e.a]);
        for p in &cloud.points {
            let on_wall = (p.y.abs() - hw).abs() < 1e-6
                || (p.z - zl).abs() < 1e-6
                || (p.z - zh).abs() < 1e-6
                || p.x.abs() < 1e-6
                || (p.x - len).abs() < 1e-6;
            assert!(on_wall, "{p:?} is off-surface");
        }
    }

    #[test]
    fn export_import_round_trip() {
        let world = straight_world(30.0);
        let lidar = LidarModel { channels: 2, azimuth_steps: 45, ..LidarModel::default() };
        let samples = generate_dataset(&world, 2.0, &lidar, 9).unwrap();
        let dir = tempdir().unwrap();
        export_dataset(&samples, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), samples.len());
        for (a, b) in back.iter().zip(&samples) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.scan.points, b.scan.points);
            let (dt, dr) = a.pose.delta(&b.pose);
            assert!(dt < 1e-9 && dr < 1e-6);
        }
    }
}
