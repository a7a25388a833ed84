//! Ray-cast LiDAR over the tunnel-box union.
//!
//! Per ray, every corridor box contributes an `[enter, exit]` parameter
//! interval; the union of intervals starting at the sensor is walked and the
//! first uncovered parameter is the wall hit. Overlapping boxes (junctions)
//! therefore open up passages exactly.

use super::{TunnelEdge, TunnelGraph};
use crate::geometry::{Point3, PointCloud, PoseSE3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("pose at ({0:.2}, {1:.2}, {2:.2}) is outside every tunnel volume")]
    PoseOutsideWorld(f64, f64, f64),
}

/// Spinning LiDAR model. Defaults mirror a 16-channel puck: +/-15 degree
/// vertical field of view, 0.4 degree azimuth steps, 100 m range.
#[derive(Debug, Clone, Copy)]
pub struct LidarModel {
    pub channels: usize,
    pub fov_up_deg: f64,
    pub fov_down_deg: f64,
    pub azimuth_steps: usize,
    pub max_range_m: f64,
    pub range_noise_sigma_m: f64,
    pub dropout: f64,
}

impl Default for LidarModel {
    fn default() -> Self {
        Self {
            channels: 16,
            fov_up_deg: 15.0,
            fov_down_deg: -15.0,
            azimuth_steps: 900,
            max_range_m: 100.0,
            range_noise_sigma_m: 0.0,
            dropout: 0.0,
        }
    }
}

impl LidarModel {
    fn validate(&self) {
        assert!(self.channels >= 1);
        assert!(self.range_noise_sigma_m >= 0.0);
        assert!((0.0..1.0).contains(&self.dropout));
    }
}

/// Local box geometry of a corridor edge.
pub(super) struct BoxFrame {
    pub(super) origin: Point3,
    pub(super) axis: [f64; 2],
    pub(super) length: f64,
    pub(super) half_width: f64,
    pub(super) z_lo: f64,
    pub(super) z_hi: f64,
}

impl BoxFrame {
    fn new(graph: &TunnelGraph, edge: &TunnelEdge) -> Self {
        let a = graph.nodes()[edge.a];
        let b = graph.nodes()[edge.b];
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let length = dx.hypot(dy);
        Self {
            origin: a,
            axis: [dx / length, dy / length],
            length,
            half_width: edge.width_m / 2.0,
            z_lo: -1.0,
            z_hi: edge.height_m - 1.0,
        }
    }

    fn contains(&self, p: Point3) -> bool {
        let rx = p.x - self.origin.x;
        let ry = p.y - self.origin.y;
        let s = rx * self.axis[0] + ry * self.axis[1];
        let l = -rx * self.axis[1] + ry * self.axis[0];
        s >= 0.0 && s <= self.length && l.abs() <= self.half_width && p.z >= self.z_lo && p.z <= self.z_hi
    }

    /// Slab intersection; returns the `[enter, exit]` ray-parameter window.
    fn intersect(&self, origin: Point3, dir: [f64; 3]) -> Option<(f64, f64)> {
        let rx = origin.x - self.origin.x;
        let ry = origin.y - self.origin.y;
        let locals = [
            (rx * self.axis[0] + ry * self.axis[1], dir[0] * self.axis[0] + dir[1] * self.axis[1], 0.0, self.length),
            (-rx * self.axis[1] + ry * self.axis[0], -dir[0] * self.axis[1] + dir[1] * self.axis[0], -self.half_width, self.half_width),
            (origin.z, dir[2], self.z_lo, self.z_hi),
        ];
        let mut t_enter = f64::NEG_INFINITY;
        let mut t_exit = f64::INFINITY;
        for (o, d, lo, hi) in locals {
            if d.abs() < 1e-12 {
                if o < lo || o > hi {
                    return None;
                }
                continue;
            }
            let (mut t0, mut t1) = ((lo - o) / d, (hi - o) / d);
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_enter = t_enter.max(t0);
            t_exit = t_exit.min(t1);
            if t_enter > t_exit {
                return None;
            }
        }
        Some((t_enter, t_exit))
    }
}

/// Distance along the ray to the union boundary, starting from a point
/// inside the union.
fn wall_distance(boxes: &[BoxFrame], origin: Point3, dir: [f64; 3]) -> f64 {
    let mut intervals: Vec<(f64, f64)> = boxes
        .iter()
        .filter_map(|b| b.intersect(origin, dir))
        .filter(|&(_, exit)| exit > 0.0)
        .collect();
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut covered_to = 0.0f64;
    for (enter, exit) in intervals {
        if enter > covered_to + 1e-9 {
            break;
        }
        covered_to = covered_to.max(exit);
    }
    covered_to
}

/// Simulate one scan from `pose`. Points are in the sensor frame; rays that
/// would exceed the maximum range yield no return.
pub fn simulate_scan(
    world: &TunnelGraph,
    pose: &PoseSE3,
    lidar: &LidarModel,
    rng: &mut ChaCha8Rng,
) -> Result<PointCloud, SimError> {
    lidar.validate();
    let boxes: Vec<BoxFrame> = world.edges().iter().map(|e| BoxFrame::new(world, e)).collect();
    let origin = pose.position();
    if !boxes.iter().any(|b| b.contains(origin)) {
        return Err(SimError::PoseOutsideWorld(origin.x, origin.y, origin.z));
    }

    let mut points = Vec::with_capacity(lidar.channels * lidar.azimuth_steps);
    let rot = pose.rotation();
    for ch in 0..lidar.channels {
        let elev = if lidar.channels == 1 {
            0.0
        } else {
            (lidar.fov_down_deg
                + (lidar.fov_up_deg - lidar.fov_down_deg) * ch as f64 / (lidar.channels - 1) as f64)
                .to_radians()
        };
        let (se, ce) = elev.sin_cos();
        for step in 0..lidar.azimuth_steps {
            let az = std::f64::consts::TAU * step as f64 / lidar.azimuth_steps as f64;
            let (sa, ca) = az.sin_cos();
            // Sensor-frame direction, then world frame through the pose.
            let d_sensor = [ce * ca, ce * sa, se];
            let d_world = [
                rot[(0, 0)] * d_sensor[0] + rot[(0, 1)] * d_sensor[1] + rot[(0, 2)] * d_sensor[2],
                rot[(1, 0)] * d_sensor[0] + rot[(1, 1)] * d_sensor[1] + rot[(1, 2)] * d_sensor[2],
                rot[(2, 0)] * d_sensor[0] + rot[(2, 1)] * d_sensor[1] + rot[(2, 2)] * d_sensor[2],
            ];
            let range = wall_distance(&boxes, origin, d_world);
            if range <= 1e-6 || range > lidar.max_range_m {
                continue;
            }
            if lidar.dropout > 0.0 && rng.gen::<f64>() < lidar.dropout {
                continue;
            }
            let range = if lidar.range_noise_sigma_m > 0.0 {
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let gauss = (-2.0 * u1.ln()).sqrt() * u2.cos();
                (range + gauss * lidar.range_noise_sigma_m).max(1e-3)
            } else {
                range
            };
            points.push(Point3::new(
                d_sensor[0] * range,
                d_sensor[1] * range,
                d_sensor[2] * range,
            ));
        }
    }
    Ok(PointCloud::from_points(points))
}

pub(super) fn boxes_of(world: &TunnelGraph) -> Vec<BoxFrame> {
    world.edges().iter().map(|e| BoxFrame::new(world, e)).collect()
}

pub(super) fn strictly_inside(boxes: &[BoxFrame], p: Point3, margin: f64) -> bool {
    boxes.iter().any(|b| {
        let rx = p.x - b.origin.x;
        let ry = p.y - b.origin.y;
        let s = rx * b.axis[0] + ry * b.axis[1];
        let l = -rx * b.axis[1] + ry * b.axis[0];
        s >= margin
            && s <= b.length - margin
            && l.abs() <= b.half_width - margin
            && p.z >= b.z_lo + margin
            && p.z <= b.z_hi - margin
    })
}
