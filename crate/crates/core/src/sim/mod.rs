//! Procedural tunnel networks and a ray-cast LiDAR simulator, producing
//! labeled datasets with exact ground truth.
//!
//! Worlds are built from rectangular-section corridor boxes in the xy-plane:
//! a spine of straight segments joined by 90-degree bends (alternating left
//! and right, so the spine never self-intersects) plus perpendicular branch
//! stubs that form junctions. The centerline sits at z = 0 with the floor
//! 1 m below, matching a sensor carried 1 m above ground.

mod dataset;
mod lidar;

pub use dataset::{
    export_dataset, generate_dataset, label_for, load_dataset, map_cloud, map_from_scans,
    route_poses,
    LabeledSample, JUNCTION_LABEL_RADIUS_M, TURN_LABEL_RADIUS_M,
};
pub use lidar::{simulate_scan, LidarModel, SimError};

use crate::geometry::Point3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("world spec requests no segments")]
    NoSegments,
    #[error("{turns} turns need at least {} segments", .turns + 1)]
    TooManyTurns { turns: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// Spine endpoint or pass-through point.
    Way,
    /// 90-degree direction change on the spine.
    Bend,
    /// Base of a branch stub; degree >= 3.
    JunctionBase,
    /// Dead end of a branch stub.
    BranchEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Straight,
    Turn,
}

/// Corridor segment between two nodes with a rectangular cross-section:
/// full `width_m` laterally, `height_m` from floor (z = -1) upward.
#[derive(Debug, Clone, Copy)]
pub struct TunnelEdge {
    pub a: usize,
    pub b: usize,
    pub width_m: f64,
    pub height_m: f64,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone)]
pub struct TunnelGraph {
    nodes: Vec<Point3>,
    node_kinds: Vec<NodeKind>,
    edges: Vec<TunnelEdge>,
    /// Node indices of the traversable route (the spine, in order).
    route: Vec<usize>,
}

/// What to generate. Segment/branch extents are sampled uniformly from the
/// given ranges.
#[derive(Debug, Clone, Copy)]
pub struct WorldSpec {
    pub straights: usize,
    pub turns: usize,
    pub junctions: usize,
    pub segment_length_m: (f64, f64),
    pub width_m: (f64, f64),
    pub height_m: (f64, f64),
    pub branch_length_m: (f64, f64),
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            straights: 3,
            turns: 1,
            junctions: 1,
            segment_length_m: (45.0, 70.0),
            width_m: (4.0, 8.0),
            height_m: (3.0, 5.0),
            branch_length_m: (12.0, 24.0),
        }
    }
}

impl TunnelGraph {
    pub fn nodes(&self) -> &[Point3] {
        &self.nodes
    }

    pub fn node_kind(&self, i: usize) -> NodeKind {
        self.node_kinds[i]
    }

    pub fn edges(&self) -> &[TunnelEdge] {
        &self.edges
    }

    pub fn route(&self) -> &[usize] {
        &self.route
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.a == node || e.b == node).count()
    }

    /// Nodes of degree >= 3.
    pub fn junction_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.degree(i) >= 3).collect()
    }

    pub fn bend_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.node_kinds[i] == NodeKind::Bend)
            .collect()
    }

    /// Total route length in meters.
    pub fn route_length(&self) -> f64 {
        self.route
            .windows(2)
            .map(|w| self.nodes[w[0]].distance(self.nodes[w[1]]))
            .sum()
    }
}

/// Deterministically build a tunnel network for the spec.
pub fn generate_world(seed: u64, spec: &WorldSpec) -> Result<TunnelGraph, WorldError> {
    if spec.straights == 0 {
        return Err(WorldError::NoSegments);
    }
    if spec.turns + 1 > spec.straights {
        return Err(WorldError::TooManyTurns { turns: spec.turns });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Which of the straights-1 joints bend, spread evenly.
    let mut bend_at = vec![false; spec.straights.saturating_sub(1)];
    if spec.turns > 0 {
        let joints = bend_at.len();
        for t in 0..spec.turns {
            let slot = (t * joints) / spec.turns + (joints / spec.turns.max(1)) / 2;
            bend_at[slot.min(joints - 1)] = true;
        }
        // Exact count despite rounding collisions.
        let mut placed = bend_at.iter().filter(|b| **b).count();
        let mut i = 0;
        while placed < spec.turns && i < bend_at.len() {
            if !bend_at[i] {
                bend_at[i] = true;
                placed += 1;
            }
            i += 1;
        }
    }

    // Junctions spread across segments.
    let mut stubs_per_segment = vec![0usize; spec.straights];
    for j in 0..spec.junctions {
        stubs_per_segment[(j * spec.straights) / spec.junctions.max(1) % spec.straights] += 1;
    }

    let mut nodes: Vec<Point3> = vec![Point3::new(0.0, 0.0, 0.0)];
    let mut kinds = vec![NodeKind::Way];
    let mut edges = Vec::new();
    let mut route = vec![0usize];

    let mut heading: (f64, f64) = (1.0, 0.0); // +x
    let mut turn_left = true;
    let mut cursor = Point3::new(0.0, 0.0, 0.0);

    for seg in 0..spec.straights {
        let length = rng.gen_range(spec.segment_length_m.0..spec.segment_length_m.1);
        let width = rng.gen_range(spec.width_m.0..spec.width_m.1);
        let height = rng.gen_range(spec.height_m.0..spec.height_m.1);
        assert!((2.0..=12.0).contains(&width), "edge width invariant");

        let end = Point3::new(cursor.x + heading.0 * length, cursor.y + heading.1 * length, 0.0);

        // Split the segment at junction bases so they become real nodes.
        let stubs = stubs_per_segment[seg];
        let mut waypoints = Vec::new();
        for s in 0..stubs {
            let f = (s + 1) as f64 / (stubs + 1) as f64;
            waypoints.push(Point3::new(
                cursor.x + heading.0 * length * f,
                cursor.y + heading.1 * length * f,
                0.0,
            ));
        }
        waypoints.push(end);

        for (wi, &wp) in waypoints.iter().enumerate() {
            let prev = *route.last().unwrap();
            nodes.push(wp);
            let node_id = nodes.len() - 1;
            let is_base = wi + 1 < waypoints.len();
            kinds.push(if is_base { NodeKind::JunctionBase } else { NodeKind::Way });
            edges.push(TunnelEdge { a: prev, b: node_id, width_m: width, height_m: height, kind: EdgeKind::Straight });
            route.push(node_id);

            if is_base {
                // Branch to the right of travel; the spine staircase only
                // ever advances left/up, so the right side stays clear.
                let (bx, by) = (heading.1, -heading.0);
                let blen = rng.gen_range(spec.branch_length_m.0..spec.branch_length_m.1);
                let bend_pos = Point3::new(wp.x + bx * blen, wp.y + by * blen, 0.0);
                nodes.push(bend_pos);
                kinds.push(NodeKind::BranchEnd);
                let bw = rng.gen_range(spec.width_m.0..spec.width_m.1);
                edges.push(TunnelEdge {
                    a: node_id,
                    b: nodes.len() - 1,
                    width_m: bw,
                    height_m: height,
                    kind: EdgeKind::Straight,
                });
            }
        }
        cursor = end;

        if seg + 1 < spec.straights && bend_at[seg] {
            let last = *route.last().unwrap();
            kinds[last] = NodeKind::Bend;
            heading = if turn_left {
                (-heading.1, heading.0)
            } else {
                (heading.1, -heading.0)
            };
            turn_left = !turn_left;
        }
    }

    // Mark edges adjacent to a bend.
    for e in &mut edges {
        if kinds[e.a] == NodeKind::Bend || kinds[e.b] == NodeKind::Bend {
            e.kind = EdgeKind::Turn;
        }
    }

    Ok(TunnelGraph { nodes, node_kinds: kinds, edges, route })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_corridor() {
        let spec = WorldSpec { straights: 1, turns: 0, junctions: 0, ..WorldSpec::default() };
        let world = generate_world(1, &spec).unwrap();
        assert_eq!(world.edges().len(), 1);
        assert!(world.junction_nodes().is_empty());
        assert!(world.route_length() >= spec.segment_length_m.0);
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = WorldSpec::default();
        let a = generate_world(7, &spec).unwrap();
        let b = generate_world(7, &spec).unwrap();
        assert_eq!(a.nodes().len(), b.nodes().len());
        for (x, y) in a.nodes().iter().zip(b.nodes()) {
            assert_eq!(x, y);
        }
        let c = generate_world(8, &spec).unwrap();
        assert!(a.nodes().iter().zip(c.nodes()).any(|(x, y)| x != y));
    }

    #[test]
    fn requested_junction_count() {
        let spec = WorldSpec { straights: 4, turns: 2, junctions: 2, ..WorldSpec::default() };
        let world = generate_world(3, &spec).unwrap();
        assert_eq!(world.junction_nodes().len(), 2);
        assert_eq!(world.bend_nodes().len(), 2);
    }

    #[test]
    fn infeasible_specs_rejected() {
        let spec = WorldSpec { straights: 0, junctions: 2, ..WorldSpec::default() };
        assert!(matches!(generate_world(0, &spec), Err(WorldError::NoSegments)));
        let spec = WorldSpec { straights: 2, turns: 5, ..WorldSpec::default() };
        assert!(matches!(generate_world(0, &spec), Err(WorldError::TooManyTurns { .. })));
    }

    #[test]
    fn spine_never_self_intersects() {
        // Alternating bends keep all spine nodes strictly monotone in x+y.
        let spec = WorldSpec { straights: 6, turns: 5, junctions: 3, ..WorldSpec::default() };
        let world = generate_world(11, &spec).unwrap();
        let route = world.route();
        for w in route.windows(2) {
            let a = world.nodes()[w[0]];
            let b = world.nodes()[w[1]];
            assert!(b.x + b.y > a.x + a.y - 1e-9);
        }
    }
}
