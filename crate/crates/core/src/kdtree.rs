//! Exact k-d tree over fixed-dimension f64 vectors.
//!
//! The tree is an implicit median layout over a permutation of point
//! indices: node of the range `[lo, hi)` sits at the lower median, the left
//! subtree is `[lo, mid)` and the right `(mid, hi)`. Splits cycle through
//! axes with depth. Ordering is total on `(coordinate, index)`, so the
//! structure is deterministic for a given input and a stored permutation
//! reproduces the tree exactly.
//!
//! Queries are exact: results equal a brute-force linear scan sorted by
//! ascending `(distance, index)`. Coordinates must be finite.

use crate::geometry::PointCloud;

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    /// Flat row-major coordinates, `len = n * dim`.
    data: Vec<f64>,
    /// Tree layout: permutation of `0..n`.
    order: Vec<u32>,
}

impl KdTree {
    /// Build from flat row-major data (`data.len()` must be a multiple of
    /// `dim`). Points with non-finite coordinates are not supported.
    pub fn build(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        assert_eq!(data.len() % dim, 0, "data length must be a multiple of dim");
        let n = data.len() / dim;
        debug_assert!(data.iter().all(|v| v.is_finite()));
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut tree = Self { dim, data, order: Vec::new() };
        tree.build_range(&mut order, 0, n, 0);
        tree.order = order;
        tree
    }

    pub fn from_cloud(cloud: &PointCloud) -> Self {
        let mut data = Vec::with_capacity(cloud.len() * 3);
        for p in &cloud.points {
            data.extend_from_slice(&[p.x, p.y, p.z]);
        }
        Self::build(3, data)
    }

    /// Reassemble from serialized parts. `order` must be a permutation of
    /// `0..n` previously produced by [`KdTree::build`] on the same data.
    pub fn from_parts(dim: usize, data: Vec<f64>, order: Vec<u32>) -> Result<Self, String> {
        if dim == 0 || data.len() % dim != 0 {
            return Err("data length is not a multiple of dim".into());
        }
        let n = data.len() / dim;
        if order.len() != n {
            return Err(format!("order length {} does not match point count {}", order.len(), n));
        }
        let mut seen = vec![false; n];
        for &i in &order {
            let i = i as usize;
            if i >= n || seen[i] {
                return Err("order is not a permutation of point indices".into());
            }
            seen[i] = true;
        }
        Ok(Self { dim, data, order })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> &[u32] {
        &self.order
    }

    pub fn point(&self, index: u32) -> &[f64] {
        let i = index as usize * self.dim;
        &self.data[i..i + self.dim]
    }

    fn coord(&self, index: u32, axis: usize) -> f64 {
        self.data[index as usize * self.dim + axis]
    }

    fn build_range(&self, order: &mut [u32], lo: usize, hi: usize, depth: usize) {
        if hi - lo <= 1 {
            return;
        }
        let axis = depth % self.dim;
        let mid = lo + (hi - lo - 1) / 2;
        order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            self.coord(a, axis)
                .total_cmp(&self.coord(b, axis))
                .then(a.cmp(&b))
        });
        self.build_range(order, lo, mid, depth + 1);
        self.build_range(order, mid + 1, hi, depth + 1);
    }

    fn dist2(&self, index: u32, query: &[f64]) -> f64 {
        self.point(index)
            .iter()
            .zip(query)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// The `min(k, n)` nearest points, ascending by `(Euclidean distance,
    /// index)`.
    pub fn nearest_k(&self, query: &[f64], k: usize) -> Vec<(u32, f64)> {
        assert_eq!(query.len(), self.dim, "query dimension mismatch");
        if k == 0 || self.is_empty() {
            return Vec::new();
        }
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.search(query, 0, self.order.len(), 0, k, &mut best);
        best.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
    }

    /// Nearest point within `max_dist` (Euclidean), or `None`. Ties break
    /// toward the lower index, as in [`KdTree::nearest_k`].
    pub fn nearest_within(&self, query: &[f64], max_dist: f64) -> Option<(u32, f64)> {
        if self.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, u32::MAX);
        self.search_one(query, 0, self.order.len(), 0, &mut best);
        let dist = best.0.sqrt();
        (dist <= max_dist).then_some((best.1, dist))
    }

    fn search_one(&self, query: &[f64], lo: usize, hi: usize, depth: usize, best: &mut (f64, u32)) {
        if lo >= hi {
            return;
        }
        let axis = depth % self.dim;
        let mid = lo + (hi - lo - 1) / 2;
        let node = self.order[mid];
        let cand = (self.dist2(node, query), node);
        if cand < *best {
            *best = cand;
        }
        if hi - lo == 1 {
            return;
        }
        let diff = query[axis] - self.coord(node, axis);
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search_one(query, near.0, near.1, depth + 1, best);
        if diff * diff <= best.0 {
            self.search_one(query, far.0, far.1, depth + 1, best);
        }
    }

    /// `best` is kept sorted ascending by `(dist2, index)` and capped at `k`.
    fn search(&self, query: &[f64], lo: usize, hi: usize, depth: usize, k: usize, best: &mut Vec<(f64, u32)>) {
        if lo >= hi {
            return;
        }
        let axis = depth % self.dim;
        let mid = lo + (hi - lo - 1) / 2;
        let node = self.order[mid];
        let d2 = self.dist2(node, query);
        let cand = (d2, node);
        if best.len() < k || cand < best[best.len() - 1] {
            let pos = best.partition_point(|e| *e < cand);
            best.insert(pos, cand);
            if best.len() > k {
                best.pop();
            }
        }
        if hi - lo == 1 {
            return;
        }
        let diff = query[axis] - self.coord(node, axis);
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(query, near.0, near.1, depth + 1, k, best);
        // The far side may hold an equal-distance, lower-index point, so
        // only a strictly larger plane distance allows pruning.
        if best.len() < k || diff * diff <= best[best.len() - 1].0 {
            self.search(query, far.0, far.1, depth + 1, k, best);
        }
    }
}

/// Brute-force scan with the same ordering contract as [`KdTree::nearest_k`].
pub fn linear_scan_k(dim: usize, data: &[f64], query: &[f64], k: usize) -> Vec<(u32, f64)> {
    let n = data.len() / dim;
    let mut all: Vec<(f64, u32)> = (0..n)
        .map(|i| {
            let d2: f64 = data[i * dim..(i + 1) * dim]
                .iter()
                .zip(query)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d2, i as u32)
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    all.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
}
