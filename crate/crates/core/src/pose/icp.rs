//! Point-to-point ICP with a closed-form SVD rigid solve per iteration.
//!
//! Correspondences are nearest neighbors within `max_corr` over a k-d tree
//! of the target. The best-seen iterate (by fitness, then inlier RMSE) is
//! returned, which guards against oscillation near the correspondence
//! radius.

use crate::geometry::{Point3, PointCloud, PoseSE3};
use crate::kdtree::KdTree;
use nalgebra::{Matrix3, Vector3, SVD};

/// Refinement outcome and diagnostics.
#[derive(Debug, Clone)]
pub struct RefinedPose {
    pub transform: PoseSE3,
    /// Fraction of source points with a correspondence within `max_corr`.
    pub fitness: f64,
    /// RMS distance over matched pairs, meters.
    pub inlier_rmse: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct Correspondences {
    /// (source position, target position) pairs.
    pairs: Vec<(Point3, Point3)>,
    fitness: f64,
    rmse: f64,
}

fn correspondences(
    source: &PointCloud,
    tree: &KdTree,
    target: &PointCloud,
    t: &PoseSE3,
    max_corr: f64,
) -> Correspondences {
    let mut pairs = Vec::with_capacity(source.len());
    let mut sq_sum = 0.0f64;
    for &p in &source.points {
        let moved = t.apply(p);
        if let Some((idx, dist)) = tree.nearest_within(&[moved.x, moved.y, moved.z], max_corr) {
            pairs.push((p, target.points[idx as usize]));
            sq_sum += dist * dist;
        }
    }
    let n = pairs.len();
    Correspondences {
        fitness: n as f64 / source.len() as f64,
        rmse: if n > 0 { (sq_sum / n as f64).sqrt() } else { f64::INFINITY },
        pairs,
    }
}

/// Closed-form rigid least squares over matched pairs: SVD of the
/// cross-covariance with reflection correction.
fn solve_rigid(pairs: &[(Point3, Point3)]) -> Option<PoseSE3> {
    if pairs.len() < 3 {
        return None;
    }
    let n = pairs.len() as f64;
    let mut cs = Vector3::zeros();
    let mut cd = Vector3::zeros();
    for (s, d) in pairs {
        cs += s.to_vector();
        cd += d.to_vector();
    }
    cs /= n;
    cd /= n;
    let mut h = Matrix3::zeros();
    for (s, d) in pairs {
        h += (s.to_vector() - cs) * (d.to_vector() - cd).transpose();
    }
    let svd = SVD::new(h, true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let v = v_t.transpose();
    let mut correction = Matrix3::identity();
    correction[(2, 2)] = (v * u.transpose()).determinant().signum();
    let rotation = v * correction * u.transpose();
    let translation = cd - rotation * cs;
    PoseSE3::from_parts(rotation, translation).ok()
}

/// Refine `t0` so that `transform * source` aligns with `target`.
///
/// Stops when the pose update falls below the tolerances or after
/// `max_iter` solves. Zero correspondences on the first pass yield a
/// non-converged result with fitness 0 rather than an error.
#[allow(clippy::too_many_arguments)]
pub fn icp_refine(
    source: &PointCloud,
    target: &PointCloud,
    t0: &PoseSE3,
    max_corr: f64,
    max_iter: usize,
    translation_tol: f64,
    rotation_tol: f64,
) -> RefinedPose {
    assert!(max_iter >= 1);
    assert!(!source.is_empty() && !target.is_empty());
    let tree = KdTree::from_cloud(target);

    let mut t = *t0;
    let mut best: Option<RefinedPose> = None;
    let mut converged = false;
    for iter in 0..=max_iter {
        let corr = correspondences(source, &tree, target, &t, max_corr);
        if corr.pairs.is_empty() {
            if iter == 0 {
                return RefinedPose {
                    transform: *t0,
                    fitness: 0.0,
                    inlier_rmse: f64::INFINITY,
                    iterations: 0,
                    converged: false,
                };
            }
            break;
        }
        let candidate = RefinedPose {
            transform: t,
            fitness: corr.fitness,
            inlier_rmse: corr.rmse,
            iterations: iter,
            converged,
        };
        let improves = match &best {
            None => true,
            Some(b) => {
                candidate.fitness > b.fitness
                    || (candidate.fitness == b.fitness && candidate.inlier_rmse < b.inlier_rmse)
            }
        };
        if improves {
            best = Some(candidate);
        }
        if converged || iter == max_iter {
            break;
        }
        let Some(t_new) = solve_rigid(&corr.pairs) else {
            break;
        };
        let (dt, dr) = t.delta(&t_new);
        t = t_new;
        if dt < translation_tol && dr < rotation_tol {
            // One more pass evaluates the converged pose before exiting.
            converged = true;
        }
    }
    let mut out = best.expect("at least one iterate was evaluated");
    out.converged = converged;
    out
}
