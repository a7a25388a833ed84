//! Metric suite over batches of re-localization queries: recall@k curves,
//! yaw error statistics, final pose error statistics, and stage timings.

use crate::geometry::{Point3, PoseSE3};
use crate::io::StageTimingsMs;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation run holds no query records")]
    EmptyRun,
    #[error("success radius must be positive, got {0}")]
    BadRadius(f64),
}

/// Everything recorded for one evaluated query.
#[derive(Debug, Clone)]
pub struct QueryRecord {
    pub gt_pose: PoseSE3,
    /// Ranked candidates: submap index, descriptor distance, and the
    /// candidate submap's map-frame position.
    pub candidates: Vec<(u64, f64, Point3)>,
    /// Yaw estimate and ground truth, radians, for the chosen candidate.
    pub yaw_estimate: Option<f64>,
    pub yaw_gt: Option<f64>,
    /// Final refined pose; `None` when flagged failed.
    pub final_pose: Option<PoseSE3>,
    pub failed: bool,
    pub timings: StageTimingsMs,
}

#[derive(Debug, Clone, Default)]
pub struct EvalRun {
    pub records: Vec<QueryRecord>,
}

/// Entry `k-1` = fraction of queries with a candidate within
/// `success_radius` of the ground truth among the top k.
pub fn recall_at_k(run: &EvalRun, success_radius_m: f64, k_max: usize) -> Result<Vec<f64>, EvalError> {
    if run.records.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    if !(success_radius_m > 0.0) {
        return Err(EvalError::BadRadius(success_radius_m));
    }
    let n = run.records.len() as f64;
    let mut recall = vec![0.0f64; k_max];
    for record in &run.records {
        let gt = record.gt_pose.position();
        // First rank whose candidate is within the radius.
        let first_hit = record
            .candidates
            .iter()
            .position(|(_, _, pos)| pos.distance(gt) <= success_radius_m);
        if let Some(rank) = first_hit {
            for k in rank..k_max {
                recall[k] += 1.0;
            }
        }
    }
    for r in &mut recall {
        *r /= n;
    }
    Ok(recall)
}

fn wrap_deg(mut e: f64) -> f64 {
    while e > 180.0 {
        e -= 360.0;
    }
    while e <= -180.0 {
        e += 360.0;
    }
    e
}

/// Mean absolute error and population standard deviation of the absolute
/// yaw errors, in degrees. Errors wrap to `(-180, 180]` before `abs`.
pub fn yaw_stats(run: &EvalRun) -> Result<(f64, f64), EvalError> {
    let errors: Vec<f64> = run
        .records
        .iter()
        .filter_map(|r| match (r.yaw_estimate, r.yaw_gt) {
            (Some(est), Some(gt)) => {
                Some(wrap_deg(est.to_degrees() - gt.to_degrees()).abs())
            }
            _ => None,
        })
        .collect();
    if errors.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let n = errors.len() as f64;
    let mae = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mae) * (e - mae)).sum::<f64>() / n;
    Ok((mae, var.sqrt()))
}

/// Mean and population standard deviation of the final translation error
/// over non-failed queries, meters.
pub fn pose_stats(run: &EvalRun) -> Result<(f64, f64), EvalError> {
    let errors: Vec<f64> = run
        .records
        .iter()
        .filter(|r| !r.failed)
        .filter_map(|r| {
            r.final_pose
                .as_ref()
                .map(|p| p.position().distance(r.gt_pose.position()))
        })
        .collect();
    if errors.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Per-stage mean timings in milliseconds.
pub fn timing_stats(run: &EvalRun) -> Result<StageTimingsMs, EvalError> {
    if run.records.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let n = run.records.len() as f64;
    let mut out = StageTimingsMs::default();
    for r in &run.records {
        out.descriptor += r.timings.descriptor;
        out.query += r.timings.query;
        out.yaw += r.timings.yaw;
        out.icp += r.timings.icp;
        out.total += r.timings.total;
    }
    out.descriptor /= n;
    out.query /= n;
    out.yaw /= n;
    out.icp /= n;
    out.total /= n;
    Ok(out)
}

/// `k,recall` CSV rows for the curve.
pub fn recall_curve_csv(recall: &[f64]) -> String {
    let mut out = String::from("k,recall\n");
    for (i, r) in recall.iter().enumerate() {
        out.push_str(&format!("{},{r}\n", i + 1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(gt: Point3, candidates: Vec<(u64, f64, Point3)>) -> QueryRecord {
        QueryRecord {
            gt_pose: PoseSE3::from_yaw_and_position(0.0, gt),
            candidates,
            yaw_estimate: None,
            yaw_gt: None,
            final_pose: None,
            failed: true,
            timings: StageTimingsMs::default(),
        }
    }

    #[test]
    fn recall_extremes() {
        let origin = Point3::new(0.0, 0.0, 0.0);
        let near = Point3::new(1.0, 0.0, 0.0);
        let far = Point3::new(50.0, 0.0, 0.0);

        let all_hit = EvalRun {
            records: vec![
                record(origin, vec![(0, 0.1, near)]),
                record(origin, vec![(1, 0.1, near)]),
            ],
        };
        assert_eq!(recall_at_k(&all_hit, 3.0, 3).unwrap(), vec![1.0, 1.0, 1.0]);

        let none_hit = EvalRun {
            records: vec![record(origin, vec![(0, 0.1, far), (1, 0.2, far)])],
        };
        assert_eq!(recall_at_k(&none_hit, 3.0, 2).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn recall_hand_enumerated() {
        // Oracle: manual enumeration over three queries.
        // q1 hits at rank 1, q2 at rank 2, q3 never.
        let origin = Point3::new(0.0, 0.0, 0.0);
        let near = Point3::new(1.0, 0.0, 0.0);
        let far = Point3::new(50.0, 0.0, 0.0);
        let run = EvalRun {
            records: vec![
                record(origin, vec![(0, 0.1, near), (1, 0.2, far)]),
                record(origin, vec![(0, 0.1, far), (1, 0.2, near)]),
                record(origin, vec![(0, 0.1, far), (1, 0.2, far)]),
            ],
        };
        let recall = recall_at_k(&run, 3.0, 3).unwrap();
        let expected = [1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0];
        for (got, want) in recall.iter().zip(&expected) {
            assert!((got - want).abs() < 1e-12);
        }
        // Monotone in k and in the radius.
        assert!(recall.windows(2).all(|w| w[1] >= w[0]));
        let wide = recall_at_k(&run, 100.0, 3).unwrap();
        for (w, n) in wide.iter().zip(&recall) {
            assert!(w >= n);
        }
    }

    #[test]
    fn yaw_statistics_and_wrapping() {
        let mut run = EvalRun::default();
        let mut push = |est_deg: f64, gt_deg: f64| {
            let mut r = record(Point3::new(0.0, 0.0, 0.0), vec![]);
            r.yaw_estimate = Some(est_deg.to_radians());
            r.yaw_gt = Some(gt_deg.to_radians());
            run.records.push(r);
        };
        push(10.0, 0.0);
        push(20.0, 0.0);
        let (mae, std) = yaw_stats(&run).unwrap();
        assert!((mae - 15.0).abs() < 1e-9);
        assert!((std - 5.0).abs() < 1e-9);

        // Wraparound: 359 vs 1 degrees is a 2-degree error.
        let mut run = EvalRun::default();
        let mut r = record(Point3::new(0.0, 0.0, 0.0), vec![]);
        r.yaw_estimate = Some(359.0f64.to_radians());
        r.yaw_gt = Some(1.0f64.to_radians());
        run.records.push(r);
        let (mae, std) = yaw_stats(&run).unwrap();
        assert!((mae - 2.0).abs() < 1e-9);
        assert!(std.abs() < 1e-9);

        // Invariant under adding full turns to the estimate.
        let mut run2 = EvalRun::default();
        let mut r = record(Point3::new(0.0, 0.0, 0.0), vec![]);
        r.yaw_estimate = Some((359.0f64 + 360.0).to_radians());
        r.yaw_gt = Some(1.0f64.to_radians());
        run2.records.push(r);
        assert!((yaw_stats(&run2).unwrap().0 - mae).abs() < 1e-9);
    }

    #[test]
    fn pose_statistics() {
        let mut run = EvalRun::default();
        let mut push = |err: f64| {
            let mut r = record(Point3::new(0.0, 0.0, 0.0), vec![]);
            r.final_pose = Some(PoseSE3::from_yaw_and_position(0.0, Point3::new(err, 0.0, 0.0)));
            r.failed = false;
            run.records.push(r);
        };
        push(0.2);
        push(0.4);
        let (mean, std) = pose_stats(&run).unwrap();
        assert!((mean - 0.3).abs() < 1e-12);
        assert!((std - 0.1).abs() < 1e-12);

        // Perfect run.
        let mut perfect = EvalRun::default();
        let mut r = record(Point3::new(1.0, 2.0, 0.0), vec![]);
        r.final_pose = Some(r.gt_pose);
        r.failed = false;
        perfect.records.push(r);
        assert_eq!(pose_stats(&perfect).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn statistics_invariant_under_reordering() {
        let origin = Point3::new(0.0, 0.0, 0.0);
        let near = Point3::new(1.0, 0.0, 0.0);
        let far = Point3::new(50.0, 0.0, 0.0);
        let mut run = EvalRun {
            records: vec![
                record(origin, vec![(0, 0.1, near)]),
                record(origin, vec![(0, 0.1, far)]),
            ],
        };
        let a = recall_at_k(&run, 3.0, 1).unwrap();
        run.records.reverse();
        assert_eq!(a, recall_at_k(&run, 3.0, 1).unwrap());
    }

    #[test]
    fn empty_run_errors() {
        let run = EvalRun::default();
        assert!(matches!(recall_at_k(&run, 3.0, 5), Err(EvalError::EmptyRun)));
        assert!(matches!(yaw_stats(&run), Err(EvalError::EmptyRun)));
    }

    #[test]
    fn timing_means_and_csv() {
        let mut run = EvalRun::default();
        for i in 0..2 {
            let mut r = record(Point3::new(0.0, 0.0, 0.0), vec![]);
            r.timings = StageTimingsMs {
                descriptor: 1.0 + i as f64,
                query: 0.5,
                yaw: 0.1,
                icp: 10.0,
                total: 12.0 + i as f64,
            };
            run.records.push(r);
        }
        let t = timing_stats(&run).unwrap();
        assert!((t.descriptor - 1.5).abs() < 1e-12);
        assert!((t.total - 12.5).abs() < 1e-12);

        assert_eq!(recall_curve_csv(&[0.5, 1.0]), "k,recall\n1,0.5\n2,1\n");
    }
}
