//! Loss functions: clamped triplet loss over squared Euclidean descriptor
//! distances, Euclidean-embedded orientation loss, multiclass hinge loss
//! over raw scores, label smoothing, and cross-entropy against smoothed
//! targets. Each returns `(value, gradients)`.

use crate::tensor::softmax;

/// `max(0, d_S - d_D + margin)` with `d = |a - b|^2`. Returns the loss and
/// gradients w.r.t. `(q_a, q_s, q_d)`.
pub fn triplet_loss(
    q_a: &[f64],
    q_s: &[f64],
    q_d: &[f64],
    margin: f64,
) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
    assert!(margin > 0.0);
    let n = q_a.len();
    let d_s: f64 = (0..n).map(|i| (q_a[i] - q_s[i]).powi(2)).sum();
    let d_d: f64 = (0..n).map(|i| (q_a[i] - q_d[i]).powi(2)).sum();
    let raw = d_s - d_d + margin;
    if raw <= 0.0 {
        return (0.0, vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    }
    let mut ga = vec![0.0; n];
    let mut gs = vec![0.0; n];
    let mut gd = vec![0.0; n];
    for i in 0..n {
        ga[i] = 2.0 * (q_a[i] - q_s[i]) - 2.0 * (q_a[i] - q_d[i]);
        gs[i] = -2.0 * (q_a[i] - q_s[i]);
        gd[i] = 2.0 * (q_a[i] - q_d[i]);
    }
    (raw, ga, gs, gd)
}

/// `1/2 ((y0 - cos d)^2 + (y1 - sin d)^2)`: regression onto the unit-circle
/// embedding of the ground-truth yaw, which is 2pi-periodic by construction.
pub fn orientation_loss(y: &[f64; 2], delta_theta_gt: f64) -> (f64, [f64; 2]) {
    let target = [delta_theta_gt.cos(), delta_theta_gt.sin()];
    let e0 = y[0] - target[0];
    let e1 = y[1] - target[1];
    (0.5 * (e0 * e0 + e1 * e1), [e0, e1])
}

/// Multiclass hinge over raw scores: `sum_{j != l} max(0, s_j - s_l + 1)`.
pub fn hinge_loss(scores: &[f64; 3], label: usize) -> (f64, [f64; 3]) {
    assert!(label < 3);
    let mut loss = 0.0;
    let mut grad = [0.0f64; 3];
    for j in 0..3 {
        if j == label {
            continue;
        }
        let violation = scores[j] - scores[label] + 1.0;
        if violation > 0.0 {
            loss += violation;
            grad[j] += 1.0;
            grad[label] -= 1.0;
        }
    }
    (loss, grad)
}

/// `labels * (1 - a) + a / N`; preserves the total mass exactly.
pub fn smooth_labels(onehot: &[f64], a: f64) -> Vec<f64> {
    assert!((0.0..1.0).contains(&a));
    let n = onehot.len() as f64;
    onehot.iter().map(|&v| v * (1.0 - a) + a / n).collect()
}

/// Cross-entropy of softmaxed scores against an arbitrary target
/// distribution; gradient w.r.t. the raw scores is `softmax(s) - target`.
pub fn cross_entropy_smoothed(scores: &[f64; 3], target: &[f64]) -> (f64, [f64; 3]) {
    let p = softmax(scores);
    let loss: f64 = target.iter().zip(&p).map(|(t, pi)| -t * pi.max(1e-300).ln()).sum();
    let mut grad = [0.0f64; 3];
    for i in 0..3 {
        grad[i] = p[i] - target[i];
    }
    (loss, grad)
}

/// The joint objective: the plain, unweighted sum of the three parts.
pub fn combined_loss(l_pr: f64, l_theta: f64, l_c: f64) -> f64 {
    l_pr + l_theta + l_c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    #[test]
    fn triplet_unit_values() {
        // d_S = 1.0, d_D = 0.5, m = 0.2 -> 0.7, via 1-d descriptors.
        let (loss, ..) = triplet_loss(&[0.0], &[1.0], &[0.5f64.sqrt()], 0.2);
        assert!((loss - 0.7).abs() < 1e-12);
        // Boundary: q_A = q_S and d_D = m clamps to zero (0.25 squares
        // exactly, so the hinge argument is exactly zero).
        let (loss, ..) = triplet_loss(&[0.0], &[0.0], &[0.5], 0.25);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn triplet_gradient_signs_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (loss, ga, gs, gd) = triplet_loss(&a, &s, &d, 5.0);
        assert!(loss > 0.0, "margin 5 keeps the hinge active");

        // Descent steps (-grad) pull q_S toward q_A and push q_D away.
        for i in 0..8 {
            if (a[i] - s[i]).abs() > 1e-9 {
                assert!(-gs[i] * (a[i] - s[i]) > 0.0);
            }
            if (a[i] - d[i]).abs() > 1e-9 {
                assert!(-gd[i] * (a[i] - d[i]) < 0.0);
            }
        }

        let mut x = a.clone();
        gradcheck::check_all(&mut x, &ga, |x| triplet_loss(x, &s, &d, 5.0).0);
        let mut x = s.clone();
        gradcheck::check_all(&mut x, &gs, |x| triplet_loss(&a, x, &d, 5.0).0);
        let mut x = d.clone();
        gradcheck::check_all(&mut x, &gd, |x| triplet_loss(&a, &s, x, 5.0).0);
    }

    #[test]
    fn orientation_unit_values() {
        let delta = 1.234f64;
        let (loss, _) = orientation_loss(&[delta.cos(), delta.sin()], delta);
        assert!(loss < 1e-15);
        let (loss, _) = orientation_loss(&[0.0, 0.0], 0.77);
        assert!((loss - 0.5).abs() < 1e-12);
    }

    #[test]
    fn orientation_targets_wrap_continuously() {
        let just_under = 359.0f64.to_radians();
        let just_over = 1.0f64.to_radians();
        let t1 = [just_under.cos(), just_under.sin()];
        let t2 = [just_over.cos(), just_over.sin()];
        let gap = ((t1[0] - t2[0]).powi(2) + (t1[1] - t2[1]).powi(2)).sqrt();
        assert!(gap < 0.05, "359 deg and 1 deg embed {gap} apart");
        // Identical targets after a full turn.
        let (l, _) = orientation_loss(&[(0.3f64).cos(), (0.3f64).sin()], 0.3 + TAU);
        assert!(l < 1e-15);
    }

    #[test]
    fn orientation_gradient_matches_finite_differences() {
        let mut y = vec![0.3, -0.8];
        let (_, g) = orientation_loss(&[y[0], y[1]], 2.1);
        gradcheck::check_all(&mut y, &g, |y| orientation_loss(&[y[0], y[1]], 2.1).0);
    }

    #[test]
    fn hinge_unit_values() {
        assert_eq!(hinge_loss(&[10.0, 0.0, 0.0], 0).0, 0.0);
        assert_eq!(hinge_loss(&[0.0, 0.0, 0.0], 0).0, 2.0);
        assert_eq!(hinge_loss(&[1.0, 3.0, 0.0], 0).0, 3.0);
    }

    #[test]
    fn hinge_gradient_matches_finite_differences() {
        // Scores away from the hinge kinks so central differences are valid.
        let mut s = vec![0.4, 2.3, -1.5];
        let (_, g) = hinge_loss(&[s[0], s[1], s[2]], 0);
        gradcheck::check_all(&mut s, &g, |s| hinge_loss(&[s[0], s[1], s[2]], 0).0);
    }

    #[test]
    fn smooth_labels_unit_values() {
        assert_eq!(smooth_labels(&[1.0, 0.0, 0.0], 0.0), vec![1.0, 0.0, 0.0]);
        let s = smooth_labels(&[1.0, 0.0, 0.0], 0.3);
        for (got, want) in s.iter().zip(&[0.8, 0.1, 0.1]) {
            assert!((got - want).abs() < 1e-12);
        }
        // Mass preservation for arbitrary distributions.
        let s = smooth_labels(&[0.2, 0.5, 0.3], 0.7);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let target = smooth_labels(&[0.0, 1.0, 0.0], 0.2);
        let mut s = vec![0.5, -1.0, 0.3];
        let (_, g) = cross_entropy_smoothed(&[s[0], s[1], s[2]], &target);
        gradcheck::check_all(&mut s, &g, |s| {
            cross_entropy_smoothed(&[s[0], s[1], s[2]], &target).0
        });
    }

    #[test]
    fn combined_is_the_exact_sum() {
        assert_eq!(combined_loss(0.0, 0.0, 0.0), 0.0);
        assert_eq!(combined_loss(0.7, 0.5, 2.0), 3.2);
    }
}
