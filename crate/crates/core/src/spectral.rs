//! Deterministic, training-free descriptor backend.
//!
//! The range image is collapsed to an azimuth profile (mean over nonzero
//! cells per column). `q` holds the magnitudes of the first 64 nonzero
//! frequencies of that profile's discrete spectrum, which are exactly
//! invariant under column shifts. `w` is the profile averaged down to 64
//! azimuth bins and is matched by circular cross-correlation to recover yaw.

use crate::descriptor::{DescriptorPair, DESCRIPTOR_DIM};
use crate::geometry::wrap_angle;
use crate::projection::RangeImage;
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("range image has no returns; cannot build a descriptor")]
    EmptyImage,
    #[error("image width {0} is below the descriptor dimension {DESCRIPTOR_DIM}")]
    WidthTooSmall(usize),
}

/// Mean range over nonzero cells per column; empty columns give 0.
fn azimuth_profile(img: &RangeImage) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let mut profile = vec![0.0f64; w];
    for col in 0..w {
        let mut sum = 0.0;
        let mut count = 0usize;
        for row in 0..h {
            let v = img.pixel(row, col);
            if v > 0.0 {
                sum += v;
                count += 1;
            }
        }
        if count > 0 {
            profile[col] = sum / count as f64;
        }
    }
    profile
}

pub fn spectral_descriptor(img: &RangeImage) -> Result<DescriptorPair, SpectralError> {
    let w = img.width();
    if w < DESCRIPTOR_DIM {
        return Err(SpectralError::WidthTooSmall(w));
    }
    let profile = azimuth_profile(img);
    if profile.iter().all(|&v| v == 0.0) {
        return Err(SpectralError::EmptyImage);
    }

    // Magnitudes of spectrum bins 1..=64, normalized by the profile length.
    let mut q = Vec::with_capacity(DESCRIPTOR_DIM);
    for freq in 1..=DESCRIPTOR_DIM {
        let mut re = 0.0f64;
        let mut im = 0.0f64;
        for (c, &v) in profile.iter().enumerate() {
            let angle = TAU * freq as f64 * c as f64 / w as f64;
            re += v * angle.cos();
            im -= v * angle.sin();
        }
        q.push(re.hypot(im) / w as f64);
    }

    // Mean-pool the profile down to 64 azimuth bins (empty columns count
    // as zero range).
    let mut pooled = Vec::with_capacity(DESCRIPTOR_DIM);
    for bin in 0..DESCRIPTOR_DIM {
        let lo = bin * w / DESCRIPTOR_DIM;
        let hi = (bin + 1) * w / DESCRIPTOR_DIM;
        let slice = &profile[lo..hi];
        pooled.push(slice.iter().sum::<f64>() / slice.len() as f64);
    }

    Ok(DescriptorPair::new(q, pooled))
}

/// Yaw of `a` relative to `b`: the circular shift maximizing the cross-
/// correlation of the two 64-bin profiles, as radians in `(-pi, pi]`.
/// Ties break toward the smaller `|angle|`, then toward the positive angle.
pub fn yaw_by_correlation(w_a: &[f64], w_b: &[f64]) -> f64 {
    assert_eq!(w_a.len(), DESCRIPTOR_DIM);
    assert_eq!(w_b.len(), DESCRIPTOR_DIM);
    let n = DESCRIPTOR_DIM;
    let mut best_corr = f64::NEG_INFINITY;
    let mut best_angle = 0.0f64;
    for k in 0..n {
        let corr: f64 = (0..n).map(|c| w_a[c] * w_b[(c + n - k) % n]).sum();
        let angle = wrap_angle(TAU * k as f64 / n as f64);
        let better = corr > best_corr
            || (corr == best_corr
                && (angle.abs() < best_angle.abs()
                    || (angle.abs() == best_angle.abs() && angle > best_angle)));
        if better {
            best_corr = corr;
            best_angle = angle;
        }
    }
    best_angle
}
