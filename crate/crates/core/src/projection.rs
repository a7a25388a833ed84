//! Spherical projection of point clouds into panoramic range images.
//!
//! Azimuth `atan2(y, x)` maps to columns with increasing azimuth running
//! leftward (column = `floor((1 - (az+pi)/2pi) * W) mod W`), so azimuth 0
//! (the +x axis) lands in the middle column. Elevation `asin(z / |p|)` maps
//! linearly from `fov_up` (top row) to `fov_down` (bottom row). Pixel values
//! are ranges normalized by `max_range` into `(0, 1]`, `0.0` marks an empty
//! cell, and the nearest return wins when several points share a cell.

use crate::geometry::PointCloud;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Spherical projection geometry. Defaults match a 16-channel puck with a
/// +/-15 degree vertical field of view about 1 degree azimuth bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub height: usize,
    pub width: usize,
    pub fov_up_deg: f64,
    pub fov_down_deg: f64,
    pub max_range_m: f64,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        Self { height: 16, width: 360, fov_up_deg: 15.0, fov_down_deg: -15.0, max_range_m: 100.0 }
    }
}

/// Panoramic depth grid. Row-major pixels in `[0, 1]`, `0.0` = no return.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub params: ProjectionParams,
    pixels: Vec<f64>,
    /// Points dropped because they sat at the sensor origin.
    pub degenerate_points: usize,
}

impl RangeImage {
    /// Wrap raw row-major pixels; values must lie in `[0, 1]`.
    pub fn from_pixels(params: ProjectionParams, pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), params.height * params.width);
        assert!(pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        Self { params, pixels, degenerate_points: 0 }
    }

    pub fn height(&self) -> usize {
        self.params.height
    }

    pub fn width(&self) -> usize {
        self.params.width
    }

    pub fn pixel(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.params.width + col]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let w = self.params.width;
        &self.pixels[row * w..(row + 1) * w]
    }

    pub fn nonzero_count(&self) -> usize {
        self.pixels.iter().filter(|&&v| v > 0.0).count()
    }

    /// 8-bit binary PGM (P5), pixel value `round(v * 255)`.
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.params.width, self.params.height).into_bytes();
        out.extend(self.pixels.iter().map(|v| (v * 255.0).round() as u8));
        out
    }
}

/// Project a cloud into a range image. Points outside the vertical field of
/// view or beyond `max_range_m` are discarded; zero-range points are counted
/// in [`RangeImage::degenerate_points`].
pub fn project(cloud: &PointCloud, params: &ProjectionParams) -> RangeImage {
    let (h, w) = (params.height, params.width);
    let mut pixels = vec![0.0f64; h * w];
    let span_deg = params.fov_up_deg - params.fov_down_deg;
    let mut degenerate = 0usize;

    for p in &cloud.points {
        let range = p.norm();
        if range < 1e-9 {
            degenerate += 1;
            continue;
        }
        if range > params.max_range_m {
            continue;
        }
        let elev_deg = (p.z / range).asin().to_degrees();
        if elev_deg < params.fov_down_deg || elev_deg > params.fov_up_deg {
            continue;
        }
        let row = (((params.fov_up_deg - elev_deg) / span_deg) * h as f64) as usize;
        let row = row.min(h - 1);

        let azimuth = p.y.atan2(p.x);
        let col = ((1.0 - (azimuth + PI) / TAU) * w as f64).floor() as usize % w;

        let value = range / params.max_range_m;
        let cell = &mut pixels[row * w + col];
        if *cell == 0.0 || value < *cell {
            *cell = value;
        }
    }

    RangeImage { params: *params, pixels, degenerate_points: degenerate }
}

/// Cyclic shift along the width: output column `c` holds input column
/// `(c + k) mod W`. Any `k` is accepted and reduced modulo `W`.
pub fn shift_columns(img: &RangeImage, k: usize) -> RangeImage {
    let w = img.params.width;
    let k = k % w;
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for row in 0..img.params.height {
        let r = img.row(row);
        pixels.extend_from_slice(&r[k..]);
        pixels.extend_from_slice(&r[..k]);
    }
    RangeImage { params: img.params, pixels, degenerate_points: img.degenerate_points }
}
