//! Shared fixtures for the criterion benchmarks.

use ndarray::Array2;
use qpd_core::{DepthMap, Image, MaskedPlane};

/// Smooth multi-frequency texture in `[0.2, 0.8]`.
pub fn texture(w: usize, h: usize) -> Image {
    let plane = Array2::from_shape_fn((h, w), |(y, x)| {
        let (x, y) = (x as f64, y as f64);
        0.5 + 0.15 * (0.31 * x + 0.17 * y).sin()
            + 0.1 * (0.07 * x - 0.23 * y).cos()
            + 0.05 * (0.21 * x + 0.61 * y).sin()
    });
    Image::gray(plane).expect("finite plane")
}

/// Depth ramp from `near` at the top row to `far` at the bottom row.
pub fn depth_ramp(w: usize, h: usize, near: f64, far: f64) -> DepthMap {
    MaskedPlane::dense(Array2::from_shape_fn((h, w), |(y, _)| {
        near + (far - near) * y as f64 / (h.max(2) - 1) as f64
    }))
}
