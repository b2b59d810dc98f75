//! Thin-lens defocus model.
//!
//! The circle of confusion is kept signed: pixels in front of the focus plane
//! get a negative radius, pixels behind it a positive one. The sign is carried
//! through to the disparity.

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CocMap, DepthMap, DisparityMap, MaskedPlane};
use crate::psf::KernelFamily;

/// Thin-lens and sensor constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    pub focal_length_m: f64,
    pub focus_distance_m: f64,
    pub f_stop: f64,
    /// Pixel pitch after any resizing of the captured frames.
    pub pixel_size_m: f64,
}

impl Default for CameraParams {
    /// 25 mm f/1.8 lens focused at 4 m on a sensor with 10.1 um pixels.
    fn default() -> Self {
        Self {
            focal_length_m: 0.025,
            focus_distance_m: 4.0,
            f_stop: 1.8,
            pixel_size_m: 1.01e-5,
        }
    }
}

impl CameraParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("focal_length_m", self.focal_length_m),
            ("focus_distance_m", self.focus_distance_m),
            ("f_stop", self.f_stop),
            ("pixel_size_m", self.pixel_size_m),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidCamera(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        if self.focus_distance_m <= self.focal_length_m {
            return Err(Error::InvalidCamera(format!(
                "focus distance {} m must exceed focal length {} m",
                self.focus_distance_m, self.focal_length_m
            )));
        }
        Ok(())
    }

    /// Returns a copy with the pixel pitch adjusted for an image resized by `scale`
    /// (e.g. `1.0 / 3.0` when downsizing to a third).
    pub fn resized(&self, scale: f64) -> Self {
        Self {
            pixel_size_m: self.pixel_size_m / scale,
            ..*self
        }
    }

    /// Depth-independent part of the CoC expression, in pixels.
    fn coc_gain_px(&self) -> f64 {
        let f = self.focal_length_m;
        (f / (2.0 * self.f_stop)) * (f / (self.focus_distance_m - f)) / self.pixel_size_m
    }

    /// Signed CoC radius in pixels for a single depth. Callers guarantee `depth_m > 0`.
    pub fn coc_px(&self, depth_m: f64) -> f64 {
        self.coc_gain_px() * ((depth_m - self.focus_distance_m) / depth_m)
    }
}

/// Per-pixel signed CoC radius. Non-finite or non-positive depths are invalidated.
pub fn coc_from_depth(params: &CameraParams, depth: &DepthMap) -> Result<CocMap> {
    params.validate()?;
    let mut out = MaskedPlane::filled(depth.width(), depth.height(), 0.0);
    Zip::from(&mut out.values)
        .and(&mut out.valid)
        .and(&depth.values)
        .and(&depth.valid)
        .par_for_each(|c, ok, &z, &z_ok| {
            if z_ok && z.is_finite() && z > 0.0 {
                *c = params.coc_px(z);
                *ok = true;
            } else {
                *c = 0.0;
                *ok = false;
            }
        });
    Ok(out)
}

/// Signed disparity of a single CoC value under a kernel family.
pub fn disparity_for_coc(coc_px: f64, family: &dyn KernelFamily) -> f64 {
    if coc_px == 0.0 {
        return 0.0;
    }
    coc_px.signum() * family.right_centroid(coc_px.abs())
}

/// Maps every valid CoC to the signed offset of the right PSF's centroid.
pub fn disparity_from_coc(coc: &CocMap, family: &dyn KernelFamily) -> DisparityMap {
    let mut out = MaskedPlane::filled(coc.width(), coc.height(), 0.0);
    Zip::from(&mut out.values)
        .and(&mut out.valid)
        .and(&coc.values)
        .and(&coc.valid)
        .par_for_each(|d, ok, &c, &c_ok| {
            *ok = c_ok;
            *d = if c_ok {
                disparity_for_coc(c, family)
            } else {
                0.0
            };
        });
    out
}
