//! Pixel-grid containers shared by every stage of the pipeline.
//!
//! All planes are row-major `Array2<f64>` indexed `[[y, x]]`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear-intensity image with one or three channels, values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: Vec<Array2<f64>>,
}

impl Image {
    pub fn new(channels: Vec<Array2<f64>>) -> Result<Self> {
        if channels.len() != 1 && channels.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "images must have 1 or 3 channels, got {}",
                channels.len()
            )));
        }
        let dim = channels[0].dim();
        for c in &channels[1..] {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.dim(),
                });
            }
        }
        if channels
            .iter()
            .flat_map(|c| c.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidArgument(
                "image contains non-finite values".into(),
            ));
        }
        Ok(Self { channels })
    }

    pub fn gray(plane: Array2<f64>) -> Result<Self> {
        Self::new(vec![plane])
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(vec![Array2::from_elem((height, width), value); channels])
    }

    pub fn width(&self) -> usize {
        self.channels[0].ncols()
    }

    pub fn height(&self) -> usize {
        self.channels[0].nrows()
    }

    /// `(height, width)`, matching ndarray's shape order.
    pub fn dim(&self) -> (usize, usize) {
        self.channels[0].dim()
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[Array2<f64>] {
        &self.channels
    }

    pub fn channels_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.channels
    }

    pub fn into_channels(self) -> Vec<Array2<f64>> {
        self.channels
    }

    /// Rec. 709 luma for colour images, the single channel otherwise.
    pub fn luminance(&self) -> Array2<f64> {
        match self.channels.as_slice() {
            [g] => g.clone(),
            [r, g, b] => {
                let mut out = r * 0.2126;
                out.scaled_add(0.7152, g);
                out.scaled_add(0.0722, b);
                out
            }
            _ => unreachable!("channel count validated on construction"),
        }
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.channels
            .iter()
            .zip(&other.channels)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        let n: usize = self.channels.iter().map(|c| c.len()).sum();
        let sum: f64 = self
            .channels
            .iter()
            .zip(&other.channels)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .sum();
        sum / n as f64
    }
}

/// Signed scalar field with a per-pixel validity mask.
///
/// Invalid pixels hold `0.0` so serialized maps stay finite.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedPlane {
    pub values: Array2<f64>,
    pub valid: Array2<bool>,
}

impl MaskedPlane {
    pub fn new(values: Array2<f64>, valid: Array2<bool>) -> Result<Self> {
        if values.dim() != valid.dim() {
            return Err(Error::DimensionMismatch {
                expected: values.dim(),
                got: valid.dim(),
            });
        }
        Ok(Self { values, valid })
    }

    /// Every pixel valid.
    pub fn dense(values: Array2<f64>) -> Self {
        let valid = Array2::from_elem(values.dim(), true);
        Self { values, valid }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::dense(Array2::from_elem((height, width), value))
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(self.valid.iter())
            .filter_map(|(v, ok)| ok.then_some(*v))
    }

    /// `(min, max)` over valid pixels, `None` when nothing is valid.
    pub fn valid_range(&self) -> Option<(f64, f64)> {
        self.valid_values().fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }

    pub fn median(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.valid_values().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        })
    }
}

/// Per-pixel depth in meters.
pub type DepthMap = MaskedPlane;
/// Per-pixel signed circle-of-confusion radius in pixels.
pub type CocMap = MaskedPlane;
/// Per-pixel signed disparity in pixels, aligned to the center view.
pub type DisparityMap = MaskedPlane;

/// The five sub-aperture views of a quad-pixel capture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Left,
    Right,
    Center,
    Top,
    Bottom,
}

impl View {
    pub const ALL: [View; 5] = [
        View::Left,
        View::Right,
        View::Center,
        View::Top,
        View::Bottom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            View::Left => "left",
            View::Right => "right",
            View::Center => "center",
            View::Top => "top",
            View::Bottom => "bottom",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// The view whose kernel a negative circle of confusion borrows.
    pub fn flipped(self) -> View {
        match self {
            View::Left => View::Right,
            View::Right => View::Left,
            View::Top => View::Bottom,
            View::Bottom => View::Top,
            View::Center => View::Center,
        }
    }
}

impl std::fmt::Display for View {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        View::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown view `{s}`")))
    }
}

/// Median of a slice; the slice is reordered.
pub(crate) fn median_in_place(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
