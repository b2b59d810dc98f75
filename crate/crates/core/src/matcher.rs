//! Multi-directional correlation matching.
//!
//! The center view is the reference. Horizontal volumes correlate it with the
//! left and right views along rows, vertical volumes with the top and bottom
//! views along columns. Each volume is turned into a four-scale pyramid by
//! pooling the shift axis, and per-pixel windows are looked up around the
//! position implied by the current disparity.
//!
//! Window layout: direction-major `(l, r, t, b)`, then scale `1..=4`, then
//! `2r + 1` taps. Tap `o` of every window holds the correlation at candidate
//! disparity `d + o·2^(k-1)` for scale `k`: the left and top views are displaced
//! by `-d`, so both their lookup center and their tap order are sign-reversed.

use ndarray::{s, Array2, Array3, ArrayView1, Axis, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Image;

pub const DESCRIPTOR_WINDOW: usize = 7;
pub const PYRAMID_LEVELS: usize = 4;
const BIAS_WEIGHT: f64 = 1e-3;
const LUMA_WEIGHT: f64 = 0.1;

/// Per-pixel unit-norm descriptors at feature resolution, shape `(h, w, channels)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    data: Array3<f64>,
    downsample_factor: usize,
}

impl FeatureMap {
    /// Wraps raw descriptors, normalizing each to unit length.
    pub fn from_raw(mut data: Array3<f64>, downsample_factor: usize) -> Self {
        for mut v in data.lanes_mut(Axis(2)) {
            let n = v.dot(&v).sqrt();
            if n > 0.0 {
                v.mapv_inplace(|x| x / n);
            }
        }
        Self {
            data,
            downsample_factor,
        }
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn downsample_factor(&self) -> usize {
        self.downsample_factor
    }

    pub fn descriptor(&self, y: usize, x: usize) -> ArrayView1<'_, f64> {
        self.data.slice(s![y, x, ..])
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }
}

/// Box-averages `plane` by an integer factor, dropping any partial border block.
pub fn box_downsample(plane: &Array2<f64>, factor: usize) -> Array2<f64> {
    if factor == 1 {
        return plane.clone();
    }
    let (h, w) = plane.dim();
    let (oh, ow) = (h / factor, w / factor);
    let norm = 1.0 / (factor * factor) as f64;
    Array2::from_shape_fn((oh, ow), |(y, x)| {
        plane
            .slice(s![
                y * factor..(y + 1) * factor,
                x * factor..(x + 1) * factor
            ])
            .sum()
            * norm
    })
}

/// Hand-crafted descriptor: a small bias, the window mean luminance, central
/// x/y gradients and the 7×7 mean-subtracted patch, L2-normalized. Borders
/// are handled by clamping.
pub fn extract_features(image: &Image, downsample_factor: usize) -> Result<FeatureMap> {
    if ![1, 2, 4].contains(&downsample_factor) {
        return Err(Error::InvalidArgument(format!(
            "downsample factor must be 1, 2 or 4, got {downsample_factor}"
        )));
    }
    let lum = box_downsample(&image.luminance(), downsample_factor);
    let (h, w) = lum.dim();
    if h < DESCRIPTOR_WINDOW || w < DESCRIPTOR_WINDOW {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            window: DESCRIPTOR_WINDOW,
        });
    }
    let half = (DESCRIPTOR_WINDOW / 2) as isize;
    let at = |y: isize, x: isize| {
        lum[[
            y.clamp(0, h as isize - 1) as usize,
            x.clamp(0, w as isize - 1) as usize,
        ]]
    };
    let nf = 4 + DESCRIPTOR_WINDOW * DESCRIPTOR_WINDOW;
    let mut data = Array3::<f64>::zeros((h, w, nf));
    data.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(y, mut row)| {
            let y = y as isize;
            let mut patch = [0.0; DESCRIPTOR_WINDOW * DESCRIPTOR_WINDOW];
            for x in 0..w {
                let xi = x as isize;
                let mut k = 0;
                for dy in -half..=half {
                    for dx in -half..=half {
                        patch[k] = at(y + dy, xi + dx);
                        k += 1;
                    }
                }
                let mean = patch.iter().sum::<f64>() / patch.len() as f64;
                let mut d = row.slice_mut(s![x, ..]);
                d[0] = BIAS_WEIGHT;
                d[1] = LUMA_WEIGHT * mean;
                d[2] = 0.5 * (at(y, xi + 1) - at(y, xi - 1));
                d[3] = 0.5 * (at(y + 1, xi) - at(y - 1, xi));
                for (i, p) in patch.iter().enumerate() {
                    d[4 + i] = p - mean;
                }
            }
        });
    Ok(FeatureMap::from_raw(data, downsample_factor))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis2 {
    Horizontal,
    Vertical,
}

/// Inner products of reference descriptors against every shift along one axis.
///
/// Horizontal: `values[[y, x, s]] = <ref(y, x), other(y, s)>`, shape `h × w × w`.
/// Vertical: `values[[y, x, s]] = <ref(y, x), other(s, x)>`, shape `h × w × h`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationVolume {
    pub axis: Axis2,
    pub values: Array3<f32>,
}

impl CorrelationVolume {
    pub fn shift_len(&self) -> usize {
        self.values.dim().2
    }
}

pub fn build_volume(
    reference: &FeatureMap,
    other: &FeatureMap,
    axis: Axis2,
) -> Result<CorrelationVolume> {
    let (h, w) = (reference.height(), reference.width());
    if (other.height(), other.width()) != (h, w) || other.channels() != reference.channels() {
        return Err(Error::DimensionMismatch {
            expected: (h, w),
            got: (other.height(), other.width()),
        });
    }
    let len = match axis {
        Axis2::Horizontal => w,
        Axis2::Vertical => h,
    };
    let mut values = Array3::<f32>::zeros((h, w, len));
    values
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(y, mut plane)| {
            for x in 0..w {
                let r = reference.descriptor(y, x);
                for sft in 0..len {
                    let o = match axis {
                        Axis2::Horizontal => other.descriptor(y, sft),
                        Axis2::Vertical => other.descriptor(sft, x),
                    };
                    plane[[x, sft]] = r.dot(&o) as f32;
                }
            }
        });
    Ok(CorrelationVolume { axis, values })
}

/// Four scales of a volume; scale `k` (1-based) pools `2^(k-1)` shifts per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationPyramid {
    levels: Vec<CorrelationVolume>,
}

impl CorrelationPyramid {
    /// Scale `k` in `1..=4`.
    pub fn level(&self, scale: usize) -> &CorrelationVolume {
        &self.levels[scale - 1]
    }

    pub fn levels(&self) -> &[CorrelationVolume] {
        &self.levels
    }
}

/// Halves the last axis by averaging neighbour pairs; an odd tail is kept as is.
pub fn pool_last_axis(v: &Array3<f32>) -> Array3<f32> {
    let (h, w, n) = v.dim();
    let m = n.div_ceil(2);
    let mut out = Array3::<f32>::zeros((h, w, m));
    Zip::from(out.lanes_mut(Axis(2)))
        .and(v.lanes(Axis(2)))
        .par_for_each(|mut dst, src| {
            for j in 0..m {
                dst[j] = if 2 * j + 1 < n {
                    0.5 * (src[2 * j] + src[2 * j + 1])
                } else {
                    src[2 * j]
                };
            }
        });
    out
}

pub fn build_pyramid(volume: CorrelationVolume) -> Result<CorrelationPyramid> {
    if volume.shift_len() < 8 {
        return Err(Error::InvalidArgument(format!(
            "correlation pyramid needs at least 8 shifts, got {}",
            volume.shift_len()
        )));
    }
    let axis = volume.axis;
    let mut levels = vec![volume];
    for _ in 1..PYRAMID_LEVELS {
        let next = pool_last_axis(&levels.last().expect("non-empty").values);
        levels.push(CorrelationVolume { axis, values: next });
    }
    Ok(CorrelationPyramid { levels })
}

/// Matching directions in the fixed concatenation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Left,
    Right,
    Top,
    Bottom,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Left,
        Direction::Right,
        Direction::Top,
        Direction::Bottom,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Sign applied to the current disparity when looking up this direction.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Left | Direction::Top => -1.0,
            Direction::Right | Direction::Bottom => 1.0,
        }
    }

    pub fn axis(self) -> Axis2 {
        match self {
            Direction::Left | Direction::Right => Axis2::Horizontal,
            Direction::Top | Direction::Bottom => Axis2::Vertical,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Left => "l",
            Direction::Right => "r",
            Direction::Top => "t",
            Direction::Bottom => "b",
        }
    }
}

/// Pyramids for the four directions, indexed by [`Direction::index`].
#[derive(Debug, Clone)]
pub struct DirectionalPyramids(pub [CorrelationPyramid; 4]);

impl DirectionalPyramids {
    pub fn get(&self, dir: Direction) -> &CorrelationPyramid {
        &self.0[dir.index()]
    }

    pub fn height(&self) -> usize {
        self.0[0].level(1).values.dim().0
    }

    pub fn width(&self) -> usize {
        self.0[0].level(1).values.dim().1
    }
}

/// Linear interpolation along a shift lane with the position clamped to the lane.
#[inline]
fn sample_lane(lane: ArrayView1<'_, f32>, pos: f64) -> f64 {
    let last = lane.len() - 1;
    let p = pos.clamp(0.0, last as f64);
    let i0 = p.floor() as usize;
    let t = p - i0 as f64;
    if t == 0.0 || i0 == last {
        lane[i0] as f64
    } else {
        lane[i0] as f64 * (1.0 - t) + lane[i0 + 1] as f64 * t
    }
}

/// Per-pixel looked-up correlation windows, shape `(h, w, 16·(2r+1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCorrelationFeature {
    radius: usize,
    values: Array3<f64>,
}

impl LocalCorrelationFeature {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn window_len(&self) -> usize {
        2 * self.radius + 1
    }

    /// Total per-pixel length, `16·(2r+1)`.
    pub fn channels(&self) -> usize {
        self.values.dim().2
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn dim(&self) -> (usize, usize) {
        let (h, w, _) = self.values.dim();
        (h, w)
    }

    /// Channel of `(dir, scale, offset)` with `offset` in `-r..=r`.
    pub fn channel_index(&self, dir: Direction, scale: usize, offset: isize) -> usize {
        (dir.index() * PYRAMID_LEVELS + scale - 1) * self.window_len()
            + (offset + self.radius as isize) as usize
    }

    pub fn window(&self, y: usize, x: usize, dir: Direction, scale: usize) -> ArrayView1<'_, f64> {
        let start = self.channel_index(dir, scale, -(self.radius as isize));
        self.values
            .slice(s![y, x, start..start + self.window_len()])
    }
}

/// Looks up `2r + 1` correlations per direction and scale around the current disparity.
///
/// `disparity` is at feature resolution. Lookup centers outside the volume are
/// clamped to its edges. At scale `k` the shift-space position `p` maps to
/// `(p + 0.5) / 2^(k-1) - 0.5`, the center of the pooled cell containing it.
pub fn lookup(
    pyramids: &DirectionalPyramids,
    disparity: &Array2<f64>,
    radius: usize,
) -> Result<LocalCorrelationFeature> {
    if radius < 1 {
        return Err(Error::InvalidArgument(
            "lookup radius must be at least 1".into(),
        ));
    }
    let (h, w) = (pyramids.height(), pyramids.width());
    if disparity.dim() != (h, w) {
        return Err(Error::DimensionMismatch {
            expected: (h, w),
            got: disparity.dim(),
        });
    }
    let win = 2 * radius + 1;
    let nch = Direction::ALL.len() * PYRAMID_LEVELS * win;
    let mut values = Array3::<f64>::zeros((h, w, nch));
    values
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(y, mut row)| {
            for x in 0..w {
                let d = disparity[[y, x]];
                let mut out = row.slice_mut(s![x, ..]);
                for dir in Direction::ALL {
                    let sign = dir.sign();
                    let base = match dir.axis() {
                        Axis2::Horizontal => x as f64,
                        Axis2::Vertical => y as f64,
                    } + sign * d;
                    for scale in 1..=PYRAMID_LEVELS {
                        let cell = (1usize << (scale - 1)) as f64;
                        let lane = pyramids.get(dir).level(scale).values.slice(s![y, x, ..]);
                        let center = (base + 0.5) / cell - 0.5;
                        let start = (dir.index() * PYRAMID_LEVELS + scale - 1) * win;
                        for k in 0..win {
                            let o = k as f64 - radius as f64;
                            out[start + k] = sample_lane(lane, center + sign * o);
                        }
                    }
                }
            }
        });
    Ok(LocalCorrelationFeature { radius, values })
}

pub const DEFAULT_TEMPERATURE: f64 = 0.1;

/// Confidence-weighted combination of looked-up windows.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedCorrelation {
    /// `(h, w, 2r+1)` fused scores.
    pub scores: Array3<f64>,
    /// `(h, w, 16)` weights indexed `dir * 4 + scale - 1`; zero for excluded windows.
    pub weights: Array3<f64>,
}

/// Window sharpness: peak minus mean.
fn sharpness(window: ArrayView1<'_, f64>) -> f64 {
    let max = window.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    max - window.mean().unwrap_or(0.0)
}

/// Fuses all sixteen `(direction, scale)` windows.
pub fn fuse(feature: &LocalCorrelationFeature, temperature: f64) -> FusedCorrelation {
    let all: Vec<(Direction, usize)> = Direction::ALL
        .iter()
        .flat_map(|&d| (1..=PYRAMID_LEVELS).map(move |k| (d, k)))
        .collect();
    fuse_subset(feature, &all, temperature)
}

/// Fuses the windows of a single scale across the given directions.
pub fn fuse_scale(
    feature: &LocalCorrelationFeature,
    scale: usize,
    directions: &[Direction],
    temperature: f64,
) -> FusedCorrelation {
    let sel: Vec<(Direction, usize)> = directions.iter().map(|&d| (d, scale)).collect();
    fuse_subset(feature, &sel, temperature)
}

/// Softmax over `sharpness / temperature` of each selected window, then a
/// weighted sum of the windows. Equal sharpness gives equal weights.
fn fuse_subset(
    feature: &LocalCorrelationFeature,
    selection: &[(Direction, usize)],
    temperature: f64,
) -> FusedCorrelation {
    let (h, w) = feature.dim();
    let win = feature.window_len();
    let nslots = Direction::ALL.len() * PYRAMID_LEVELS;
    let mut scores = Array3::<f64>::zeros((h, w, win));
    let mut weights = Array3::<f64>::zeros((h, w, nslots));
    Zip::indexed(scores.lanes_mut(Axis(2)))
        .and(weights.lanes_mut(Axis(2)))
        .par_for_each(|(y, x), mut sc, mut wt| {
            let sharp: Vec<f64> = selection
                .iter()
                .map(|&(d, k)| sharpness(feature.window(y, x, d, k)))
                .collect();
            let top = sharp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = sharp
                .iter()
                .map(|s| ((s - top) / temperature).exp())
                .collect();
            let z: f64 = exps.iter().sum();
            for (&(d, k), e) in selection.iter().zip(&exps) {
                let wgt = e / z;
                wt[d.index() * PYRAMID_LEVELS + k - 1] = wgt;
                sc.scaled_add(wgt, &feature.window(y, x, d, k));
            }
        });
    FusedCorrelation { scores, weights }
}

/// Builds the four directional pyramids from the five views.
pub fn build_directional_pyramids(
    center: &FeatureMap,
    left: &FeatureMap,
    right: &FeatureMap,
    top: &FeatureMap,
    bottom: &FeatureMap,
) -> Result<DirectionalPyramids> {
    let pyr = |other: &FeatureMap, axis| build_volume(center, other, axis).and_then(build_pyramid);
    Ok(DirectionalPyramids([
        pyr(left, Axis2::Horizontal)?,
        pyr(right, Axis2::Horizontal)?,
        pyr(top, Axis2::Vertical)?,
        pyr(bottom, Axis2::Vertical)?,
    ]))
}
