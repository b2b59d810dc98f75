//! Iterative disparity estimation over the directional correlation pyramids.
//!
//! Disparity starts at zero. Every iteration looks up the windows at the
//! current estimate, fuses the directions at the scheduled pyramid scale,
//! locates the fused peak with a parabola and moves the estimate towards it.
//! Scales run coarse to fine: with the default eight iterations, two at each
//! of scales 4, 3, 2 and 1. A pooled-scale move is checked against the
//! full-resolution correlation before it is kept.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{median_in_place, DisparityMap, MaskedPlane, View};
use crate::matcher::{
    build_directional_pyramids, extract_features, fuse_scale, lookup, Direction, PYRAMID_LEVELS,
};
use crate::render::QpFrameSet;

/// Which matching directions feed the fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionSet {
    #[default]
    All,
    Horizontal,
    Vertical,
}

impl DirectionSet {
    pub fn directions(self) -> &'static [Direction] {
        match self {
            DirectionSet::All => &Direction::ALL,
            DirectionSet::Horizontal => &[Direction::Left, Direction::Right],
            DirectionSet::Vertical => &[Direction::Top, Direction::Bottom],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub iterations: usize,
    /// Lookup radius `r`; windows hold `2r + 1` taps. Not reported for the
    /// original network, 4 is the usual choice for this lookup style.
    pub radius: usize,
    /// Step damping in `(0, 1]`.
    pub damping: f64,
    /// Odd median window applied after every update, 0 or 1 to disable.
    pub median_window: usize,
    /// Allowed disparity range in image pixels.
    pub clamp: (f64, f64),
    /// Feature resolution relative to the image: 1, 2 or 4.
    pub downsample_factor: usize,
    pub temperature: f64,
    pub directions: DirectionSet,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            iterations: 8,
            radius: 4,
            damping: 0.8,
            median_window: 3,
            clamp: (-64.0, 64.0),
            downsample_factor: 4,
            temperature: crate::matcher::DEFAULT_TEMPERATURE,
            directions: DirectionSet::All,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.iterations < 1 {
            return bad("solver needs at least one iteration".into());
        }
        if self.radius < 1 {
            return bad("lookup radius must be at least 1".into());
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad(format!("damping must lie in (0, 1], got {}", self.damping));
        }
        if self.median_window > 1 && self.median_window.is_multiple_of(2) {
            return bad(format!(
                "median window must be odd, got {}",
                self.median_window
            ));
        }
        if self.clamp.0.partial_cmp(&self.clamp.1) != Some(std::cmp::Ordering::Less) {
            return bad(format!("empty clamp range {:?}", self.clamp));
        }
        if ![1, 2, 4].contains(&self.downsample_factor) {
            return bad(format!(
                "downsample factor must be 1, 2 or 4, got {}",
                self.downsample_factor
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        Ok(())
    }

    /// Pyramid scale (1-based) used by iteration `j` (0-based).
    pub fn scale_for_iteration(&self, j: usize) -> usize {
        PYRAMID_LEVELS - (PYRAMID_LEVELS * j) / self.iterations
    }
}

#[derive(Debug, Clone)]
pub struct Estimate {
    /// Full-resolution disparity in image pixels.
    pub disparity: DisparityMap,
    /// Set when the reference view has no usable texture.
    pub low_confidence: bool,
    /// Feature-resolution disparity after each iteration, in feature pixels.
    pub history: Vec<Array2<f64>>,
}

/// Parabola vertex through the scores around `argmax`, as an offset from the
/// window center. Peaks on the window edge are returned unrefined.
pub fn subpixel_refine(window: &[f64], argmax: usize) -> f64 {
    let r = (window.len() as f64 - 1.0) / 2.0;
    let base = argmax as f64 - r;
    if argmax == 0 || argmax + 1 >= window.len() {
        return base;
    }
    let (lo, mid, hi) = (window[argmax - 1], window[argmax], window[argmax + 1]);
    let denom = hi + lo - 2.0 * mid;
    if denom >= 0.0 {
        // not a strict maximum
        return base;
    }
    base + (-(hi - lo) / (2.0 * denom)).clamp(-1.0, 1.0)
}

fn argmax(window: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in window.iter().enumerate() {
        if *v > window[best] {
            best = i;
        }
    }
    best
}

pub fn estimate(frames: &QpFrameSet, config: &SolverConfig) -> Result<Estimate> {
    config.validate()?;
    let (h, w) = frames.dim();
    let center = frames.view(View::Center);
    let factor = config.downsample_factor;

    if is_textureless(&center.luminance()) {
        return Ok(Estimate {
            disparity: MaskedPlane::filled(w, h, 0.0),
            low_confidence: true,
            history: Vec::new(),
        });
    }

    let feat = |v| extract_features(frames.view(v), factor);
    let fc = feat(View::Center)?;
    let pyramids = build_directional_pyramids(
        &fc,
        &feat(View::Left)?,
        &feat(View::Right)?,
        &feat(View::Top)?,
        &feat(View::Bottom)?,
    )?;

    let (fh, fw) = (fc.height(), fc.width());
    let lo = config.clamp.0 / factor as f64;
    let hi = config.clamp.1 / factor as f64;
    let r = config.radius;
    let mut disp = Array2::<f64>::zeros((fh, fw));
    let mut history = Vec::with_capacity(config.iterations);

    for j in 0..config.iterations {
        let scale = config.scale_for_iteration(j);
        let cell = (1usize << (scale - 1)) as f64;
        let feature = lookup(&pyramids, &disp, r)?;
        let fused = fuse_scale(
            &feature,
            scale,
            config.directions.directions(),
            config.temperature,
        );
        let mut next = disp.clone();
        Zip::from(&mut next)
            .and(fused.scores.lanes(ndarray::Axis(2)))
            .par_for_each(|d, scores| {
                let window = scores.to_vec();
                let best = argmax(&window);
                // On pooled scales a peak inside the center cell carries no
                // usable sub-cell position; leave it to the finer scales.
                if scale > 1 && best == r {
                    return;
                }
                let offset = subpixel_refine(&window, best);
                *d = (*d + config.damping * offset * cell).clamp(lo, hi);
            });
        if scale > 1 {
            // Pooled peaks are only proposals. Settle each pixel on the stronger
            // full-resolution peak near either the proposal or the current value.
            let dirs = config.directions.directions();
            let moved = lookup(&pyramids, &next, r)?;
            let here = fuse_scale(&feature, 1, dirs, config.temperature);
            let there = fuse_scale(&moved, 1, dirs, config.temperature);
            Zip::from(&mut next)
                .and(&disp)
                .and(here.scores.lanes(ndarray::Axis(2)))
                .and(there.scores.lanes(ndarray::Axis(2)))
                .par_for_each(|n, &old, a, b| {
                    let (a, b) = (a.to_vec(), b.to_vec());
                    let (ia, ib) = (argmax(&a), argmax(&b));
                    let target = if b[ib] > a[ia] {
                        *n + subpixel_refine(&b, ib)
                    } else {
                        old + subpixel_refine(&a, ia)
                    };
                    *n = target.clamp(lo, hi);
                });
        }
        if config.median_window > 1 {
            next = median_filter(&next, config.median_window);
        }
        history.push(next.clone());
        disp = next;
    }

    let full = upsample_disparity(&disp, h, w, factor);
    Ok(Estimate {
        disparity: MaskedPlane::dense(full),
        low_confidence: false,
        history,
    })
}

fn is_textureless(lum: &Array2<f64>) -> bool {
    let n = lum.len() as f64;
    let mean = lum.sum() / n;
    let var = lum.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var < 1e-12
}

/// Square median filter; windows are truncated at the borders.
pub fn median_filter(src: &Array2<f64>, window: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    let half = window / 2;
    let mut out = Array2::zeros((h, w));
    Zip::indexed(&mut out).par_for_each(|(y, x), o| {
        let y0 = y.saturating_sub(half);
        let x0 = x.saturating_sub(half);
        let y1 = (y + half).min(h - 1);
        let x1 = (x + half).min(w - 1);
        let mut buf: Vec<f64> = src
            .slice(ndarray::s![y0..=y1, x0..=x1])
            .iter()
            .copied()
            .collect();
        *o = median_in_place(&mut buf);
    });
    out
}

/// Bilinear upsampling with pixel-center alignment; values are scaled by `factor`.
pub fn upsample_disparity(disp: &Array2<f64>, h: usize, w: usize, factor: usize) -> Array2<f64> {
    let (fh, fw) = disp.dim();
    let f = factor as f64;
    let coord = |p: usize, n: usize| {
        let c = ((p as f64 + 0.5) / f - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, c - i0 as f64)
    };
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (y0, y1, ty) = coord(y, fh);
        let (x0, x1, tx) = coord(x, fw);
        let top = disp[[y0, x0]] * (1.0 - tx) + disp[[y0, x1]] * tx;
        let bot = disp[[y1, x0]] * (1.0 - tx) + disp[[y1, x1]] * tx;
        (top * (1.0 - ty) + bot * ty) * f
    })
}
