//! Layer-wise defocus rendering of the five quad-pixel views.
//!
//! The scene is sliced into layers of similar signed CoC. Each layer's masked
//! radiance and its mask are blurred with the view's kernel at the layer's
//! representative radius and composited with the "over" operator, so a
//! blurred foreground hides what lies behind it. A layer only occludes layers
//! at least [`OCCLUSION_GAP_PX`] of CoC behind it; closer layers belong to the
//! same continuous surface and add. Without that gap every layer seam on a
//! slanted surface would act as an occluding edge and the image would not
//! converge as layers get thinner. The accumulated colour is divided by the
//! accumulated coverage so that regions disoccluded by blurred foreground
//! layers are not darkened.

use std::collections::VecDeque;

use ndarray::{s, Array2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CocMap, DepthMap, DisparityMap, Image, View};
use crate::optics::{coc_from_depth, disparity_from_coc, CameraParams};
use crate::psf::{kernel_from_steps, KernelFamily, PsfKernel, RADIUS_STEPS_PER_PX};

pub const DEFAULT_LAYER_WIDTH_PX: f64 = 0.1;

/// Smallest CoC separation, in pixels, at which one layer occludes another.
pub const OCCLUSION_GAP_PX: f64 = 1.0;

/// Partition of the scene's CoC range into layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthLayering {
    /// `n + 1` strictly increasing boundaries in signed CoC pixels.
    boundaries: Vec<f64>,
    /// Signed representative CoC of each layer, in 0.01 px lattice steps.
    representatives: Vec<i64>,
}

impl DepthLayering {
    pub fn len(&self) -> usize {
        self.representatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.representatives.is_empty()
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Representative signed radii in pixels.
    pub fn representatives(&self) -> Vec<f64> {
        self.representatives
            .iter()
            .map(|&s| s as f64 / RADIUS_STEPS_PER_PX)
            .collect()
    }

    /// Layer holding a CoC value; values outside the range go to the nearest end layer.
    pub fn layer_of(&self, coc: f64) -> usize {
        let n = self.len();
        let lo = self.boundaries[0];
        let hi = self.boundaries[n];
        let t = ((coc - lo) / (hi - lo) * n as f64).floor();
        if t.is_nan() || t < 0.0 {
            0
        } else {
            (t as usize).min(n - 1)
        }
    }
}

/// Splits `[min CoC, max CoC]` into equal layers no wider than `max_layer_width_px`.
pub fn plan_layers(coc: &CocMap, max_layer_width_px: f64) -> Result<DepthLayering> {
    if !(max_layer_width_px.is_finite() && max_layer_width_px > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "layer width must be positive, got {max_layer_width_px}"
        )));
    }
    let (lo, hi) = coc
        .valid_range()
        .ok_or(Error::EmptyValidRegion("CoC map"))?;
    let (lo, hi, n) = if hi > lo {
        // the epsilon keeps exact multiples such as 1.0 / 0.5 from gaining a layer
        let n = ((hi - lo) / max_layer_width_px - 1e-9).ceil().max(1.0) as usize;
        (lo, hi, n)
    } else {
        (
            lo - 0.5 * max_layer_width_px,
            lo + 0.5 * max_layer_width_px,
            1,
        )
    };
    let width = (hi - lo) / n as f64;
    let boundaries: Vec<f64> = (0..=n)
        .map(|i| if i == n { hi } else { lo + width * i as f64 })
        .collect();
    let representatives = (0..n)
        .map(|i| {
            let mid = 0.5 * (boundaries[i] + boundaries[i + 1]);
            (mid * RADIUS_STEPS_PER_PX).round() as i64
        })
        .collect();
    Ok(DepthLayering {
        boundaries,
        representatives,
    })
}

/// How a frame set was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub camera: CameraParams,
    pub kernel_family: String,
    pub layer_width_px: f64,
    pub layer_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub variance: f64,
    pub seed: u64,
}

/// Five co-registered views plus optional ground truth aligned to the center view.
#[derive(Debug, Clone, PartialEq)]
pub struct QpFrameSet {
    views: Vec<Image>,
    pub gt_disparity: Option<DisparityMap>,
    pub meta: FrameMeta,
}

impl QpFrameSet {
    /// `views` ordered as [`View::ALL`].
    pub fn new(
        views: Vec<Image>,
        gt_disparity: Option<DisparityMap>,
        meta: FrameMeta,
    ) -> Result<Self> {
        if views.len() != View::ALL.len() {
            return Err(Error::InvalidArgument(format!(
                "expected 5 views, got {}",
                views.len()
            )));
        }
        let dim = views[0].dim();
        let ch = views[0].channel_count();
        for v in &views[1..] {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.dim(),
                });
            }
            if v.channel_count() != ch {
                return Err(Error::InvalidArgument(
                    "views differ in channel count".into(),
                ));
            }
        }
        if let Some(gt) = &gt_disparity {
            if gt.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: gt.dim(),
                });
            }
        }
        Ok(Self {
            views,
            gt_disparity,
            meta,
        })
    }

    pub fn view(&self, v: View) -> &Image {
        &self.views[v.index()]
    }

    pub fn views(&self) -> &[Image] {
        &self.views
    }

    pub fn dim(&self) -> (usize, usize) {
        self.views[0].dim()
    }
}

struct Layer {
    rep_steps: i64,
    /// Inclusive pixel bounding box `(y0, y1, x0, x1)`.
    bbox: (usize, usize, usize, usize),
    pixels: Vec<(usize, usize)>,
}

/// Renders all five views of a scene and its ground-truth disparity.
pub fn render_qp(
    aif: &Image,
    depth: &DepthMap,
    params: &CameraParams,
    layering: &DepthLayering,
    family: &dyn KernelFamily,
) -> Result<QpFrameSet> {
    if aif.dim() != depth.dim() {
        return Err(Error::DimensionMismatch {
            expected: aif.dim(),
            got: depth.dim(),
        });
    }
    let coc = coc_from_depth(params, depth)?;
    if coc.valid_count() == 0 {
        return Err(Error::EmptyValidRegion("depth map"));
    }
    let layers = collect_layers(&coc, layering);

    let (h, w) = aif.dim();
    let nch = aif.channel_count();
    let mut accums: Vec<Accum> = View::ALL.iter().map(|_| Accum::new(h, w, nch)).collect();

    // Front (smallest CoC, nearest) to back.
    for layer in &layers {
        accums
            .par_iter_mut()
            .zip(View::ALL.par_iter())
            .for_each(|(acc, &view)| {
                let kview = if layer.rep_steps < 0 {
                    view.flipped()
                } else {
                    view
                };
                let kernel =
                    kernel_from_steps(family, layer.rep_steps.unsigned_abs() as u32, kview);
                acc.composite(aif, layer, &kernel);
            });
    }

    let views = accums
        .into_iter()
        .map(Accum::finish)
        .collect::<Result<Vec<_>>>()?;
    let gt = disparity_from_coc(&coc, family);
    QpFrameSet::new(
        views,
        Some(gt),
        FrameMeta {
            camera: *params,
            kernel_family: family.name().to_owned(),
            layer_width_px: layering
                .boundaries
                .windows(2)
                .map(|b| b[1] - b[0])
                .fold(0.0, f64::max),
            layer_count: layering.len(),
            noise: None,
        },
    )
}

fn collect_layers(coc: &CocMap, layering: &DepthLayering) -> Vec<Layer> {
    let mut layers: Vec<Layer> = layering
        .representatives
        .iter()
        .map(|&rep_steps| Layer {
            rep_steps,
            bbox: (usize::MAX, 0, usize::MAX, 0),
            pixels: Vec::new(),
        })
        .collect();
    for ((y, x), &c) in coc.values.indexed_iter() {
        if !coc.valid[[y, x]] {
            continue;
        }
        let l = &mut layers[layering.layer_of(c)];
        l.pixels.push((y, x));
        l.bbox = (
            l.bbox.0.min(y),
            l.bbox.1.max(y),
            l.bbox.2.min(x),
            l.bbox.3.max(x),
        );
    }
    layers.retain(|l| !l.pixels.is_empty());
    layers
}

struct Accum {
    color: Vec<Array2<f64>>,
    alpha: Array2<f64>,
    /// Fraction of light from farther layers that still reaches each pixel.
    transmittance: Array2<f64>,
    /// Coverage of recent layers, not yet far enough in front to occlude.
    pending: VecDeque<Coverage>,
}

struct Coverage {
    rep_steps: i64,
    origin: (usize, usize),
    alpha: Array2<f64>,
}

impl Accum {
    fn new(h: usize, w: usize, nch: usize) -> Self {
        Self {
            color: vec![Array2::zeros((h, w)); nch],
            alpha: Array2::zeros((h, w)),
            transmittance: Array2::ones((h, w)),
            pending: VecDeque::new(),
        }
    }

    /// Adds `layer` behind everything composited so far.
    fn composite(&mut self, aif: &Image, layer: &Layer, kernel: &PsfKernel) {
        let (h, w) = self.alpha.dim();
        let half = kernel.half_size();
        let (y0, y1, x0, x1) = layer.bbox;
        let ry0 = y0.saturating_sub(half);
        let rx0 = x0.saturating_sub(half);
        let ry1 = (y1 + half).min(h - 1);
        let rx1 = (x1 + half).min(w - 1);
        let (rh, rw) = (ry1 - ry0 + 1, rx1 - rx0 + 1);

        let taps: Vec<(isize, isize, f64)> = kernel
            .taps()
            .indexed_iter()
            .filter(|(_, &v)| v != 0.0)
            .map(|((i, j), &v)| (i as isize - half as isize, j as isize - half as isize, v))
            .collect();

        let nch = self.color.len();
        let mut alpha = Array2::<f64>::zeros((rh, rw));
        let mut color = vec![Array2::<f64>::zeros((rh, rw)); nch];
        let src: Vec<&Array2<f64>> = aif.channels().iter().collect();
        for &(y, x) in &layer.pixels {
            for &(dy, dx, wgt) in &taps {
                let ty = y as isize + dy;
                let tx = x as isize + dx;
                if ty < ry0 as isize || tx < rx0 as isize || ty > ry1 as isize || tx > rx1 as isize
                {
                    continue;
                }
                let (ly, lx) = (ty as usize - ry0, tx as usize - rx0);
                alpha[[ly, lx]] += wgt;
                for c in 0..nch {
                    color[c][[ly, lx]] += wgt * src[c][[y, x]];
                }
            }
        }

        let gap = (OCCLUSION_GAP_PX * RADIUS_STEPS_PER_PX).round() as i64;
        while self
            .pending
            .front()
            .is_some_and(|p| p.rep_steps + gap <= layer.rep_steps)
        {
            let p = self.pending.pop_front().unwrap();
            let (ph, pw) = p.alpha.dim();
            let (oy, ox) = p.origin;
            Zip::from(self.transmittance.slice_mut(s![oy..oy + ph, ox..ox + pw]))
                .and(&p.alpha)
                .for_each(|t, &a| *t *= (1.0 - a).max(0.0));
        }

        let region = s![ry0..=ry1, rx0..=rx1];
        let trans = self.transmittance.slice(region);
        for (acc, layer_color) in self.color.iter_mut().zip(&color) {
            Zip::from(acc.slice_mut(region))
                .and(layer_color)
                .and(&trans)
                .for_each(|acc, &b, &t| *acc += t * b);
        }
        Zip::from(self.alpha.slice_mut(region))
            .and(&alpha)
            .and(&trans)
            .for_each(|acc, &a, &t| *acc += t * a);
        self.pending.push_back(Coverage {
            rep_steps: layer.rep_steps,
            origin: (ry0, rx0),
            alpha,
        });
    }

    fn finish(self) -> Result<Image> {
        let Accum {
            mut color, alpha, ..
        } = self;
        for plane in &mut color {
            Zip::from(plane).and(&alpha).for_each(|v, &a| {
                *v = if a > 1e-12 {
                    (*v / a).clamp(0.0, 1.0)
                } else {
                    0.0
                };
            });
        }
        Image::new(color)
    }
}

/// Adds i.i.d. zero-mean Gaussian noise to every view, then clamps to `[0, 1]`.
///
/// Each image row draws from its own ChaCha stream keyed by view, channel and
/// row, so the result does not depend on how rows are scheduled.
pub fn add_gaussian_noise(frames: &QpFrameSet, variance: f64, seed: u64) -> Result<QpFrameSet> {
    if !(variance.is_finite() && variance >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise variance must be non-negative, got {variance}"
        )));
    }
    let mut out = frames.clone();
    out.meta.noise = Some(NoiseSpec { variance, seed });
    if variance == 0.0 {
        return Ok(out);
    }
    let normal =
        Normal::new(0.0, variance.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let (h, _) = frames.dim();
    for (vi, view) in out.views.iter_mut().enumerate() {
        let nch = view.channel_count();
        for (ci, plane) in view.channels_mut().iter_mut().enumerate() {
            plane
                .axis_iter_mut(ndarray::Axis(0))
                .into_par_iter()
                .enumerate()
                .for_each(|(y, mut row)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(((vi * nch + ci) * h + y) as u64);
                    for v in row.iter_mut() {
                        *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
                    }
                });
        }
    }
    Ok(out)
}
