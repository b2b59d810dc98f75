//! Directional point-spread functions for the five quad-pixel views.
//!
//! The right kernel comes from a [`KernelFamily`]; every other view is derived
//! from it by construction:
//!
//! * left = right mirrored along x,
//! * top = left rotated a quarter turn, bottom = right rotated a quarter turn,
//! * center = elementwise mean of left and right.
//!
//! The quarter turn maps an offset `(x, y)` to `(-y, x)` with `+y` pointing down,
//! so a kernel whose mass sits at `-x` ends up with its mass at `-y`. With
//! convolution, a point at signed disparity `d` is displaced by `(+d, 0)` in
//! the right view, `(-d, 0)` in the left view, `(0, -d)` in the top view and
//! `(0, +d)` in the bottom view. Negative circles of confusion swap left/right
//! and top/bottom (see [`View::flipped`]).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::grid::View;

/// Kernel radii live on a lattice of this many steps per pixel.
pub const RADIUS_STEPS_PER_PX: f64 = 100.0;

pub const DEFAULT_FAMILY: &str = "half_disk";

/// A source of right-view kernels. Other views are derived by symmetry.
pub trait KernelFamily: Send + Sync {
    fn name(&self) -> &str;

    /// Non-negative taps of the right kernel for `radius > 0` on a
    /// `(2·ceil(radius)+1)²` grid centered on the middle tap. Need not be normalized.
    fn right_taps(&self, radius: f64) -> Array2<f64>;

    /// x-offset of the right kernel's centre of mass for `radius >= 0`.
    fn right_centroid(&self, radius: f64) -> f64;
}

/// Uniform right half of a disk split along its vertical diameter.
#[derive(Debug, Clone, Copy, Default)]
pub struct HalfDisk;

impl KernelFamily for HalfDisk {
    fn name(&self) -> &str {
        DEFAULT_FAMILY
    }

    fn right_taps(&self, radius: f64) -> Array2<f64> {
        let c = radius.ceil() as usize;
        let n = 2 * c + 1;
        let mut taps = Array2::zeros((n, n));
        // Rows j >= 0 are computed and mirrored so the kernel is exactly symmetric in y.
        for j in 0..=c {
            let y0 = j as f64 - 0.5;
            let y1 = j as f64 + 0.5;
            for i in 0..=c {
                let x0 = (i as f64 - 0.5).max(0.0);
                let x1 = i as f64 + 0.5;
                let a = rect_disk_area(x0, x1, y0, y1, radius).max(0.0);
                taps[[c + j, c + i]] = a;
                taps[[c - j, c + i]] = a;
            }
        }
        taps
    }

    fn right_centroid(&self, radius: f64) -> f64 {
        4.0 * radius / (3.0 * PI)
    }
}

/// Area of `{0 <= u <= x, 0 <= v <= y, u² + v² <= r²}`, extended to negative
/// corners by odd symmetry in each coordinate.
fn quadrant_area(x: f64, y: f64, r: f64) -> f64 {
    let sign = x.signum() * y.signum();
    let x = x.abs().min(r);
    let y = y.abs().min(r);
    if x == 0.0 || y == 0.0 {
        return 0.0;
    }
    if x * x + y * y <= r * r {
        return sign * x * y;
    }
    let r2 = r * r;
    let prim =
        |u: f64| 0.5 * (u * (r2 - u * u).max(0.0).sqrt() + r2 * (u / r).clamp(-1.0, 1.0).asin());
    let xs = (r2 - y * y).max(0.0).sqrt();
    sign * (xs * y + prim(x) - prim(xs))
}

/// Exact area of the rectangle `[x0, x1] × [y0, y1]` inside the disk of radius `r`.
fn rect_disk_area(x0: f64, x1: f64, y0: f64, y1: f64, r: f64) -> f64 {
    if x1 <= x0 || y1 <= y0 {
        return 0.0;
    }
    quadrant_area(x1, y1, r) - quadrant_area(x0, y1, r) - quadrant_area(x1, y0, r)
        + quadrant_area(x0, y0, r)
}

/// Identifier-keyed set of kernel families.
#[derive(Clone)]
pub struct KernelRegistry {
    families: BTreeMap<String, Arc<dyn KernelFamily>>,
}

impl Default for KernelRegistry {
    fn default() -> Self {
        let mut reg = Self {
            families: BTreeMap::new(),
        };
        reg.register(Arc::new(HalfDisk));
        reg
    }
}

impl KernelRegistry {
    pub fn register(&mut self, family: Arc<dyn KernelFamily>) {
        self.families.insert(family.name().to_owned(), family);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn KernelFamily>> {
        self.families
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownKernelFamily(name.to_owned()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.families.keys().map(String::as_str)
    }
}

/// Snaps a radius to the 0.01 px lattice, returned in lattice steps.
pub fn quantize_radius(radius_px: f64) -> Result<u32> {
    if !radius_px.is_finite() || radius_px < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "kernel radius must be finite and non-negative, got {radius_px}"
        )));
    }
    Ok((radius_px * RADIUS_STEPS_PER_PX).round() as u32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsfKernel {
    radius_steps: u32,
    direction: View,
    taps: Array2<f64>,
}

impl PsfKernel {
    pub fn radius_px(&self) -> f64 {
        self.radius_steps as f64 / RADIUS_STEPS_PER_PX
    }

    pub fn radius_steps(&self) -> u32 {
        self.radius_steps
    }

    pub fn direction(&self) -> View {
        self.direction
    }

    pub fn taps(&self) -> &Array2<f64> {
        &self.taps
    }

    /// `(row, col)` of the kernel origin.
    pub fn center_index(&self) -> (usize, usize) {
        (self.taps.nrows() / 2, self.taps.ncols() / 2)
    }

    /// Half-width of the square support.
    pub fn half_size(&self) -> usize {
        self.taps.ncols() / 2
    }

    pub fn is_delta(&self) -> bool {
        self.taps.len() == 1
    }
}

/// Half-disk kernel for a view.
pub fn make_kernel(radius_px: f64, direction: View) -> Result<PsfKernel> {
    make_kernel_with(&HalfDisk, radius_px, direction)
}

pub fn make_kernel_with(
    family: &dyn KernelFamily,
    radius_px: f64,
    direction: View,
) -> Result<PsfKernel> {
    let radius_steps = quantize_radius(radius_px)?;
    Ok(kernel_from_steps(family, radius_steps, direction))
}

pub(crate) fn kernel_from_steps(
    family: &dyn KernelFamily,
    radius_steps: u32,
    direction: View,
) -> PsfKernel {
    let taps = if radius_steps == 0 {
        Array2::from_elem((1, 1), 1.0)
    } else {
        let right = normalized(family.right_taps(radius_steps as f64 / RADIUS_STEPS_PER_PX));
        match direction {
            View::Right => right,
            View::Left => mirror_x(&right),
            View::Bottom => quarter_turn(&right),
            View::Top => quarter_turn(&mirror_x(&right)),
            View::Center => {
                let left = mirror_x(&right);
                (&left + &right) * 0.5
            }
        }
    };
    PsfKernel {
        radius_steps,
        direction,
        taps,
    }
}

fn normalized(mut taps: Array2<f64>) -> Array2<f64> {
    let sum: f64 = taps.iter().sum();
    taps.mapv_inplace(|v| v / sum);
    taps
}

fn mirror_x(taps: &Array2<f64>) -> Array2<f64> {
    taps.slice(s![.., ..;-1]).to_owned()
}

/// `(x, y) -> (-y, x)` about the center tap.
fn quarter_turn(taps: &Array2<f64>) -> Array2<f64> {
    let n = taps.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| taps[[n - 1 - j, i]])
}

/// Weighted mean tap offset `(x, y)` relative to the center index.
pub fn kernel_centroid(kernel: &PsfKernel) -> (f64, f64) {
    let (cy, cx) = kernel.center_index();
    let mut sum = 0.0;
    let mut mx = 0.0;
    let mut my = 0.0;
    for ((i, j), &w) in kernel.taps.indexed_iter() {
        sum += w;
        mx += w * (j as f64 - cx as f64);
        my += w * (i as f64 - cy as f64);
    }
    (mx / sum, my / sum)
}
