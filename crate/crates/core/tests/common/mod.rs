#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ndarray::Array2;
use qpd_core::io::{pfm, DEPTH_FILE, IMAGE_FILE};
use qpd_core::optics::coc_from_depth;
use qpd_core::psf::HalfDisk;
use qpd_core::render::{plan_layers, FrameMeta};
use qpd_core::{CameraParams, Image, MaskedPlane, QpFrameSet, View};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Aperiodic band-limited texture: a fixed random sum of sinusoids, so
/// `dx`, `dy` translate the pattern exactly, including fractional shifts.
pub fn texture_at(w: usize, h: usize, dx: f64, dy: f64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..48)
        .map(|_| {
            let freq = rng.random_range(0.08..0.9);
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (
                freq * angle.cos(),
                freq * angle.sin(),
                phase,
                0.3 / (1.0 + 4.0 * freq) / 48f64.sqrt(),
            )
        })
        .collect();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (x, y) = (x as f64 - dx, y as f64 - dy);
        0.5 + waves
            .iter()
            .map(|&(fx, fy, p, a)| a * (fx * x + fy * y + p).sin())
            .sum::<f64>()
    })
}

pub fn texture(w: usize, h: usize) -> Image {
    Image::gray(texture_at(w, h, 0.0, 0.0)).unwrap()
}

/// Uniform noise in `[0, 1)`.
pub fn noise_plane(w: usize, h: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((h, w), |_| rng.random::<f64>())
}

/// Crop of `src` whose top-left corner sits at `(x0, y0)`.
pub fn crop(src: &Array2<f64>, x0: usize, y0: usize, w: usize, h: usize) -> Array2<f64> {
    src.slice(ndarray::s![y0..y0 + h, x0..x0 + w]).to_owned()
}

pub fn dummy_meta() -> FrameMeta {
    FrameMeta {
        camera: CameraParams::default(),
        kernel_family: "half_disk".into(),
        layer_width_px: 0.1,
        layer_count: 1,
        noise: None,
    }
}

/// Five views of a pure integer-shift scene: right and bottom move the
/// content by `+d`, left and top by `-d`.
pub fn shifted_views(w: usize, h: usize, d: usize, seed: u64) -> QpFrameSet {
    let pad = d + 2;
    let src = noise_plane(w + 2 * pad, h + 2 * pad, seed);
    let view = |v: View| {
        let (x0, y0) = match v {
            View::Center => (pad, pad),
            View::Right => (pad - d, pad),
            View::Left => (pad + d, pad),
            View::Bottom => (pad, pad - d),
            View::Top => (pad, pad + d),
        };
        Image::gray(crop(&src, x0, y0, w, h)).unwrap()
    };
    QpFrameSet::new(
        View::ALL.iter().map(|&v| view(v)).collect(),
        None,
        dummy_meta(),
    )
    .unwrap()
}

/// Five views of a fractional pure-shift scene built from the analytic texture.
pub fn analytic_shift_views(w: usize, h: usize, d: f64) -> QpFrameSet {
    let view = |v: View| {
        let (dx, dy) = match v {
            View::Center => (0.0, 0.0),
            View::Right => (d, 0.0),
            View::Left => (-d, 0.0),
            View::Bottom => (0.0, d),
            View::Top => (0.0, -d),
        };
        Image::gray(texture_at(w, h, dx, dy)).unwrap()
    };
    QpFrameSet::new(
        View::ALL.iter().map(|&v| view(v)).collect(),
        None,
        dummy_meta(),
    )
    .unwrap()
}

/// Renders a fronto-parallel plane at depth `z` over the analytic texture.
pub fn render_plane(n: usize, z: f64) -> QpFrameSet {
    let camera = CameraParams::default();
    let depth = MaskedPlane::filled(n, n, z);
    let coc = coc_from_depth(&camera, &depth).unwrap();
    let layers = plan_layers(&coc, 0.1).unwrap();
    qpd_core::render_qp(&texture(n, n), &depth, &camera, &layers, &HalfDisk).unwrap()
}

/// Writes an 8-bit RGB all-in-focus image and a metric depth map into
/// `root/id`, the layout `cmd_generate` reads.
pub fn write_rgbd_scene(root: &Path, id: &str, n: usize, depth: impl Fn(usize, usize) -> f64) {
    let dir = root.join(id);
    std::fs::create_dir_all(&dir).unwrap();
    let base = texture_at(n + 4, n, 0.0, 0.0);
    let img = image::RgbImage::from_fn(n as u32, n as u32, |x, y| {
        let px = |dx: usize| (base[[y as usize, x as usize + dx]] * 255.0).round() as u8;
        image::Rgb([px(0), px(2), px(4)])
    });
    img.save(dir.join(IMAGE_FILE)).unwrap();
    let z = Array2::from_shape_fn((n, n), |(y, x)| depth(x, y));
    pfm::write(&dir.join(DEPTH_FILE), &z).unwrap();
}

/// Sorted `(relative path, bytes)` of every file under `root` with extension `ext`.
pub fn files_with_ext(root: &Path, ext: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == ext) {
                let bytes = std::fs::read(&path).unwrap();
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), bytes));
            }
        }
    }
    out.sort();
    out
}
