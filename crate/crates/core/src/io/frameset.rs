use std::fs;
use std::io::BufReader;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};
use ndarray::Array2;

use super::{pfm, srgb};
use crate::error::{Error, Result};
use crate::grid::{Image, MaskedPlane, View};
use crate::render::{FrameMeta, QpFrameSet};

pub const VIEW_EXT: &str = "png16";
pub const GT_FILE: &str = "gt_disp.pfm";
pub const MASK_FILE: &str = "mask.pfm";
pub const META_FILE: &str = "meta.json";

fn quantize(v: f64) -> u16 {
    (srgb::encode(v) * 65535.0).round() as u16
}

fn dequantize(v: u16) -> f64 {
    srgb::decode(v as f64 / 65535.0)
}

/// Writes a linear image as a gamma-encoded 16-bit PNG.
pub(crate) fn write_view(path: &Path, img: &Image) -> Result<()> {
    let (h, w) = img.dim();
    let (w32, h32) = (w as u32, h as u32);
    let result = match img.channels() {
        [g] => {
            let data: Vec<u16> = g.iter().map(|v| quantize(*v)).collect();
            ImageBuffer::<Luma<u16>, _>::from_raw(w32, h32, data)
                .expect("buffer sized from image")
                .save_with_format(path, ImageFormat::Png)
        }
        [r, g, b] => {
            let mut data = Vec::with_capacity(3 * w * h);
            for ((rv, gv), bv) in r.iter().zip(g.iter()).zip(b.iter()) {
                data.extend([quantize(*rv), quantize(*gv), quantize(*bv)]);
            }
            ImageBuffer::<Rgb<u16>, _>::from_raw(w32, h32, data)
                .expect("buffer sized from image")
                .save_with_format(path, ImageFormat::Png)
        }
        _ => unreachable!("channel count validated on construction"),
    };
    result.map_err(|source| Error::Image {
        path: path.to_owned(),
        source,
    })
}

pub(crate) fn decode_png(path: &Path) -> Result<DynamicImage> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    image::load(BufReader::new(file), ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_owned(),
        source,
    })
}

/// Converts a decoded PNG into a linear image with `to_linear` applied per sample.
pub(crate) fn to_linear(img: &DynamicImage, to_linear: impl Fn(f64) -> f64) -> Result<Image> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(
        img.color(),
        image::ColorType::L8
            | image::ColorType::L16
            | image::ColorType::La8
            | image::ColorType::La16
    );
    if gray {
        let buf = img.to_luma16();
        let plane = Array2::from_shape_fn((h, w), |(y, x)| {
            to_linear(buf.get_pixel(x as u32, y as u32)[0] as f64 / 65535.0)
        });
        Image::gray(plane)
    } else {
        let buf = img.to_rgb16();
        let ch = |c: usize| {
            Array2::from_shape_fn((h, w), |(y, x)| {
                to_linear(buf.get_pixel(x as u32, y as u32)[c] as f64 / 65535.0)
            })
        };
        Image::new(vec![ch(0), ch(1), ch(2)])
    }
}

pub(crate) fn read_view(path: &Path) -> Result<Image> {
    let img = decode_png(path)?;
    // 16-bit round trip goes through the exact integer code, not the normalized float
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma16(buf) => Image::gray(Array2::from_shape_fn((h, w), |(y, x)| {
            dequantize(buf.get_pixel(x as u32, y as u32)[0])
        })),
        DynamicImage::ImageRgb16(buf) => {
            let ch = |c: usize| {
                Array2::from_shape_fn((h, w), |(y, x)| {
                    dequantize(buf.get_pixel(x as u32, y as u32)[c])
                })
            };
            Image::new(vec![ch(0), ch(1), ch(2)])
        }
        other => to_linear(&other, srgb::decode),
    }
}

fn mask_plane(valid: &Array2<bool>) -> Array2<f64> {
    valid.mapv(|v| if v { 1.0 } else { 0.0 })
}

/// Writes views, ground truth (if any) and metadata into `dir`, creating it.
pub fn write_frameset(frames: &QpFrameSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for v in View::ALL {
        write_view(
            &dir.join(format!("{}.{VIEW_EXT}", v.name())),
            frames.view(v),
        )?;
    }
    if let Some(gt) = &frames.gt_disparity {
        pfm::write(&dir.join(GT_FILE), &gt.values)?;
        pfm::write(&dir.join(MASK_FILE), &mask_plane(&gt.valid))?;
    }
    let meta_path = dir.join(META_FILE);
    let json = serde_json::to_string_pretty(&frames.meta).map_err(|source| Error::Json {
        path: meta_path.clone(),
        source,
    })?;
    fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))
}

/// Reads the five views of a scene directory.
pub fn read_views(dir: &Path) -> Result<Vec<Image>> {
    View::ALL
        .iter()
        .map(|v| {
            let path = dir.join(format!("{}.{VIEW_EXT}", v.name()));
            if !path.is_file() {
                return Err(Error::MissingView {
                    view: v.name(),
                    dir: dir.to_owned(),
                });
            }
            read_view(&path)
        })
        .collect()
}

pub fn read_frameset(dir: &Path) -> Result<QpFrameSet> {
    let views = read_views(dir)?;
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: FrameMeta = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: meta_path.clone(),
        source,
    })?;
    let gt_path = dir.join(GT_FILE);
    let gt = if gt_path.is_file() {
        let values = pfm::read(&gt_path)?;
        let mask_path = dir.join(MASK_FILE);
        let valid = if mask_path.is_file() {
            pfm::read(&mask_path)?.mapv(|m| m > 0.5)
        } else {
            values.mapv(f64::is_finite)
        };
        Some(MaskedPlane::new(values, valid)?)
    } else {
        None
    };
    QpFrameSet::new(views, gt, meta)
}
