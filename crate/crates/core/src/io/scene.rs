use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::frameset::{decode_png, to_linear};
use super::{pfm, srgb};
use crate::error::{Error, Result};
use crate::grid::{DepthMap, Image, MaskedPlane};
use crate::optics::CameraParams;

pub const IMAGE_FILE: &str = "image.png";
pub const DEPTH_FILE: &str = "depth.pfm";

/// One RGB-D input scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: String,
    pub image: PathBuf,
    /// Depth in meters as a float map.
    pub depth: PathBuf,
    pub camera: CameraParams,
}

#[derive(Debug, Clone)]
pub enum LoadOutcome {
    Loaded {
        image: Image,
        depth: DepthMap,
    },
    /// Too few pixels inside the depth range.
    Rejected {
        valid_fraction: f64,
    },
}

/// How 8/16-bit input samples map to linear intensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transfer {
    #[default]
    Srgb,
    Linear,
}

/// Loads an all-in-focus image and its depth, masking depths outside `depth_range`.
///
/// Scenes whose in-range fraction is below `min_valid_fraction` are rejected
/// rather than failing.
pub fn load_scene(
    record: &SceneRecord,
    depth_range: (f64, f64),
    min_valid_fraction: f64,
    transfer: Transfer,
) -> Result<LoadOutcome> {
    let img = decode_png(&record.image)?;
    let image = match transfer {
        Transfer::Srgb => to_linear(&img, srgb::decode)?,
        Transfer::Linear => to_linear(&img, |v| v)?,
    };
    let values = pfm::read(&record.depth)?;
    if values.dim() != image.dim() {
        return Err(Error::DimensionMismatch {
            expected: image.dim(),
            got: values.dim(),
        });
    }
    let (lo, hi) = depth_range;
    let valid = values.mapv(|z| z.is_finite() && z > 0.0 && z >= lo && z <= hi);
    let depth = MaskedPlane::new(values.mapv(|z| if z.is_finite() { z } else { 0.0 }), valid)?;
    let fraction = depth.valid_count() as f64 / depth.values.len().max(1) as f64;
    if fraction < min_valid_fraction || depth.valid_count() == 0 {
        return Ok(LoadOutcome::Rejected {
            valid_fraction: fraction,
        });
    }
    Ok(LoadOutcome::Loaded { image, depth })
}

/// Scenes under `root`: every subdirectory holding `image.png` and `depth.pfm`, sorted by name.
pub fn discover_scenes(root: &Path, camera: CameraParams) -> Result<Vec<SceneRecord>> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let dir = entry.path();
        if !dir.is_dir() {
            continue;
        }
        let (image, depth) = (dir.join(IMAGE_FILE), dir.join(DEPTH_FILE));
        if image.is_file() && depth.is_file() {
            out.push(SceneRecord {
                id: entry.file_name().to_string_lossy().into_owned(),
                image,
                depth,
                camera,
            });
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}
