//! Portable float maps.
//!
//! Header: `PF` (3 channels) or `Pf` (1 channel), then `width height`, then a
//! scale whose sign gives the byte order (negative = little-endian). Rows are
//! stored bottom-up as raw 32-bit floats. Writers always emit little-endian
//! greyscale maps with scale `-1.0`.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub fn encode(plane: &Array2<f64>) -> Vec<u8> {
    let (h, w) = plane.dim();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * w * h);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(plane[[y, x]] as f32).to_le_bytes());
        }
    }
    out
}

/// Decodes a map. Colour maps are reduced to their first channel.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    let bad = |m: &str| Error::format(path, m);
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(bad(&format!("unknown magic `{other}`"))),
    };
    let w: usize = token()?.parse().map_err(|_| bad("bad width"))?;
    let h: usize = token()?.parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = token()?.parse().map_err(|_| bad("bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("scale must be non-zero"));
    }
    // exactly one whitespace byte separates the header from the payload
    let payload = &bytes[pos + 1..];
    let need = 4 * w * h * channels;
    if payload.len() < need {
        return Err(bad(&format!(
            "payload has {} bytes, need {need}",
            payload.len()
        )));
    }
    let little = scale < 0.0;
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let i = 4 * (((h - 1 - y) * w + x) * channels);
            let b = [payload[i], payload[i + 1], payload[i + 2], payload[i + 3]];
            let v = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
            out[[y, x]] = v as f64;
        }
    }
    Ok(out)
}

pub fn write(path: &Path, plane: &Array2<f64>) -> Result<()> {
    fs::write(path, encode(plane)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
