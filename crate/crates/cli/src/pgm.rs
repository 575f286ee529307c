//! Binary greyscale (P5) rasters.

use std::io::Write;
use std::path::Path;

use foam_core::error::{Error, Result};

/// Maps `values` linearly from `range` (or their own min..max) onto 0..=255.
pub fn to_bytes(values: &[f64], range: Option<(f64, f64)>) -> Vec<u8> {
    let (lo, hi) = range.unwrap_or_else(|| {
        values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    });
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            if span > 0.0 && span.is_finite() {
                (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

pub fn encode(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::InvalidArgument(format!(
            "{} pixels do not fill a {width}×{height} raster",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn write(path: impl AsRef<Path>, width: usize, height: usize, values: &[f64], range: Option<(f64, f64)>) -> Result<()> {
    let bytes = encode(width, height, &to_bytes(values, range))?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

/// Header fields and pixel bytes of a P5 file.
pub fn decode(bytes: &[u8]) -> Option<(usize, usize, &[u8])> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return None;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?);
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return None;
    }
    let (w, h): (usize, usize) = (fields[1].parse().ok()?, fields[2].parse().ok()?);
    let pixels = bytes.get(pos + 1..)?;
    (pixels.len() == w * h).then_some((w, h, pixels))
}
