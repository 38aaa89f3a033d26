//! Portable float map: `PF` (RGB) or `Pf` (gray), bottom-up rows of `f32`.
//! A negative scale marks little-endian data.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::LinearImage;

/// Encodes as little-endian (scale `-1.0`). Values are narrowed to `f32`.
pub fn encode(img: &LinearImage) -> Vec<u8> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let tag = if c == 3 { "PF" } else { "Pf" };
    let mut out = format!("{tag}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * img.data().len());
    for y in (0..h).rev() {
        for &v in &img.data()[y * w * c..(y + 1) * w * c] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Reads one whitespace-delimited header token, returning it and the offset after it.
fn token(bytes: &[u8], mut pos: usize, what: &str) -> Result<(String, usize, usize)> {
    while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
        pos += 1;
    }
    let start = pos;
    while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
        pos += 1;
    }
    if start == pos {
        return Err(Error::parse(start, format!("missing {what}")));
    }
    let text = std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::parse(start, format!("{what} is not text")))?;
    Ok((text.to_string(), start, pos))
}

pub fn decode(bytes: &[u8]) -> Result<LinearImage> {
    let (tag, at, pos) = token(bytes, 0, "PFM signature")?;
    if at != 0 {
        return Err(Error::parse(0, "PFM signature must start the file"));
    }
    let channels = match tag.as_str() {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(Error::parse(0, format!("bad PFM signature {tag:?}"))),
    };
    let dim = |pos: usize, what: &str| -> Result<(usize, usize)> {
        let (t, at, end) = token(bytes, pos, what)?;
        let v: usize = t.parse().map_err(|_| Error::parse(at, format!("bad {what} {t:?}")))?;
        if v == 0 {
            return Err(Error::parse(at, format!("{what} must be positive")));
        }
        Ok((v, end))
    };
    let (width, pos) = dim(pos, "width")?;
    let (height, pos) = dim(pos, "height")?;
    let (t, at, pos) = token(bytes, pos, "scale")?;
    let scale: f64 = t.parse().map_err(|_| Error::parse(at, format!("bad scale {t:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::parse(at, format!("scale must be finite and nonzero, got {t}")));
    }
    let little = scale < 0.0;
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::parse(pos, "missing newline after PFM header"));
    }
    let start = pos + 1;
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::parse(0, "PFM dimensions overflow"))?;
    let need = 4 * n;
    let have = bytes.len() - start;
    if have < need {
        return Err(Error::parse(bytes.len(), format!("truncated PFM payload: {have} of {need} bytes")));
    }
    let payload = &bytes[start..start + need];
    let row = width * channels;
    let mut data = vec![0.0; n];
    for (k, b) in payload.chunks_exact(4).enumerate() {
        let raw = [b[0], b[1], b[2], b[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        if !v.is_finite() || v < 0.0 {
            return Err(Error::parse(start + 4 * k, format!("pixel value {v} is not a finite non-negative number")));
        }
        let (file_row, col) = (k / row, k % row);
        data[(height - 1 - file_row) * row + col] = f64::from(v);
    }
    LinearImage::new(height, width, channels, data)
}

pub fn write(path: &Path, img: &LinearImage) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(img))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<LinearImage> {
    decode(&std::fs::read(path)?)
}
