//! Radiance HDR (RGBE) reading and writing.
//!
//! Scanlines are read in either the run-length ("new RLE") or the flat
//! layout and always written flat. A normalized pixel has a mantissa of at
//! least 128, so a written scanline never starts with an RLE marker.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::LinearImage;

const FORMAT: &str = "32-bit_rle_rgbe";

/// Decodes one RGBE quadruple as `(m / 256) * 2^(e - 128)`.
pub fn decode_pixel(p: [u8; 4]) -> [f64; 3] {
    if p[3] == 0 {
        return [0.0; 3];
    }
    let f = 2f64.powi(i32::from(p[3]) - 136);
    [f64::from(p[0]) * f, f64::from(p[1]) * f, f64::from(p[2]) * f]
}

/// Encodes an RGB triple with a shared exponent taken from the largest
/// channel; mantissas are rounded and capped at 255, which keeps every
/// channel's error within 1/256 of the largest channel.
pub fn encode_pixel(rgb: [f64; 3]) -> Result<[u8; 4]> {
    if rgb.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidValue(format!("RGBE cannot encode {rgb:?}")));
    }
    let v = rgb[0].max(rgb[1]).max(rgb[2]);
    if v == 0.0 {
        return Ok([0; 4]);
    }
    // v = frac * 2^exp with frac in [0.5, 1)
    let mut exp = v.log2().floor() as i32 + 1;
    if v >= 2f64.powi(exp) {
        exp += 1;
    } else if v < 2f64.powi(exp - 1) {
        exp -= 1;
    }
    let biased = exp + 128;
    if biased > 255 {
        return Err(Error::InvalidValue(format!("{v} exceeds the RGBE range")));
    }
    if biased < 1 {
        return Ok([0; 4]);
    }
    let scale = 2f64.powi(8 - exp);
    let m = |x: f64| (x * scale).round().min(255.0) as u8;
    Ok([m(rgb[0]), m(rgb[1]), m(rgb[2]), biased as u8])
}

pub fn encode(img: &LinearImage) -> Result<Vec<u8>> {
    img.ensure_channels(3, "RGBE")?;
    let (h, w) = (img.height(), img.width());
    let mut out = format!("#?RADIANCE\nFORMAT={FORMAT}\n\n-Y {h} +X {w}\n").into_bytes();
    let mut line = Vec::with_capacity(4 * w);
    for y in 0..h {
        line.clear();
        for x in 0..w {
            let p = img.pixel(y, x);
            line.extend_from_slice(&encode_pixel([p[0], p[1], p[2]])?);
        }
        out.extend_from_slice(&line);
    }
    Ok(out)
}

fn rle_width_ok(w: usize) -> bool {
    (8..=0x7fff).contains(&w)
}

fn read_line(bytes: &[u8], pos: usize) -> Result<(&str, usize)> {
    let end = bytes[pos..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|i| pos + i)
        .ok_or_else(|| Error::parse(pos, "unterminated RGBE header line"))?;
    let text = std::str::from_utf8(&bytes[pos..end]).map_err(|_| Error::parse(pos, "RGBE header is not text"))?;
    Ok((text, end + 1))
}

pub fn decode(bytes: &[u8]) -> Result<LinearImage> {
    let (first, mut pos) = read_line(bytes, 0)?;
    if first != "#?RADIANCE" && first != "#?RGBE" {
        return Err(Error::parse(0, format!("bad RGBE signature {first:?}")));
    }
    loop {
        let at = pos;
        if pos >= bytes.len() {
            return Err(Error::parse(pos, "RGBE header ends without a blank line"));
        }
        let (line, next) = read_line(bytes, pos)?;
        pos = next;
        if line.is_empty() {
            break;
        }
        if let Some(fmt) = line.strip_prefix("FORMAT=") {
            if fmt.trim() != FORMAT {
                return Err(Error::parse(at, format!("unsupported RGBE format {fmt:?}")));
            }
        }
    }
    let at = pos;
    let (res, next) = read_line(bytes, pos)?;
    pos = next;
    let parts: Vec<&str> = res.split_whitespace().collect();
    let (h, w) = match parts[..] {
        ["-Y", h, "+X", w] => (
            h.parse::<usize>().map_err(|_| Error::parse(at, format!("bad height {h:?}")))?,
            w.parse::<usize>().map_err(|_| Error::parse(at, format!("bad width {w:?}")))?,
        ),
        _ => return Err(Error::parse(at, format!("unsupported resolution line {res:?}"))),
    };
    if h == 0 || w == 0 {
        return Err(Error::parse(at, "RGBE dimensions must be positive"));
    }
    let mut data = Vec::with_capacity(3 * h * w);
    let mut line = vec![0u8; 4 * w];
    for _ in 0..h {
        pos = read_scanline(bytes, pos, w, &mut line)?;
        for px in line.chunks_exact(4) {
            data.extend(decode_pixel([px[0], px[1], px[2], px[3]]));
        }
    }
    LinearImage::new(h, w, 3, data)
}

fn read_scanline(bytes: &[u8], mut pos: usize, w: usize, line: &mut [u8]) -> Result<usize> {
    let truncated = |at: usize| Error::parse(at, "truncated RGBE scanline");
    let head = bytes.get(pos..pos + 4).ok_or_else(|| truncated(bytes.len()))?;
    if !(rle_width_ok(w) && head[0] == 2 && head[1] == 2 && head[2] & 0x80 == 0) {
        let flat = bytes.get(pos..pos + 4 * w).ok_or_else(|| truncated(bytes.len()))?;
        line.copy_from_slice(flat);
        return Ok(pos + 4 * w);
    }
    let encoded_w = (usize::from(head[2]) << 8) | usize::from(head[3]);
    if encoded_w != w {
        return Err(Error::parse(pos, format!("RLE scanline width {encoded_w} does not match {w}")));
    }
    pos += 4;
    for c in 0..4 {
        let mut x = 0;
        while x < w {
            let at = pos;
            let count = *bytes.get(pos).ok_or_else(|| truncated(pos))?;
            pos += 1;
            if count > 128 {
                let n = usize::from(count - 128);
                let v = *bytes.get(pos).ok_or_else(|| truncated(pos))?;
                pos += 1;
                if x + n > w {
                    return Err(Error::parse(at, "RLE run overflows the scanline"));
                }
                for k in 0..n {
                    line[4 * (x + k) + c] = v;
                }
                x += n;
            } else {
                let n = usize::from(count);
                if n == 0 || x + n > w {
                    return Err(Error::parse(at, "bad RLE literal count"));
                }
                let src = bytes.get(pos..pos + n).ok_or_else(|| truncated(bytes.len()))?;
                for (k, &v) in src.iter().enumerate() {
                    line[4 * (x + k) + c] = v;
                }
                pos += n;
                x += n;
            }
        }
    }
    Ok(pos)
}

pub fn write(path: &Path, img: &LinearImage) -> Result<()> {
    std::fs::write(path, encode(img)?)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<LinearImage> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_examples() {
        assert_eq!(decode_pixel([128, 128, 128, 129]), [1.0, 1.0, 1.0]);
        assert_eq!(decode_pixel([0, 0, 0, 0]), [0.0; 3]);
        assert_eq!(decode_pixel([200, 7, 9, 0]), [0.0; 3]);
        assert_eq!(decode_pixel([64, 0, 255, 130]), [1.0, 0.0, 255.0 / 64.0]);
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode_pixel([1.0, 1.0, 1.0]).unwrap(), [128, 128, 128, 129]);
        assert_eq!(encode_pixel([0.0; 3]).unwrap(), [0; 4]);
        assert_eq!(encode_pixel([0.5, 0.25, 0.0]).unwrap(), [128, 64, 0, 128]);
        // largest mantissa would round to 256: capped instead
        let p = encode_pixel([0.9999, 0.0, 0.0]).unwrap();
        assert_eq!(p, [255, 0, 0, 128]);
        assert!(encode_pixel([f64::NAN, 0.0, 0.0]).is_err());
        assert!(encode_pixel([1e300, 0.0, 0.0]).is_err());
        assert_eq!(encode_pixel([1e-60, 0.0, 0.0]).unwrap(), [0; 4]);
    }

    #[test]
    fn header_and_flat_layout() {
        let img = LinearImage::new(1, 2, 3, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let bytes = encode(&img).unwrap();
        let header = b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y 1 +X 2\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[128, 128, 128, 129, 0, 0, 0, 0]);
        assert_eq!(decode(&bytes).unwrap(), img);
    }

    #[test]
    fn reads_rle_scanlines() {
        let w = 10;
        let mut bytes = format!("#?RADIANCE\nFORMAT=32-bit_rle_rgbe\nEXPOSURE=1.0\n\n-Y 1 +X {w}\n").into_bytes();
        bytes.extend_from_slice(&[2, 2, 0, w as u8]);
        // r: run of 10 x 128; g: 10 literals; b: run 6 + literal 4; e: run of 10 x 129
        bytes.extend_from_slice(&[128 + 10, 128]);
        bytes.push(10);
        bytes.extend((0..10).map(|k| k * 10));
        bytes.extend_from_slice(&[128 + 6, 64, 4, 1, 2, 3, 4]);
        bytes.extend_from_slice(&[128 + 10, 129]);
        let img = decode(&bytes).unwrap();
        assert_eq!(img.get(0, 0, 0), 1.0);
        assert_eq!(img.get(0, 3, 1), 30.0 / 128.0);
        assert_eq!(img.get(0, 5, 2), 0.5);
        assert_eq!(img.get(0, 9, 2), 4.0 / 128.0);
    }

    proptest::proptest! {
        #[test]
        fn encoded_pixels_are_never_rle_markers(r in 0.0f64..1e6, g in 0.0f64..1e6, b in 0.0f64..1e6, k in -40i32..40) {
            let f = 2f64.powi(k);
            let p = encode_pixel([r * f, g * f, b * f]).unwrap();
            proptest::prop_assert!(p == [0; 4] || p[0] >= 128 || p[1] >= 128 || p[2] >= 128);
        }
    }

    #[test]
    fn header_errors() {
        let bad = |b: &[u8]| matches!(decode(b), Err(Error::Parse { .. }));
        assert!(bad(b"P6\n"));
        assert!(bad(b"#?RADIANCE\nFORMAT=32-bit_rle_xyze\n\n-Y 1 +X 1\n\0\0\0\0"));
        assert!(bad(b"#?RADIANCE\n\n+Y 1 +X 1\n\0\0\0\0"));
        assert!(bad(b"#?RADIANCE\n\n-Y 1 +X q\n\0\0\0\0"));
        assert!(bad(b"#?RADIANCE\n\n-Y 2 +X 1\n\0\0\0\0"));
        assert!(bad(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n"));
        assert!(!bad(b"#?RADIANCE\n\n-Y 1 +X 1\n\0\0\0\0"));
    }
}
