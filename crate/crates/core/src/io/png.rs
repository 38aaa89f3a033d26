//! 8-bit PNG storage for LDR images, backed by the `png` crate.

use std::io::{BufRead, Cursor, Seek};
use std::path::Path;

use png::{BitDepth, ColorType, Decoder, Encoder};

use crate::error::{Error, Result};
use crate::image::LdrImage;

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Unsupported(format!("png: {e}"))
}

/// Encodes an 8-bit `LdrImage` as RGB.
pub fn encode(img: &LdrImage) -> Result<Vec<u8>> {
    if img.bit_depth() != 8 {
        return Err(Error::Unsupported(format!("PNG output needs 8-bit codes, got {}-bit", img.bit_depth())));
    }
    let mut out = Vec::new();
    {
        let mut enc = Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(ColorType::Rgb);
        enc.set_depth(BitDepth::Eight);
        let mut writer = enc.write_header().map_err(png_err)?;
        let bytes: Vec<u8> = img.data().iter().map(|&c| c as u8).collect();
        writer.write_image_data(&bytes).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

/// Decodes 8-bit RGB or grayscale PNGs; gray is replicated into three channels.
pub fn decode_from<R: BufRead + Seek>(r: R) -> Result<LdrImage> {
    let mut reader = Decoder::new(r).read_info().map_err(png_err)?;
    let info = reader.info();
    let (w, h) = (info.width as usize, info.height as usize);
    let (color, depth) = (info.color_type, info.bit_depth);
    if depth != BitDepth::Eight {
        return Err(Error::Unsupported(format!("PNG bit depth {depth:?}; only 8-bit is accepted")));
    }
    if !matches!(color, ColorType::Rgb | ColorType::Grayscale) {
        return Err(Error::Unsupported(format!("PNG color type {color:?}; only RGB and gray are accepted")));
    }
    let size = reader.output_buffer_size().ok_or_else(|| png_err("image too large"))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(png_err)?;
    let buf = &buf[..frame.buffer_size()];
    let data: Vec<u16> = match color {
        ColorType::Grayscale => buf.iter().flat_map(|&g| [u16::from(g); 3]).collect(),
        _ => buf.iter().map(|&c| u16::from(c)).collect(),
    };
    LdrImage::new(h, w, 8, data)
}

pub fn decode(bytes: &[u8]) -> Result<LdrImage> {
    decode_from(Cursor::new(bytes))
}

pub fn write(path: &Path, img: &LdrImage) -> Result<()> {
    std::fs::write(path, encode(img)?)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<LdrImage> {
    decode(&std::fs::read(path)?)
}
