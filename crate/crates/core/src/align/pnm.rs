//! Minimal binary PGM (P5) / PPM (P6) reader and writer.
//!
//! Camera snapshots and standard views are exchanged as 8-bit PNM files:
//! the format is header-only plus raw bytes, which keeps fixtures
//! diffable and avoids an image-codec dependency in the perception path.

use super::{AlignError, GrayImage, RgbImage};
use std::io::{BufRead, Write};

fn read_header_token(r: &mut impl BufRead) -> Result<String, AlignError> {
    let mut tok = String::new();
    let mut in_comment = false;
    loop {
        let mut byte = [0u8; 1];
        let n = r.read(&mut byte)?;
        if n == 0 {
            if tok.is_empty() {
                return Err(AlignError::BadFormat("unexpected end of header".into()));
            }
            return Ok(tok);
        }
        let c = byte[0] as char;
        if in_comment {
            in_comment = c != '\n';
            continue;
        }
        if c == '#' {
            in_comment = true;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(c);
    }
}

fn read_dims(r: &mut impl BufRead, magic: &str) -> Result<(usize, usize), AlignError> {
    let got = read_header_token(r)?;
    if got != magic {
        return Err(AlignError::BadFormat(format!("expected {magic}, found {got:?}")));
    }
    let width: usize = read_header_token(r)?
        .parse()
        .map_err(|_| AlignError::BadFormat("bad width".into()))?;
    let height: usize = read_header_token(r)?
        .parse()
        .map_err(|_| AlignError::BadFormat("bad height".into()))?;
    let maxval: u32 = read_header_token(r)?
        .parse()
        .map_err(|_| AlignError::BadFormat("bad maxval".into()))?;
    if maxval != 255 {
        return Err(AlignError::BadFormat(format!("only maxval 255 supported, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(AlignError::EmptyImage);
    }
    Ok((width, height))
}

/// Reads an 8-bit binary PGM image, scaling intensities to `[0, 1]`.
pub fn read_pgm(mut r: impl BufRead) -> Result<GrayImage, AlignError> {
    let (width, height) = read_dims(&mut r, "P5")?;
    let mut raw = vec![0u8; width * height];
    r.read_exact(&mut raw)?;
    Ok(GrayImage {
        width,
        height,
        data: raw.iter().map(|&b| b as f64 / 255.0).collect(),
    })
}

/// Writes an 8-bit binary PGM image; intensities are clamped to `[0, 1]`
/// and rounded to the nearest of 256 levels.
pub fn write_pgm(img: &GrayImage, mut w: impl Write) -> Result<(), AlignError> {
    if img.width == 0 || img.height == 0 {
        return Err(AlignError::EmptyImage);
    }
    write!(w, "P5\n{} {}\n255\n", img.width, img.height)?;
    let raw: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    w.write_all(&raw)?;
    Ok(())
}

/// Reads an 8-bit binary PPM image, scaling channels to `[0, 1]`.
pub fn read_ppm(mut r: impl BufRead) -> Result<RgbImage, AlignError> {
    let (width, height) = read_dims(&mut r, "P6")?;
    let mut raw = vec![0u8; 3 * width * height];
    r.read_exact(&mut raw)?;
    Ok(RgbImage {
        width,
        height,
        data: raw.iter().map(|&b| b as f64 / 255.0).collect(),
    })
}

/// Writes an 8-bit binary PPM image.
pub fn write_ppm(img: &RgbImage, mut w: impl Write) -> Result<(), AlignError> {
    if img.width == 0 || img.height == 0 {
        return Err(AlignError::EmptyImage);
    }
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    let raw: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    w.write_all(&raw)?;
    Ok(())
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
