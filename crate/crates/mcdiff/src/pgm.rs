//! 16-bit binary PGM (P5) previews, min-max scaled to `0..=65535`.

use std::fs;
use std::path::Path;

use mcdiff_core::Image2D;

use crate::error::{Error, FormatError, Result};

/// A constant image maps to all zeros.
pub fn to_pgm(img: &Image2D) -> Vec<u8> {
    let (lo, hi) = (img.min(), img.max());
    let range = hi - lo;
    let mut out = format!("P5\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    for &v in img.values() {
        let level = if range > 0.0 {
            ((v - lo) / range * 65535.0).round() as u16
        } else {
            0
        };
        out.extend_from_slice(&level.to_be_bytes());
    }
    out
}

pub fn export_pgm(img: &Image2D, path: &Path) -> Result<()> {
    fs::write(path, to_pgm(img)).map_err(|e| Error::io(path, e))
}

/// Parses a 16-bit P5 file into its width, height and samples.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>), FormatError> {
    let bad = |m: &str| FormatError::Pgm(m.to_string());
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
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    if fields[0] != "P5" || fields[3] != "65535" {
        return Err(bad("expected a 16-bit P5 header"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad dimension"));
    let (w, h) = (parse(fields[1])?, parse(fields[2])?);
    let data = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
    if data.len() != 2 * w * h {
        return Err(bad("raster length does not match dimensions"));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok((w, h, samples))
}
