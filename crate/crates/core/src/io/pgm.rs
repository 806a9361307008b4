use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit grayscale image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Quantizes `[0, 1]` values (clamped) to bytes.
    pub fn from_unit(width: usize, height: usize, values: &[f32]) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DataLength {
                len: values.len(),
                shape: vec![height, width],
            });
        }
        let pixels = values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        Ok(GrayImage { width, height, pixels })
    }
}

/// Lays out equally sized square images in a grid with `cols` columns,
/// row-major. Missing cells stay black.
pub fn tile(images: &[Vec<f32>], side: usize, cols: usize) -> Result<(usize, usize, Vec<f32>)> {
    let cols = cols.max(1);
    let rows = images.len().div_ceil(cols).max(1);
    let (w, h) = (cols * side, rows * side);
    let mut out = vec![0.0; w * h];
    for (i, img) in images.iter().enumerate() {
        if img.len() != side * side {
            return Err(Error::DataLength {
                len: img.len(),
                shape: vec![side, side],
            });
        }
        let (r, c) = (i / cols, i % cols);
        for y in 0..side {
            let dst = (r * side + y) * w + c * side;
            out[dst..dst + side].copy_from_slice(&img[y * side..(y + 1) * side]);
        }
    }
    Ok((w, h, out))
}

/// Writes binary PGM (P5, maxval 255).
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    let img = GrayImage::from_unit(width, height, values)?;
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(&img.pixels);
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if bytes.get(pos) == Some(&b'#') {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::Format(format!("expected P5, found {}", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM field `{s}`")));
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    pos += 1;
    let expected = pos + width * height;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            what: "pgm payload",
            expected,
            actual: bytes.len(),
        });
    }
    Ok(GrayImage {
        width,
        height,
        pixels: bytes[pos..].to_vec(),
    })
}
