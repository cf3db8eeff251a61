//! Minimal binary PGM (P5, 8-bit) reader and writer, used for ground-truth
//! masks and normalized score map exports.

use std::path::Path;

use crate::{CfaError, Result};

/// An 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub maxval: u8,
    pub pixels: Vec<u8>,
}

pub fn encode(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn write(path: &Path, img: &GrayImage) -> Result<()> {
    std::fs::write(path, encode(img)).map_err(|e| CfaError::io(path, e))
}

fn bad(path: &Path, reason: impl Into<String>) -> CfaError {
    CfaError::Mask {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad(path, "truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad(path, "bad header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad(path, format!("unsupported PGM kind {:?}", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad(path, format!("bad number {s:?}")));
    let width = parse(fields[1])?;
    let height = parse(fields[2])?;
    let maxval = parse(fields[3])?;
    if maxval == 0 || maxval > 255 {
        return Err(bad(path, format!("maxval {maxval} is not 8-bit")));
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    let n = width * height;
    if bytes.len() < pos + n {
        return Err(bad(path, "truncated raster"));
    }
    Ok(GrayImage {
        height,
        width,
        maxval: maxval as u8,
        pixels: bytes[pos..pos + n].to_vec(),
    })
}

pub fn read(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| CfaError::io(path, e))?;
    decode(&bytes, path)
}

/// Binary ground-truth mask with values in `{0, 1}`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn positives(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }
}

/// Reads a mask stored as P5 PGM. Pixels must be either 0 or the file's
/// maxval; they map to 0 and 1.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = read(path)?;
    let mut data = Vec::with_capacity(img.pixels.len());
    for &p in &img.pixels {
        data.push(if p == 0 {
            0
        } else if p == img.maxval {
            1
        } else {
            return Err(bad(path, format!("pixel value {p} is neither 0 nor {}", img.maxval)));
        });
    }
    Ok(Mask {
        height: img.height,
        width: img.width,
        data,
    })
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    write(
        path,
        &GrayImage {
            height: mask.height,
            width: mask.width,
            maxval: 255,
            pixels: mask.data.iter().map(|&v| if v == 0 { 0 } else { 255 }).collect(),
        },
    )
}
