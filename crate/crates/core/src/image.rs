//! Dense per-pixel maps: GOIF feature maps, binary masks and 8-bit PNM output.

use std::path::Path;

use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};

pub const FEATURE_MAP_MAGIC: &[u8; 4] = b"GOIF";

/// `H × W × D` map stored row-major as (row, column, channel).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, dim: usize) -> Self {
        Self {
            height,
            width,
            dim,
            data: vec![0.0; height * width * dim],
        }
    }

    pub fn from_vec(height: usize, width: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * dim {
            return Err(Error::Shape(format!(
                "{} values do not fill a {height}x{width}x{dim} map",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let start = (row * self.width + col) * self.dim;
        &mut self.data[start..start + self.dim]
    }

    /// Pixel by flat row-major index.
    pub fn at(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn at_mut(&mut self, index: usize) -> &mut [f32] {
        &mut self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(FEATURE_MAP_MAGIC);
        w.u32(self.height as u32);
        w.u32(self.width as u32);
        w.u32(self.dim as u32);
        w.f32s(&self.data);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new("GOIF", bytes);
        r.header(FEATURE_MAP_MAGIC)?;
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let n = height as u64 * width as u64 * dim as u64;
        r.expect_remaining(n * 4)?;
        let data = r.f32_vec(n as usize)?;
        r.finish()?;
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }
}

pub fn load_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap> {
    FeatureMap::from_bytes(&binio::read_file(path.as_ref())?)
}

pub fn save_feature_map(map: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    binio::write_file(path.as_ref(), &map.to_bytes())
}

/// Binary `H × W` mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{} values do not fill a {height}x{width} mask",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn same_shape(&self, other: &Mask) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::Shape(format!(
                "mask {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// P5 PGM with 255 for set pixels.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&b| if b { 255u8 } else { 0 }));
        out
    }

    /// Any nonzero gray value counts as set.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let gray = parse_pnm(bytes, b"P5", 1)?;
        Ok(Self {
            height: gray.height,
            width: gray.width,
            data: gray.data.iter().map(|&v| v != 0).collect(),
        })
    }
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    Mask::from_pgm(&binio::read_file(path.as_ref())?)
}

pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    binio::write_file(path.as_ref(), &mask.to_pgm())
}

/// 8-bit PNM payload (gray or RGB) after header parsing.
pub struct Pnm {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

fn parse_pnm(bytes: &[u8], magic: &[u8; 2], channels: usize) -> Result<Pnm> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Invalid(format!(
            "expected {} image",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Invalid("malformed PNM header".into()))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Invalid(format!("unsupported PNM maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width * height * channels;
    if bytes.len() < pos + n {
        return Err(Error::Truncated {
            container: "PNM".into(),
            needed: (pos + n) as u64,
            available: bytes.len() as u64,
        });
    }
    Ok(Pnm {
        height,
        width,
        data: bytes[pos..pos + n].to_vec(),
    })
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// P6 PPM from an `H × W × 3` buffer of values in `[0, 1]`.
pub fn rgb_to_ppm(width: usize, height: usize, rgb: &[f32]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(rgb.iter().map(|&v| to_u8(v)));
    out
}

/// P5 PGM from an `H × W` buffer of values in `[0, 1]`.
pub fn gray_to_pgm(width: usize, height: usize, gray: &[f32]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(gray.iter().map(|&v| to_u8(v)));
    out
}

pub fn parse_ppm(bytes: &[u8]) -> Result<Pnm> {
    parse_pnm(bytes, b"P6", 3)
}
