//! Import of vanilla 3DGS point files (ASCII or binary little-endian PLY).
//!
//! Activations are applied once here: `sigmoid` on opacity logits, `exp` on
//! log-scales, quaternion normalization and the degree-0 spherical harmonic
//! evaluation for color. Higher-order SH coefficients are ignored.

use std::path::Path;

use crate::binio;
use crate::error::{Error, Result};
use crate::scene::{Gaussian, Scene};

/// Degree-0 real spherical harmonic constant.
pub const SH_C0: f64 = 0.28209479177387814;

const REQUIRED: [&str; 14] = [
    "x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3", "scale_0", "scale_1", "scale_2",
    "opacity", "f_dc_0", "f_dc_1", "f_dc_2",
];

#[derive(Clone, Copy, Debug, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
}

#[derive(Clone, Copy, Debug)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            other => return Err(Error::Ply(format!("unknown property type {other:?}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => f64::from(b[0] as i8),
            Self::U8 => f64::from(b[0]),
            Self::I16 => f64::from(i16::from_le_bytes([b[0], b[1]])),
            Self::U16 => f64::from(u16::from_le_bytes([b[0], b[1]])),
            Self::I32 => f64::from(i32::from_le_bytes(b[..4].try_into().unwrap())),
            Self::U32 => f64::from(u32::from_le_bytes(b[..4].try_into().unwrap())),
            Self::F32 => f64::from(f32::from_le_bytes(b[..4].try_into().unwrap())),
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar { name: String, ty: ScalarType },
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::Ply("missing end_header".into()))?;
    let mut body_offset = end + END.len();
    // The header line ends with "\n" (or "\r\n").
    if bytes.get(body_offset) == Some(&b'\r') {
        body_offset += 1;
    }
    if bytes.get(body_offset) == Some(&b'\n') {
        body_offset += 1;
    }
    let text = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::Ply("header is not valid UTF-8".into()))?;
    let mut lines = text.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(Error::Ply("missing 'ply' magic line".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let mut toks = line.split_whitespace();
        match toks.next() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                format = Some(match toks.next() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLe,
                    other => {
                        return Err(Error::Ply(format!("unsupported format {other:?}")));
                    }
                });
            }
            Some("element") => {
                let name = toks
                    .next()
                    .ok_or_else(|| Error::Ply("element without name".into()))?;
                let count = toks
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::Ply(format!("bad count for element {name}")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::Ply("property before any element".into()))?;
                let first = toks
                    .next()
                    .ok_or_else(|| Error::Ply("empty property line".into()))?;
                let prop = if first == "list" {
                    let count = ScalarType::parse(toks.next().unwrap_or(""))?;
                    let item = ScalarType::parse(toks.next().unwrap_or(""))?;
                    Property::List { count, item }
                } else {
                    let ty = ScalarType::parse(first)?;
                    let name = toks
                        .next()
                        .ok_or_else(|| Error::Ply("property without name".into()))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                element.properties.push(prop);
            }
            Some(other) => return Err(Error::Ply(format!("unexpected header keyword {other:?}"))),
        }
    }
    Ok(Header {
        format: format.ok_or_else(|| Error::Ply("missing format line".into()))?,
        elements,
        body_offset,
    })
}

/// Reads every vertex of the file as a row of `f64` values, one per scalar
/// property, together with the property names.
fn read_vertices(bytes: &[u8]) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let header = parse_header(bytes)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::Ply("no vertex element".into()))?;
    let vertex = &header.elements[vertex_pos];
    let mut names = Vec::new();
    for p in &vertex.properties {
        match p {
            Property::Scalar { name, .. } => names.push(name.clone()),
            Property::List { .. } => {
                return Err(Error::Ply("list properties on vertices are not supported".into()));
            }
        }
    }
    let body = &bytes[header.body_offset..];
    let rows = match header.format {
        Format::Ascii => {
            let text = std::str::from_utf8(body)
                .map_err(|_| Error::Ply("ASCII body is not valid UTF-8".into()))?;
            let mut lines = text.lines().filter(|l| !l.trim().is_empty());
            for e in &header.elements[..vertex_pos] {
                for _ in 0..e.count {
                    lines
                        .next()
                        .ok_or_else(|| Error::Ply(format!("truncated element {}", e.name)))?;
                }
            }
            let mut rows = Vec::with_capacity(vertex.count);
            for i in 0..vertex.count {
                let line = lines
                    .next()
                    .ok_or_else(|| Error::Ply(format!("truncated vertex data at row {i}")))?;
                let row: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Ply(format!("unparsable value in vertex row {i}")))?;
                if row.len() != names.len() {
                    return Err(Error::Ply(format!(
                        "vertex row {i} has {} values, expected {}",
                        row.len(),
                        names.len()
                    )));
                }
                rows.push(row);
            }
            rows
        }
        Format::BinaryLe => {
            let mut pos = 0usize;
            for e in &header.elements[..vertex_pos] {
                for _ in 0..e.count {
                    for p in &e.properties {
                        pos += skip_binary(body, pos, p)?;
                    }
                }
            }
            let types: Vec<ScalarType> = vertex
                .properties
                .iter()
                .filter_map(|p| match p {
                    Property::Scalar { ty, .. } => Some(*ty),
                    Property::List { .. } => None,
                })
                .collect();
            let stride: usize = types.iter().map(|t| t.size()).sum();
            let needed = vertex
                .count
                .checked_mul(stride)
                .and_then(|n| n.checked_add(pos))
                .ok_or_else(|| Error::Ply("vertex count overflows".into()))?;
            if body.len() < needed {
                return Err(Error::Ply(format!(
                    "truncated binary body: need {needed} bytes, have {}",
                    body.len()
                )));
            }
            let mut rows = Vec::with_capacity(vertex.count);
            for _ in 0..vertex.count {
                let mut row = Vec::with_capacity(types.len());
                for ty in &types {
                    row.push(ty.read_le(&body[pos..]));
                    pos += ty.size();
                }
                rows.push(row);
            }
            rows
        }
    };
    Ok((names, rows))
}

fn skip_binary(body: &[u8], pos: usize, p: &Property) -> Result<usize> {
    match p {
        Property::Scalar { ty, .. } => Ok(ty.size()),
        Property::List { count, item } => {
            if body.len() < pos + count.size() {
                return Err(Error::Ply("truncated list property".into()));
            }
            let n = count.read_le(&body[pos..]) as usize;
            Ok(count.size() + n * item.size())
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Converts PLY bytes into a scene with zero-initialized features.
pub fn scene_from_ply_bytes(bytes: &[u8], feature_dim: usize) -> Result<Scene> {
    let (names, rows) = read_vertices(bytes)?;
    let mut columns = [0usize; REQUIRED.len()];
    for (slot, req) in columns.iter_mut().zip(REQUIRED) {
        *slot = names
            .iter()
            .position(|n| n == req)
            .ok_or_else(|| Error::Ply(format!("missing vertex property {req:?}")))?;
    }
    let mut scene = Scene::new(feature_dim);
    for (index, row) in rows.iter().enumerate() {
        let v: Vec<f64> = columns.iter().map(|&c| row[c]).collect();
        if v.iter().any(|x| x.is_nan()) {
            return Err(Error::InvalidRecord {
                index,
                reason: "NaN property value".into(),
            });
        }
        let q = [v[3], v[4], v[5], v[6]];
        let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rotation = if qn > 0.0 && qn.is_finite() {
            q.map(|x| (x / qn) as f32)
        } else {
            [1.0, 0.0, 0.0, 0.0]
        };
        // Clamp log-scales so exp stays a positive finite f32.
        let scale = [v[7], v[8], v[9]].map(|s| (s.clamp(-80.0, 80.0).exp() as f32).max(f32::MIN_POSITIVE));
        let rgb = [v[11], v[12], v[13]].map(|dc| (0.5 + SH_C0 * dc).clamp(0.0, 1.0) as f32);
        let clamp_finite = |x: f64| x.clamp(f32::MIN as f64, f32::MAX as f64) as f32;
        let g = Gaussian {
            centroid: [clamp_finite(v[0]), clamp_finite(v[1]), clamp_finite(v[2])],
            rotation,
            scale,
            opacity: sigmoid(v[10]) as f32,
            rgb,
            feature: vec![0.0; feature_dim],
        };
        scene.push(g).map_err(|e| match e {
            Error::InvalidRecord { reason, .. } => Error::InvalidRecord { index, reason },
            other => other,
        })?;
    }
    Ok(scene)
}

pub fn import_ply(path: impl AsRef<Path>, feature_dim: usize) -> Result<Scene> {
    scene_from_ply_bytes(&binio::read_file(path.as_ref())?, feature_dim)
}
