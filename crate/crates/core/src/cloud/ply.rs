//! Minimal PLY 1.0 reader/writer for colored vertex clouds.
//!
//! Reads `ascii` and `binary_little_endian` files whose `vertex` element has
//! `x`, `y`, `z` (any numeric type) and `red`, `green`, `blue`. Other
//! elements and properties (including list properties) are skipped. Writes
//! binary little-endian with float positions and uchar colors.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{rgb_to_yuv, yuv_to_rgb, PointCloud, DEFAULT_BIT_DEPTH, MAX_BIT_DEPTH};
use crate::error::{Error, Result};
use crate::sparse::Coord;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::MalformedPly(format!("unknown scalar type `{other}`"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => f64::from(b[0] as i8),
            Scalar::U8 => f64::from(b[0]),
            Scalar::I16 => f64::from(i16::from_le_bytes([b[0], b[1]])),
            Scalar::U16 => f64::from(u16::from_le_bytes([b[0], b[1]])),
            Scalar::I32 => f64::from(i32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::U32 => f64::from(u32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::F32 => f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedPly(msg.into())
}

fn read_header<R: BufRead>(r: &mut R) -> Result<Header> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != "ply" {
        return Err(malformed("missing `ply` magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(malformed("header not terminated by end_header"));
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                format = Some(match tok.next() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLe,
                    Some(other) => return Err(malformed(format!("unsupported format `{other}`"))),
                    None => return Err(malformed("empty format line")),
                });
            }
            Some("element") => {
                let name = tok.next().ok_or_else(|| malformed("element without name"))?;
                let count =
                    tok.next().and_then(|c| c.parse().ok()).ok_or_else(|| malformed("element without count"))?;
                elements.push(Element { name: name.to_string(), count, props: Vec::new() });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| malformed("property before element"))?;
                let first = tok.next().ok_or_else(|| malformed("empty property"))?;
                if first == "list" {
                    let count = Scalar::parse(tok.next().ok_or_else(|| malformed("list count"))?)?;
                    let item = Scalar::parse(tok.next().ok_or_else(|| malformed("list item"))?)?;
                    el.props.push(Property::List { count, item });
                } else {
                    let ty = Scalar::parse(first)?;
                    let name = tok.next().ok_or_else(|| malformed("property without name"))?;
                    el.props.push(Property::Scalar { name: name.to_string(), ty });
                }
            }
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => return Err(malformed(format!("unexpected header keyword `{other}`"))),
        }
    }
    let format = format.ok_or_else(|| malformed("missing format line"))?;
    Ok(Header { format, elements })
}

/// Column indices of the properties we need inside the vertex element.
struct VertexLayout {
    xyz: [usize; 3],
    rgb: [usize; 3],
}

fn vertex_layout(el: &Element) -> Result<VertexLayout> {
    let find = |want: &str| {
        el.props
            .iter()
            .position(|p| matches!(p, Property::Scalar { name, .. } if name == want))
            .ok_or_else(|| malformed(format!("vertex element lacks property `{want}`")))
    };
    Ok(VertexLayout { xyz: [find("x")?, find("y")?, find("z")?], rgb: [find("red")?, find("green")?, find("blue")?] })
}

/// Reads all property values of one record; list properties yield `NaN`.
fn read_binary_record<R: Read>(r: &mut R, el: &Element, out: &mut Vec<f64>) -> Result<()> {
    out.clear();
    let mut buf = [0u8; 8];
    for p in &el.props {
        match p {
            Property::Scalar { ty, .. } => {
                r.read_exact(&mut buf[..ty.size()]).map_err(truncated)?;
                out.push(ty.read_le(&buf));
            }
            Property::List { count, item } => {
                r.read_exact(&mut buf[..count.size()]).map_err(truncated)?;
                let n = count.read_le(&buf);
                if !(0.0..=1e9).contains(&n) {
                    return Err(malformed("bad list length"));
                }
                let mut skip = vec![0u8; n as usize * item.size()];
                r.read_exact(&mut skip).map_err(truncated)?;
                out.push(f64::NAN);
            }
        }
    }
    Ok(())
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        malformed("body shorter than header declares")
    } else {
        Error::Io(e)
    }
}

fn read_ascii_record<R: BufRead>(r: &mut R, el: &Element, out: &mut Vec<f64>) -> Result<()> {
    out.clear();
    let mut line = String::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(malformed("body shorter than header declares"));
        }
        if !line.trim().is_empty() {
            break;
        }
    }
    let mut tok = line.split_whitespace();
    let mut next = || -> Result<f64> {
        tok.next()
            .ok_or_else(|| malformed("record has too few values"))?
            .parse::<f64>()
            .map_err(|e| malformed(format!("bad number: {e}")))
    };
    for p in &el.props {
        match p {
            Property::Scalar { .. } => out.push(next()?),
            Property::List { .. } => {
                let n = next()?;
                for _ in 0..n as usize {
                    next()?;
                }
                out.push(f64::NAN);
            }
        }
    }
    Ok(())
}

/// Parses a PLY stream into a [`PointCloud`], converting colors to YUV.
///
/// Coordinates are rounded to the nearest integer. The bit depth is the
/// smallest depth (at least 8) that holds every coordinate.
pub fn read_ply<R: BufRead>(mut r: R) -> Result<PointCloud> {
    let header = read_header(&mut r)?;
    let mut positions: Vec<Coord> = Vec::new();
    let mut colors: Vec<[f64; 3]> = Vec::new();
    let mut saw_vertex = false;
    let mut record = Vec::new();

    for el in &header.elements {
        let layout = if el.name == "vertex" {
            saw_vertex = true;
            Some(vertex_layout(el)?)
        } else {
            None
        };
        for _ in 0..el.count {
            match header.format {
                Format::Ascii => read_ascii_record(&mut r, el, &mut record)?,
                Format::BinaryLe => read_binary_record(&mut r, el, &mut record)?,
            }
            if let Some(l) = &layout {
                let mut p = [0i32; 3];
                for k in 0..3 {
                    let v = record[l.xyz[k]].round();
                    if !(0.0..=f64::from(u16::MAX)).contains(&v) {
                        return Err(malformed(format!("coordinate {v} outside [0, 65535]")));
                    }
                    p[k] = v as i32;
                }
                positions.push(p);
                colors.push(rgb_to_yuv([record[l.rgb[0]], record[l.rgb[1]], record[l.rgb[2]]]));
            }
        }
    }
    if !saw_vertex {
        return Err(malformed("no vertex element"));
    }

    let max = positions.iter().flat_map(|p| p.iter().copied()).max().unwrap_or(0);
    let mut bit_depth = DEFAULT_BIT_DEPTH;
    while bit_depth < MAX_BIT_DEPTH && i64::from(max) >= (1i64 << bit_depth) {
        bit_depth += 1;
    }
    PointCloud::new(positions, colors, bit_depth)
}

/// Loads a PLY file.
pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let f = File::open(path)?;
    read_ply(BufReader::new(f))
}

/// Writes the cloud as binary little-endian PLY with float xyz and uchar RGB.
pub fn write_ply<W: Write>(pc: &PointCloud, mut w: W) -> Result<()> {
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\ncomment bit_depth {}\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        pc.bit_depth(),
        pc.len()
    )?;
    for (p, c) in pc.positions().iter().zip(pc.colors()) {
        for v in p {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        let rgb = yuv_to_rgb(*c).map(|v| v.clamp(0.0, 255.0).round() as u8);
        w.write_all(&rgb)?;
    }
    w.flush()?;
    Ok(())
}

/// Saves the cloud to `path` (see [`write_ply`]).
pub fn save_ply(pc: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path)?;
    write_ply(pc, BufWriter::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(bytes: &[u8]) -> Result<PointCloud> {
        read_ply(bytes)
    }

    #[test]
    fn ascii_single_white_point() {
        let src = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n\
property float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n\
0 0 0 255 255 255\n";
        let pc = parse(src).unwrap();
        assert_eq!(pc.len(), 1);
        let c = pc.colors()[0];
        assert!((c[0] - 255.0).abs() < 1e-9);
        assert!((c[1] - 128.0).abs() < 1e-9);
        assert!((c[2] - 128.0).abs() < 1e-9);
    }

    #[test]
    fn ascii_duplicates_are_averaged() {
        // Gray levels 100 and 200 have Y = 100 and 200 exactly.
        let src = b"ply\nformat ascii 1.0\nelement vertex 2\nproperty int x\nproperty int y\n\
property int z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n\
3 4 5 100 100 100\n3 4 5 200 200 200\n";
        let pc = parse(src).unwrap();
        assert_eq!(pc.len(), 1);
        assert!((pc.colors()[0][0] - 150.0).abs() < 1e-9);
    }

    #[test]
    fn skips_faces_and_extra_properties() {
        let src = b"ply\nformat ascii 1.0\ncomment hi\nelement vertex 2\nproperty float x\n\
property float y\nproperty float z\nproperty float nx\nproperty uchar red\nproperty uchar green\n\
property uchar blue\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n\
1 2 3 0.5 10 20 30\n4 5 6 0.1 40 50 60\n3 0 1 1\n";
        let pc = parse(src).unwrap();
        assert_eq!(pc.positions(), &[[1, 2, 3], [4, 5, 6]]);
    }

    #[test]
    fn missing_color_is_malformed() {
        let src = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n\
property float z\nend_header\n0 0 0\n";
        assert!(matches!(parse(src), Err(Error::MalformedPly(_))));
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(matches!(parse(b"plx\n"), Err(Error::MalformedPly(_))));
        let src = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\n\
property float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\n\
end_header\n\x00\x00";
        assert!(matches!(parse(src), Err(Error::MalformedPly(_))));
    }

    #[test]
    fn empty_cloud_round_trip() {
        let mut buf = Vec::new();
        write_ply(&PointCloud::empty(8), &mut buf).unwrap();
        let text = String::from_utf8_lossy(&buf);
        assert!(text.contains("element vertex 0"));
        let back = parse(&buf).unwrap();
        assert!(back.is_empty());
    }
}
