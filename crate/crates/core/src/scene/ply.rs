//! Minimal PLY reader/writer: ascii and binary little-endian, vertex
//! positions with optional colors and normals, optional triangle faces.

use std::io::Write;

use super::{Point3, Scene, DEFAULT_COLOR};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
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
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

fn parse_err(location: String, message: impl Into<String>) -> Error {
    Error::Parse {
        location,
        message: message.into(),
    }
}

struct Header {
    encoding: PlyEncoding,
    elements: Vec<Element>,
    /// Byte offset of the first body byte.
    body_start: usize,
    /// Line number (1-based) of the first body line.
    body_line: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_magic = false;

    loop {
        if pos >= bytes.len() {
            return Err(parse_err(
                format!("line {}", line_no + 1),
                "unexpected end of file: missing `end_header`",
            ));
        }
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map_or(bytes.len(), |e| pos + e);
        let raw = &bytes[pos..end];
        pos = (end + 1).min(bytes.len().max(end + 1));
        line_no += 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| parse_err(format!("line {line_no}"), "header is not valid utf-8"))?
            .trim_end_matches('\r')
            .trim();
        let loc = format!("line {line_no}");
        if !saw_magic {
            if line != "ply" {
                return Err(parse_err(loc, "missing `ply` magic"));
            }
            saw_magic = true;
            continue;
        }
        let mut toks = line.split_whitespace();
        match toks.next() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                encoding = Some(match toks.next() {
                    Some("ascii") => PlyEncoding::Ascii,
                    Some("binary_little_endian") => PlyEncoding::BinaryLittleEndian,
                    Some(other) => {
                        return Err(parse_err(loc, format!("unsupported format `{other}`")))
                    }
                    None => return Err(parse_err(loc, "format line without encoding")),
                });
            }
            Some("element") => {
                let name = toks
                    .next()
                    .ok_or_else(|| parse_err(loc.clone(), "element without name"))?;
                let count = toks
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| parse_err(loc.clone(), "element without valid count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(loc.clone(), "property before any element"))?;
                let rest: Vec<&str> = toks.collect();
                let prop = match rest.as_slice() {
                    ["list", count, item, name] => Property::List {
                        name: name.to_string(),
                        count: Scalar::parse(count).ok_or_else(|| {
                            parse_err(loc.clone(), format!("unknown type `{count}`"))
                        })?,
                        item: Scalar::parse(item).ok_or_else(|| {
                            parse_err(loc.clone(), format!("unknown type `{item}`"))
                        })?,
                    },
                    [ty, name] => Property::Scalar {
                        name: name.to_string(),
                        ty: Scalar::parse(ty).ok_or_else(|| {
                            parse_err(loc.clone(), format!("unknown type `{ty}`"))
                        })?,
                    },
                    _ => return Err(parse_err(loc, "malformed property line")),
                };
                elem.properties.push(prop);
            }
            Some("end_header") => {
                let encoding =
                    encoding.ok_or_else(|| parse_err(loc, "header has no `format` line"))?;
                return Ok(Header {
                    encoding,
                    elements,
                    body_start: pos,
                    body_line: line_no + 1,
                });
            }
            Some(other) => {
                return Err(parse_err(loc, format!("unexpected header keyword `{other}`")));
            }
        }
    }
}

/// One decoded element row: scalar values, then list values, in property order.
enum Value {
    Scalar(f64),
    List(Vec<f64>),
}

trait RowReader {
    fn read_row(&mut self, elem: &Element) -> Result<Vec<Value>>;
}

struct AsciiReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    first_line: usize,
}

impl RowReader for AsciiReader<'_> {
    fn read_row(&mut self, elem: &Element) -> Result<Vec<Value>> {
        let (idx, line) = loop {
            match self.lines.next() {
                Some((i, l)) if l.trim().is_empty() => {
                    let _ = i;
                    continue;
                }
                Some(x) => break x,
                None => {
                    return Err(parse_err(
                        "end of file".to_string(),
                        format!("truncated `{}` element data", elem.name),
                    ))
                }
            }
        };
        let loc = format!("line {}", self.first_line + idx);
        let mut toks = line.split_whitespace();
        // Single-precision values go through `f32` so they match the
        // binary encoding of the same scene.
        let mut next_num = |what: &str, ty: Scalar| -> Result<f64> {
            let tok = toks
                .next()
                .ok_or_else(|| parse_err(loc.clone(), format!("missing value for `{what}`")))?;
            let v = if ty == Scalar::F32 {
                tok.parse::<f32>().map(f64::from)
            } else {
                tok.parse::<f64>()
            };
            v.map_err(|_| parse_err(loc.clone(), format!("bad number for `{what}`")))
        };
        let mut row = Vec::with_capacity(elem.properties.len());
        for p in &elem.properties {
            match p {
                Property::Scalar { name, ty } => row.push(Value::Scalar(next_num(name, *ty)?)),
                Property::List { name, count, item } => {
                    let n = next_num(name, *count)? as usize;
                    let mut items = Vec::with_capacity(n);
                    for _ in 0..n {
                        items.push(next_num(name, *item)?);
                    }
                    row.push(Value::List(items));
                }
            }
        }
        Ok(row)
    }
}

struct BinaryReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BinaryReader<'_> {
    fn take(&mut self, ty: Scalar, what: &str) -> Result<f64> {
        let size = ty.size();
        if self.pos + size > self.bytes.len() {
            return Err(parse_err(
                format!("byte {}", self.pos),
                format!("truncated data reading `{what}`"),
            ));
        }
        let v = ty.read_le(&self.bytes[self.pos..self.pos + size]);
        self.pos += size;
        Ok(v)
    }
}

impl RowReader for BinaryReader<'_> {
    fn read_row(&mut self, elem: &Element) -> Result<Vec<Value>> {
        let mut row = Vec::with_capacity(elem.properties.len());
        for p in &elem.properties {
            match p {
                Property::Scalar { name, ty } => row.push(Value::Scalar(self.take(*ty, name)?)),
                Property::List { name, count, item } => {
                    let n = self.take(*count, name)? as usize;
                    let mut items = Vec::with_capacity(n);
                    for _ in 0..n {
                        items.push(self.take(*item, name)?);
                    }
                    row.push(Value::List(items));
                }
            }
        }
        Ok(row)
    }
}

fn scalar_index(elem: &Element, name: &str) -> Option<(usize, Scalar)> {
    elem.properties.iter().enumerate().find_map(|(i, p)| match p {
        Property::Scalar { name: n, ty } if n == name => Some((i, *ty)),
        _ => None,
    })
}

pub fn parse_ply(bytes: &[u8]) -> Result<Scene> {
    let header = parse_header(bytes)?;
    let vertex = header
        .elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| parse_err("header".to_string(), "no `vertex` element"))?;
    let mut pos_idx = [0usize; 3];
    for (d, axis) in ["x", "y", "z"].iter().enumerate() {
        pos_idx[d] = scalar_index(vertex, axis)
            .ok_or_else(|| parse_err("header".to_string(), format!("vertex has no `{axis}`")))?
            .0;
    }
    let color_idx: Option<Vec<(usize, Scalar)>> = ["red", "green", "blue"]
        .iter()
        .map(|c| scalar_index(vertex, c))
        .collect();
    let normal_idx: Option<Vec<usize>> = ["nx", "ny", "nz"]
        .iter()
        .map(|c| scalar_index(vertex, c).map(|x| x.0))
        .collect();

    let mut reader: Box<dyn RowReader> = match header.encoding {
        PlyEncoding::Ascii => {
            let body = std::str::from_utf8(&bytes[header.body_start.min(bytes.len())..])
                .map_err(|_| {
                    parse_err(format!("line {}", header.body_line), "body is not valid utf-8")
                })?;
            Box::new(AsciiReader {
                lines: body.lines().enumerate(),
                first_line: header.body_line,
            })
        }
        PlyEncoding::BinaryLittleEndian => Box::new(BinaryReader {
            bytes,
            pos: header.body_start,
        }),
    };

    let mut points = Vec::new();
    let mut colors = Vec::new();
    let mut normals = Vec::new();
    let mut faces: Option<Vec<[usize; 3]>> = None;

    for elem in &header.elements {
        let is_vertex = elem.name == "vertex";
        let is_face = elem.name == "face";
        let face_list = if is_face {
            elem.properties.iter().position(|p| {
                matches!(p, Property::List { name, .. } if name == "vertex_indices" || name == "vertex_index")
            })
        } else {
            None
        };
        if is_face && face_list.is_some() {
            faces = Some(Vec::with_capacity(elem.count));
        }
        for row_no in 0..elem.count {
            let row = reader.read_row(elem)?;
            let scalar = |i: usize| match &row[i] {
                Value::Scalar(v) => *v,
                Value::List(_) => f64::NAN,
            };
            if is_vertex {
                points.push([scalar(pos_idx[0]), scalar(pos_idx[1]), scalar(pos_idx[2])]);
                if let Some(ci) = &color_idx {
                    let mut c = [0.0; 3];
                    for d in 0..3 {
                        let (i, ty) = ci[d];
                        let v = scalar(i);
                        c[d] = if ty.is_integer() { v / 255.0 } else { v };
                    }
                    colors.push(c);
                }
                if let Some(ni) = &normal_idx {
                    let n = [scalar(ni[0]), scalar(ni[1]), scalar(ni[2])];
                    let len = super::norm(n);
                    // Stored normals are single precision; only rescale those
                    // that drifted beyond the unit check.
                    normals.push(if len > 0.0 && (len - 1.0).abs() > super::UNIT_TOLERANCE {
                        [n[0] / len, n[1] / len, n[2] / len]
                    } else {
                        n
                    });
                }
            } else if let (Some(li), Some(fs)) = (face_list, faces.as_mut()) {
                let Value::List(idx) = &row[li] else { unreachable!() };
                if idx.len() != 3 {
                    return Err(parse_err(
                        format!("face {row_no}"),
                        format!("only triangles are supported, got {} indices", idx.len()),
                    ));
                }
                fs.push([idx[0] as usize, idx[1] as usize, idx[2] as usize]);
            }
        }
    }

    if points.is_empty() {
        return Err(Error::validation("vertex", "PLY contains no vertices"));
    }
    let n = points.len();
    let colors = if color_idx.is_some() {
        colors
    } else {
        vec![DEFAULT_COLOR; n]
    };
    let normals = normal_idx.map(|_| normals);
    Scene::new(points, colors, normals, faces)
}

fn color_byte(c: f64) -> u8 {
    (c * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Serializes a scene. Positions are written as doubles; colors as 8-bit
/// channels; normals as floats.
pub fn write_ply(scene: &Scene, encoding: PlyEncoding) -> Vec<u8> {
    write_ply_with_comments(scene, encoding, &[])
}

/// As [`write_ply`], adding one `comment` header line per entry. Comments
/// must not contain newlines.
pub fn write_ply_with_comments(scene: &Scene, encoding: PlyEncoding, comments: &[String]) -> Vec<u8> {
    let n = scene.len();
    let mut out = Vec::new();
    let fmt = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    let _ = writeln!(out, "ply\nformat {fmt} 1.0");
    for c in comments {
        debug_assert!(!c.contains('\n'));
        let _ = writeln!(out, "comment {c}");
    }
    let _ = writeln!(out, "element vertex {n}");
    let _ = writeln!(out, "property double x\nproperty double y\nproperty double z");
    let _ = writeln!(
        out,
        "property uchar red\nproperty uchar green\nproperty uchar blue"
    );
    if scene.normals().is_some() {
        let _ = writeln!(out, "property float nx\nproperty float ny\nproperty float nz");
    }
    if let Some(faces) = scene.faces() {
        let _ = writeln!(
            out,
            "element face {}\nproperty list uchar int vertex_indices",
            faces.len()
        );
    }
    let _ = writeln!(out, "end_header");

    for i in 0..n {
        let p: Point3 = scene.points()[i];
        let c = scene.colors()[i];
        let nrm = scene.normals().map(|ns| ns[i]);
        match encoding {
            PlyEncoding::Ascii => {
                let _ = write!(
                    out,
                    "{} {} {} {} {} {}",
                    p[0],
                    p[1],
                    p[2],
                    color_byte(c[0]),
                    color_byte(c[1]),
                    color_byte(c[2])
                );
                if let Some(v) = nrm {
                    let _ = write!(out, " {} {} {}", v[0] as f32, v[1] as f32, v[2] as f32);
                }
                out.push(b'\n');
            }
            PlyEncoding::BinaryLittleEndian => {
                for v in p {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                for v in c {
                    out.push(color_byte(v));
                }
                if let Some(v) = nrm {
                    for x in v {
                        out.extend_from_slice(&(x as f32).to_le_bytes());
                    }
                }
            }
        }
    }
    if let Some(faces) = scene.faces() {
        for f in faces {
            match encoding {
                PlyEncoding::Ascii => {
                    let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
                }
                PlyEncoding::BinaryLittleEndian => {
                    out.push(3);
                    for &v in f {
                        out.extend_from_slice(&(v as i32).to_le_bytes());
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_without_color_defaults_to_gray() {
        let text = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n0 1 0\n";
        let scene = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(scene.len(), 3);
        assert!(scene.colors().iter().all(|c| *c == DEFAULT_COLOR));
        assert!(scene.normals().is_none());
    }

    #[test]
    fn missing_end_header_is_named() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n";
        let err = parse_ply(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("end_header"), "{err}");
    }

    #[test]
    fn bad_number_reports_line() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 zz 0\n";
        let err = parse_ply(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 9"), "{err}");
    }

    #[test]
    fn truncated_binary_reports_byte_offset() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n".to_vec();
        bytes.extend_from_slice(&[0u8; 16]);
        let err = parse_ply(&bytes).unwrap_err();
        assert!(err.to_string().contains("byte"), "{err}");
    }

    #[test]
    fn zero_vertices_rejected() {
        let text = "ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
        assert!(parse_ply(text.as_bytes()).is_err());
    }

    #[test]
    fn quads_rejected() {
        let text = "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        assert!(parse_ply(text.as_bytes()).is_err());
    }

    fn mesh_scene() -> Scene {
        Scene::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [1.0, 1.0, 0.0],
                [0.0, 1.0, 0.125],
            ],
            vec![
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
                [20.0 / 255.0, 0.4, 1.0],
            ],
            None,
            Some(vec![[0, 1, 2], [0, 2, 3]]),
        )
        .unwrap()
    }

    #[test]
    fn faces_survive_both_encodings() {
        let scene = mesh_scene();
        for enc in [PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian] {
            let back = parse_ply(&write_ply(&scene, enc)).unwrap();
            assert_eq!(back.faces(), scene.faces());
            assert_eq!(back.points(), scene.points());
            assert_eq!(back.colors(), scene.colors());
        }
    }

    #[test]
    fn skips_unknown_elements() {
        let text = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement edge 1\nproperty int vertex1\nproperty int vertex2\nend_header\n1 2 3 255 0 51\n0 0\n";
        let scene = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(scene.points()[0], [1.0, 2.0, 3.0]);
        assert_eq!(scene.colors()[0], [1.0, 0.0, 0.2]);
    }
}
