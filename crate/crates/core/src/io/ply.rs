//! Minimal PLY support for vertex tables (ASCII and binary little-endian).
//!
//! Only scalar vertex properties are handled; elements after `vertex` are ignored.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarType {
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
            other => return Err(Error::Ply(format!("unsupported property type `{other}`"))),
        })
    }

    fn name(self) -> &'static str {
        match self {
            Self::I8 => "char",
            Self::U8 => "uchar",
            Self::I16 => "short",
            Self::U16 => "ushort",
            Self::I32 => "int",
            Self::U32 => "uint",
            Self::F32 => "float",
            Self::F64 => "double",
        }
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    fn encode_le(self, v: f64, out: &mut Vec<u8>) {
        match self {
            Self::I8 => out.push(v as i8 as u8),
            Self::U8 => out.push(v as u8),
            Self::I16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
            Self::U16 => out.extend_from_slice(&(v as u16).to_le_bytes()),
            Self::I32 => out.extend_from_slice(&(v as i32).to_le_bytes()),
            Self::U32 => out.extend_from_slice(&(v as u32).to_le_bytes()),
            Self::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Self::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

/// Vertex table: property names with their stored types, and one row per vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexTable {
    pub properties: Vec<(String, ScalarType)>,
    pub rows: Vec<Vec<f64>>,
}

impl VertexTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|(n, _)| n == name)
    }

    pub fn property_type(&self, name: &str) -> Option<ScalarType> {
        self.properties.iter().find(|(n, _)| n == name).map(|(_, t)| *t)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.column(name).ok_or_else(|| Error::Ply(format!("missing vertex property `{name}`")))
    }
}

struct Header {
    format: PlyFormat,
    vertex_count: usize,
    properties: Vec<(String, ScalarType)>,
    vertex_first: bool,
}

fn parse_header(reader: &mut impl BufRead) -> Result<Header> {
    let mut line = String::new();
    let mut read_line = |line: &mut String| -> Result<()> {
        line.clear();
        let n = reader.read_line(line).map_err(|e| Error::Ply(e.to_string()))?;
        if n == 0 {
            return Err(Error::Ply("unexpected end of header".into()));
        }
        Ok(())
    };
    read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(Error::Ply("missing `ply` magic".into()));
    }
    let mut format = None;
    let mut vertex_count = None;
    let mut properties = Vec::new();
    let mut current_is_vertex = false;
    let mut seen_element = false;
    let mut vertex_first = true;
    loop {
        read_line(&mut line)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _version] => {
                format = Some(match *fmt {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(Error::Ply(format!("unsupported format `{other}`"))),
                })
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                current_is_vertex = *name == "vertex";
                if current_is_vertex {
                    if seen_element {
                        vertex_first = false;
                    }
                    vertex_count = Some(count.parse().map_err(|_| Error::Ply(format!("bad count `{count}`")))?);
                }
                seen_element = true;
            }
            ["property", "list", ..] => {
                if current_is_vertex {
                    return Err(Error::Ply("list properties on vertices are not supported".into()));
                }
            }
            ["property", ty, name] => {
                if current_is_vertex {
                    properties.push((name.to_string(), ScalarType::parse(ty)?));
                }
            }
            _ => return Err(Error::Ply(format!("unrecognized header line `{}`", line.trim()))),
        }
    }
    Ok(Header {
        format: format.ok_or_else(|| Error::Ply("missing format line".into()))?,
        vertex_count: vertex_count.ok_or_else(|| Error::Ply("missing vertex element".into()))?,
        properties,
        vertex_first,
    })
}

pub fn read_vertices(path: &Path) -> Result<VertexTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_vertices_from(BufReader::new(file)).map_err(|e| match e {
        Error::Ply(m) => Error::Ply(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_vertices_from(mut reader: impl BufRead) -> Result<VertexTable> {
    let header = parse_header(&mut reader)?;
    if !header.vertex_first {
        return Err(Error::Ply("vertex element must come first".into()));
    }
    let ncols = header.properties.len();
    let mut rows = Vec::with_capacity(header.vertex_count);
    match header.format {
        PlyFormat::Ascii => {
            let mut line = String::new();
            while rows.len() < header.vertex_count {
                line.clear();
                if reader.read_line(&mut line).map_err(|e| Error::Ply(e.to_string()))? == 0 {
                    return Err(Error::Ply("truncated vertex data".into()));
                }
                if line.trim().is_empty() {
                    continue;
                }
                let row = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| Error::Ply(format!("bad number `{t}`"))))
                    .collect::<Result<Vec<_>>>()?;
                if row.len() != ncols {
                    return Err(Error::Ply(format!("expected {ncols} values per vertex, got {}", row.len())));
                }
                rows.push(row);
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let stride: usize = header.properties.iter().map(|(_, t)| t.size()).sum();
            let mut buf = vec![0u8; stride];
            for _ in 0..header.vertex_count {
                reader.read_exact(&mut buf).map_err(|_| Error::Ply("truncated vertex data".into()))?;
                let mut off = 0;
                let row = header
                    .properties
                    .iter()
                    .map(|(_, t)| {
                        let v = t.decode_le(&buf[off..off + t.size()]);
                        off += t.size();
                        v
                    })
                    .collect();
                rows.push(row);
            }
        }
    }
    Ok(VertexTable { properties: header.properties, rows })
}

pub fn write_vertices(path: &Path, table: &VertexTable, format: PlyFormat) -> Result<()> {
    let bytes = encode_vertices(table, format)?;
    crate::io::write_atomic(path, &bytes)
}

pub fn encode_vertices(table: &VertexTable, format: PlyFormat) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(out, "ply\nformat {fmt} 1.0\nelement vertex {}", table.rows.len()).unwrap();
    for (name, ty) in &table.properties {
        writeln!(out, "property {} {name}", ty.name()).unwrap();
    }
    writeln!(out, "end_header").unwrap();
    for row in &table.rows {
        if row.len() != table.properties.len() {
            return Err(Error::LengthMismatch { left: row.len(), right: table.properties.len() });
        }
        match format {
            PlyFormat::Ascii => {
                let line: Vec<String> = row
                    .iter()
                    .zip(&table.properties)
                    .map(|(v, (_, ty))| match ty {
                        ScalarType::F32 => format!("{}", *v as f32),
                        ScalarType::F64 => format!("{v:?}"),
                        _ => format!("{}", *v as i64),
                    })
                    .collect();
                writeln!(out, "{}", line.join(" ")).unwrap();
            }
            PlyFormat::BinaryLittleEndian => {
                for (v, (_, ty)) in row.iter().zip(&table.properties) {
                    ty.encode_le(*v, &mut out);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> VertexTable {
        VertexTable {
            properties: vec![
                ("x".into(), ScalarType::F64),
                ("y".into(), ScalarType::F32),
                ("red".into(), ScalarType::U8),
            ],
            rows: vec![vec![0.1, 2.5, 255.0], vec![-3.0e-7, -1.0, 0.0]],
        }
    }

    #[test]
    fn ascii_and_binary_read_back() {
        for format in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let bytes = encode_vertices(&table(), format).unwrap();
            let back = read_vertices_from(std::io::Cursor::new(bytes)).unwrap();
            assert_eq!(back, table());
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_vertices_from(std::io::Cursor::new(b"not a ply\n".to_vec())).is_err());
        let truncated =
            b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty double x\nend_header\n\0\0\0\0";
        assert!(read_vertices_from(std::io::Cursor::new(truncated.to_vec())).is_err());
    }

    #[test]
    fn skips_trailing_face_element() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n1.5\n3 0 0 0\n";
        let t = read_vertices_from(std::io::Cursor::new(text.as_bytes().to_vec())).unwrap();
        assert_eq!(t.rows, vec![vec![1.5]]);
    }
}
