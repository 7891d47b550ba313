//! Triangle-mesh I/O: PLY (ascii and binary little-endian) and OBJ.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scene::TriangleMesh;

/// Write points (with normals) as a binary little-endian PLY point cloud.
pub fn save_ply_points(
    path: &Path,
    points: &[Vector3<f64>],
    normals: Option<&[Vector3<f64>]>,
) -> Result<()> {
    if let Some(n) = normals {
        if n.len() != points.len() {
            return Err(Error::DimensionMismatch(
                "normal count != point count".into(),
            ));
        }
    }
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "ply\nformat binary_little_endian 1.0\n")?;
    write!(out, "element vertex {}\n", points.len())?;
    write!(out, "property float x\nproperty float y\nproperty float z\n")?;
    if normals.is_some() {
        write!(out, "property float nx\nproperty float ny\nproperty float nz\n")?;
    }
    write!(out, "end_header\n")?;
    for (i, p) in points.iter().enumerate() {
        for c in 0..3 {
            out.write_all(&(p[c] as f32).to_le_bytes())?;
        }
        if let Some(n) = normals {
            for c in 0..3 {
                out.write_all(&(n[i][c] as f32).to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Write a triangle mesh (with per-vertex normals) as binary PLY.
pub fn save_ply_mesh(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "ply\nformat binary_little_endian 1.0\n")?;
    write!(out, "element vertex {}\n", mesh.vertices().len())?;
    write!(out, "property float x\nproperty float y\nproperty float z\n")?;
    write!(out, "property float nx\nproperty float ny\nproperty float nz\n")?;
    write!(out, "element face {}\n", mesh.faces().len())?;
    write!(out, "property list uchar uint vertex_indices\n")?;
    write!(out, "end_header\n")?;
    for (v, n) in mesh.vertices().iter().zip(mesh.normals()) {
        for c in 0..3 {
            out.write_all(&(v[c] as f32).to_le_bytes())?;
        }
        for c in 0..3 {
            out.write_all(&(n[c] as f32).to_le_bytes())?;
        }
    }
    for f in mesh.faces() {
        out.write_all(&[3u8])?;
        for &idx in f {
            out.write_all(&idx.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn parse_err(path: &Path, message: String) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone, Copy)]
enum PropKind {
    Float,
    Double,
    Int,
    Uint,
    Uchar,
    Ushort,
}

impl PropKind {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "float" | "float32" => PropKind::Float,
            "double" | "float64" => PropKind::Double,
            "int" | "int32" => PropKind::Int,
            "uint" | "uint32" => PropKind::Uint,
            "uchar" | "uint8" => PropKind::Uchar,
            "ushort" | "uint16" => PropKind::Ushort,
            _ => None,
        })
    }

    fn size(self) -> usize {
        match self {
            PropKind::Uchar => 1,
            PropKind::Ushort => 2,
            PropKind::Float | PropKind::Int | PropKind::Uint => 4,
            PropKind::Double => 8,
        }
    }

    fn read_binary(self, bytes: &[u8]) -> f64 {
        match self {
            PropKind::Float => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            PropKind::Double => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
            PropKind::Int => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            PropKind::Uint => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            PropKind::Uchar => bytes[0] as f64,
            PropKind::Ushort => u16::from_le_bytes(bytes[..2].try_into().unwrap()) as f64,
        }
    }
}

/// Focused PLY mesh reader: vertex positions, optional vertex normals, and
/// triangle faces (quads are fan-triangulated). Unknown scalar properties
/// are skipped.
fn load_ply(path: &Path) -> Result<TriangleMesh> {
    let mut reader = BufReader::new(
        File::open(path).map_err(|_| Error::MissingFile(path.display().to_string()))?,
    );
    let mut header = String::new();
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(parse_err(path, "not a PLY file".into()));
    }
    let mut format = None;
    struct ElementSpec {
        name: String,
        count: usize,
        // (name, kind, list_count_kind)
        props: Vec<(String, PropKind, Option<PropKind>)>,
    }
    let mut elements: Vec<ElementSpec> = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(parse_err(path, "unterminated header".into()));
        }
        header.push_str(&line);
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | [] => {}
            ["format", f, _] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLe,
                    other => {
                        return Err(parse_err(path, format!("unsupported format {other}")))
                    }
                });
            }
            ["element", name, count] => {
                elements.push(ElementSpec {
                    name: (*name).into(),
                    count: count
                        .parse()
                        .map_err(|_| parse_err(path, "bad element count".into()))?,
                    props: Vec::new(),
                });
            }
            ["property", "list", count_kind, item_kind, name] => {
                let spec = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, "property before element".into()))?;
                let ck = PropKind::parse(count_kind)
                    .ok_or_else(|| parse_err(path, format!("bad list count type {count_kind}")))?;
                let ik = PropKind::parse(item_kind)
                    .ok_or_else(|| parse_err(path, format!("bad list item type {item_kind}")))?;
                spec.props.push(((*name).into(), ik, Some(ck)));
            }
            ["property", kind, name] => {
                let spec = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, "property before element".into()))?;
                let k = PropKind::parse(kind)
                    .ok_or_else(|| parse_err(path, format!("bad property type {kind}")))?;
                spec.props.push(((*name).into(), k, None));
            }
            _ => return Err(parse_err(path, format!("bad header line {line:?}"))),
        }
    }
    let format = format.ok_or_else(|| parse_err(path, "missing format line".into()))?;

    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut normals: Vec<Vector3<f64>> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();

    // Pull the remaining payload into memory (ascii lines or raw bytes).
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    let mut ascii_values: Vec<f64> = Vec::new();
    if format == PlyFormat::Ascii {
        let text = std::str::from_utf8(&payload)
            .map_err(|_| parse_err(path, "non-UTF8 ascii payload".into()))?;
        for token in text.split_whitespace() {
            ascii_values.push(
                token
                    .parse()
                    .map_err(|_| parse_err(path, format!("bad ascii value {token:?}")))?,
            );
        }
    }
    let mut ascii_pos = 0usize;
    let mut bin_pos = 0usize;
    let mut next_ascii = |pos: &mut usize| -> Result<f64> {
        let v = ascii_values
            .get(*pos)
            .copied()
            .ok_or_else(|| parse_err(path, "truncated ascii payload".into()))?;
        *pos += 1;
        Ok(v)
    };
    let mut next_binary = |pos: &mut usize, kind: PropKind| -> Result<f64> {
        let size = kind.size();
        if *pos + size > payload.len() {
            return Err(parse_err(path, "truncated binary payload".into()));
        }
        let v = kind.read_binary(&payload[*pos..]);
        *pos += size;
        Ok(v)
    };

    for spec in &elements {
        for _ in 0..spec.count {
            let mut x = [0.0f64; 3];
            let mut n = [f64::NAN; 3];
            let mut indices: Vec<u32> = Vec::new();
            for (name, kind, list) in &spec.props {
                match list {
                    None => {
                        let value = match format {
                            PlyFormat::Ascii => next_ascii(&mut ascii_pos)?,
                            PlyFormat::BinaryLe => next_binary(&mut bin_pos, *kind)?,
                        };
                        match name.as_str() {
                            "x" => x[0] = value,
                            "y" => x[1] = value,
                            "z" => x[2] = value,
                            "nx" => n[0] = value,
                            "ny" => n[1] = value,
                            "nz" => n[2] = value,
                            _ => {}
                        }
                    }
                    Some(count_kind) => {
                        let count = match format {
                            PlyFormat::Ascii => next_ascii(&mut ascii_pos)? as usize,
                            PlyFormat::BinaryLe => {
                                next_binary(&mut bin_pos, *count_kind)? as usize
                            }
                        };
                        if count > 16 {
                            return Err(parse_err(path, format!("face with {count} vertices")));
                        }
                        let mut list_vals = Vec::with_capacity(count);
                        for _ in 0..count {
                            let value = match format {
                                PlyFormat::Ascii => next_ascii(&mut ascii_pos)?,
                                PlyFormat::BinaryLe => next_binary(&mut bin_pos, *kind)?,
                            };
                            list_vals.push(value as u32);
                        }
                        if name == "vertex_indices" || name == "vertex_index" {
                            indices = list_vals;
                        }
                    }
                }
            }
            if spec.name == "vertex" {
                vertices.push(Vector3::new(x[0], x[1], x[2]));
                if n.iter().all(|v| v.is_finite()) {
                    normals.push(Vector3::new(n[0], n[1], n[2]));
                }
            } else if spec.name == "face" && indices.len() >= 3 {
                for k in 1..indices.len() - 1 {
                    faces.push([indices[0], indices[k], indices[k + 1]]);
                }
            }
        }
    }
    finish_mesh(path, vertices, normals, faces)
}

fn finish_mesh(
    path: &Path,
    vertices: Vec<Vector3<f64>>,
    mut normals: Vec<Vector3<f64>>,
    faces: Vec<[u32; 3]>,
) -> Result<TriangleMesh> {
    if vertices.is_empty() || faces.is_empty() {
        return Err(parse_err(path, "mesh has no vertices or faces".into()));
    }
    if normals.len() == vertices.len() {
        for n in &mut normals {
            let norm = n.norm();
            if norm < 1e-12 {
                return Err(parse_err(path, "zero-length vertex normal".into()));
            }
            *n /= norm;
        }
    } else {
        // Area-weighted vertex normals from face geometry.
        normals = vec![Vector3::zeros(); vertices.len()];
        for f in &faces {
            let a = vertices[f[0] as usize];
            let b = vertices[f[1] as usize];
            let c = vertices[f[2] as usize];
            let fn_ = (b - a).cross(&(c - a));
            for &i in f {
                normals[i as usize] += fn_;
            }
        }
        for n in &mut normals {
            let norm = n.norm();
            if norm < 1e-12 {
                *n = Vector3::z();
            } else {
                *n /= norm;
            }
        }
    }
    TriangleMesh::new(vertices, normals, faces)
}

fn load_obj(path: &Path) -> Result<TriangleMesh> {
    let (models, _) = tobj::load_obj(
        path,
        &tobj::LoadOptions {
            triangulate: true,
            single_index: true,
            ..Default::default()
        },
    )
    .map_err(|e| parse_err(path, format!("obj load failed: {e}")))?;
    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut faces = Vec::new();
    for model in &models {
        let mesh = &model.mesh;
        let base = vertices.len() as u32;
        for chunk in mesh.positions.chunks_exact(3) {
            vertices.push(Vector3::new(chunk[0] as f64, chunk[1] as f64, chunk[2] as f64));
        }
        if mesh.normals.len() == mesh.positions.len() {
            for chunk in mesh.normals.chunks_exact(3) {
                normals.push(Vector3::new(chunk[0] as f64, chunk[1] as f64, chunk[2] as f64));
            }
        }
        for idx in mesh.indices.chunks_exact(3) {
            faces.push([base + idx[0], base + idx[1], base + idx[2]]);
        }
    }
    let normals = if normals.len() == vertices.len() {
        normals
    } else {
        Vec::new()
    };
    finish_mesh(path, vertices, normals, faces)
}

/// Load a triangle mesh by extension (`.ply` or `.obj`). Missing normals are
/// reconstructed area-weighted from the faces.
pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("ply") => load_ply(path),
        Some("obj") => load_obj(path),
        other => Err(Error::InvalidConfig(format!(
            "unsupported mesh extension {other:?}"
        ))),
    }
}
