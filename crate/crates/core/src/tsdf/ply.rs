use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::SurfaceMesh;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

/// Writes vertices with normals and triangle faces.
pub fn write_ply<T: Real>(path: &Path, mesh: &SurfaceMesh<T>, format: PlyFormat) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    let has_normals = mesh.normals.len() == mesh.vertices.len();
    writeln!(out, "ply")?;
    match format {
        PlyFormat::Ascii => writeln!(out, "format ascii 1.0")?,
        PlyFormat::BinaryLittleEndian => writeln!(out, "format binary_little_endian 1.0")?,
    }
    writeln!(out, "element vertex {}", mesh.vertices.len())?;
    for c in ["x", "y", "z"] {
        writeln!(out, "property float {c}")?;
    }
    if has_normals {
        for c in ["nx", "ny", "nz"] {
            writeln!(out, "property float {c}")?;
        }
    }
    writeln!(out, "element face {}", mesh.triangles.len())?;
    writeln!(out, "property list uchar int vertex_indices")?;
    writeln!(out, "end_header")?;

    for (i, v) in mesh.vertices.iter().enumerate() {
        let mut vals = vec![v.x, v.y, v.z];
        if has_normals {
            vals.extend(mesh.normals[i].iter().copied());
        }
        match format {
            PlyFormat::Ascii => {
                let text: Vec<String> = vals.iter().map(|x| x.to_f32_lossy().to_string()).collect();
                writeln!(out, "{}", text.join(" "))?;
            }
            PlyFormat::BinaryLittleEndian => {
                for x in vals {
                    out.write_all(&x.to_f32_lossy().to_le_bytes())?;
                }
            }
        }
    }
    for t in &mesh.triangles {
        match format {
            PlyFormat::Ascii => writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?,
            PlyFormat::BinaryLittleEndian => {
                out.write_all(&[3u8])?;
                for i in t {
                    out.write_all(&(*i as i32).to_le_bytes())?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads meshes in the layout produced by [`write_ply`]: float vertex
/// properties `x y z` with optional `nx ny nz`, and triangle faces.
pub fn read_ply<T: Real>(path: &Path) -> Result<SurfaceMesh<T>> {
    let bytes = std::fs::read(path)?;
    let bad = |reason: &str| Error::format(path, reason);
    let end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| bad("missing end_header"))?
        + 11;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8"))?;
    let mut binary = None;
    let (mut nv, mut nf, mut props) = (0usize, 0usize, Vec::new());
    let mut in_vertex = false;
    for line in header.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["element", "vertex", n] => {
                nv = n.parse().map_err(|_| bad("bad vertex count"))?;
                in_vertex = true;
            }
            ["element", "face", n] => {
                nf = n.parse().map_err(|_| bad("bad face count"))?;
                in_vertex = false;
            }
            ["property", "float", name] if in_vertex => props.push(name.to_string()),
            ["property", "list", "uchar", "int", "vertex_indices"] => {}
            ["property", ..] => return Err(bad(&format!("unsupported property `{line}`"))),
            _ => {}
        }
    }
    let binary = binary.ok_or_else(|| bad("unsupported format"))?;
    let has_normals = match props.as_slice() {
        [x, y, z] if (x, y, z) == (&"x".to_string(), &"y".to_string(), &"z".to_string()) => false,
        [_, _, _, nx, _, _] if nx == "nx" => true,
        _ => return Err(bad("expected x y z [nx ny nz] vertex properties")),
    };
    let np = props.len();
    let mut values: Vec<f32> = Vec::with_capacity(nv * np);
    let mut faces: Vec<[u32; 3]> = Vec::with_capacity(nf);
    let check = |i: i64| -> Result<u32> {
        if i < 0 || i as usize >= nv {
            Err(bad(&format!("face index {i} out of range")))
        } else {
            Ok(i as u32)
        }
    };
    if binary {
        let body = &bytes[end..];
        let need = nv * np * 4;
        if body.len() < need + nf * 13 {
            return Err(bad("truncated body"));
        }
        values.extend(body[..need].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
        for rec in body[need..need + nf * 13].chunks_exact(13) {
            if rec[0] != 3 {
                return Err(bad("only triangle faces are supported"));
            }
            let idx = |o: usize| i32::from_le_bytes([rec[o], rec[o + 1], rec[o + 2], rec[o + 3]]) as i64;
            faces.push([check(idx(1))?, check(idx(5))?, check(idx(9))?]);
        }
    } else {
        let body = std::str::from_utf8(&bytes[end..]).map_err(|_| bad("body is not UTF-8"))?;
        let mut lines = body.lines();
        for _ in 0..nv {
            let line = lines.next().ok_or_else(|| bad("truncated vertex list"))?;
            let row: Vec<f32> = line
                .split_whitespace()
                .map(|x| x.parse::<f32>().map_err(|_| bad("bad vertex value")))
                .collect::<Result<_>>()?;
            if row.len() != np {
                return Err(bad("wrong vertex property count"));
            }
            values.extend(row);
        }
        for _ in 0..nf {
            let line = lines.next().ok_or_else(|| bad("truncated face list"))?;
            let row: Vec<i64> = line
                .split_whitespace()
                .map(|x| x.parse::<i64>().map_err(|_| bad("bad face index")))
                .collect::<Result<_>>()?;
            if row.len() != 4 || row[0] != 3 {
                return Err(bad("only triangle faces are supported"));
            }
            faces.push([check(row[1])?, check(row[2])?, check(row[3])?]);
        }
    }
    let vec3 = |r: &[f32]| Vector3::new(T::lit(r[0] as f64), T::lit(r[1] as f64), T::lit(r[2] as f64));
    let rows: Vec<&[f32]> = values.chunks_exact(np).collect();
    Ok(SurfaceMesh {
        vertices: rows.iter().map(|r| vec3(&r[..3])).collect(),
        normals: if has_normals { rows.iter().map(|r| vec3(&r[3..6])).collect() } else { Vec::new() },
        triangles: faces,
        source_pixel: Vec::new(),
    })
}
