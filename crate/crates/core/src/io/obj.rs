//! Triangle meshes as ASCII Wavefront OBJ.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::io::{parse_err, read_file, write_file, LoadError};
use crate::math::Vec3;
use crate::real::Real;
use crate::scene::TriangleMesh;

pub fn write_obj<T: Real>(mesh: &TriangleMesh<T>) -> String {
    let mut s = String::with_capacity(32 * (mesh.vertices.len() + mesh.faces.len()));
    for v in &mesh.vertices {
        // `{:?}` prints the shortest representation that parses back exactly.
        let _ = writeln!(s, "v {:?} {:?} {:?}", v.x.as_f64(), v.y.as_f64(), v.z.as_f64());
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

fn parse_index(tok: &str, count: usize, line: usize) -> Result<u32, LoadError> {
    let head = tok.split('/').next().unwrap_or("");
    let i: i64 = head
        .parse()
        .map_err(|_| parse_err(format!("line {line}: bad face index {tok:?}")))?;
    let resolved = if i < 0 { count as i64 + i } else { i - 1 };
    if resolved < 0 || resolved >= count as i64 {
        return Err(parse_err(format!("line {line}: face index {i} out of range")));
    }
    Ok(resolved as u32)
}

/// Parses vertices and faces; polygons are fan-triangulated and other
/// statements ignored.
pub fn read_obj(text: &str) -> Result<TriangleMesh<f64>, LoadError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let c: Vec<f64> = parts
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| parse_err(format!("line {}: bad vertex", n + 1)))?;
                if c.len() != 3 {
                    return Err(parse_err(format!("line {}: vertex needs three coordinates", n + 1)));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx = parts
                    .map(|t| parse_index(t, vertices.len(), n + 1))
                    .collect::<Result<Vec<_>, _>>()?;
                if idx.len() < 3 {
                    return Err(parse_err(format!("line {}: face needs three vertices", n + 1)));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces).map_err(|e| parse_err(e.to_string()))
}

pub fn save_obj<T: Real>(path: &Path, mesh: &TriangleMesh<T>) -> Result<()> {
    write_file(path, write_obj(mesh).as_bytes())
}

pub fn load_obj(path: &Path) -> Result<TriangleMesh<f64>, LoadError> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| LoadError::Parse {
        path: path.to_path_buf(),
        detail: "OBJ is not UTF-8".into(),
    })?;
    read_obj(text).map_err(|e| e.at(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_quads() {
        let mesh = TriangleMesh::new(
            vec![Vec3::new(0.1, 0.2, 0.3), Vec3::new(1.0 / 3.0, 0.0, 0.0), Vec3::new(0.0, 1e-9, 5.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_eq!(read_obj(&write_obj(&mesh)).unwrap(), mesh);
        let quad = read_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 -1\n").unwrap();
        assert_eq!(quad.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert!(read_obj("v 0 0 0\nf 1 2 3\n").is_err());
    }
}
