use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TriangleMesh;
use crate::error::{Error, Result};
use crate::geom::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshFormat {
    Obj,
    GmshMsh2,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("msh") => Ok(MeshFormat::GmshMsh2),
            other => Err(Error::UnsupportedFormat(format!(
                "{} (extension {:?})",
                path.display(),
                other.unwrap_or("")
            ))),
        }
    }
}

/// Reads a mesh file; the format is inferred from the extension when `format` is `None`.
pub fn load_mesh(path: impl AsRef<Path>, format: Option<MeshFormat>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let format = match format {
        Some(f) => f,
        None => MeshFormat::from_path(path)?,
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (v, t) = match format {
        MeshFormat::Obj => parse_obj(&text, path)?,
        MeshFormat::GmshMsh2 => parse_msh2(&text, path)?,
    };
    TriangleMesh::new(v, t, path.display().to_string())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_f64(tok: Option<&str>, path: &Path, line: usize) -> Result<f64> {
    tok.ok_or_else(|| parse_err(path, line, "missing coordinate"))?
        .parse()
        .map_err(|_| parse_err(path, line, "bad number"))
}

/// Wavefront OBJ, triangular faces only. Texture/normal indices are ignored.
pub fn parse_obj(text: &str, path: &Path) -> Result<(Vec<Point>, Vec<[usize; 3]>)> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut tok = content.split_whitespace();
        match tok.next() {
            Some("v") => {
                let x = parse_f64(tok.next(), path, line)?;
                let y = parse_f64(tok.next(), path, line)?;
                let z = parse_f64(tok.next(), path, line)?;
                vertices.push([x, y, z]);
            }
            Some("f") => {
                let idx: Vec<&str> = tok.collect();
                if idx.len() != 3 {
                    return Err(parse_err(
                        path,
                        line,
                        format!("face with {} vertices (triangles only)", idx.len()),
                    ));
                }
                let mut tri = [0usize; 3];
                for (k, s) in idx.iter().enumerate() {
                    let head = s.split('/').next().unwrap_or("");
                    let j: i64 = head.parse().map_err(|_| parse_err(path, line, "bad index"))?;
                    let n = vertices.len() as i64;
                    let zero_based = if j > 0 { j - 1 } else { n + j };
                    if j == 0 || zero_based < 0 || zero_based >= n {
                        return Err(parse_err(path, line, format!("index {j} out of range")));
                    }
                    tri[k] = zero_based as usize;
                }
                triangles.push(tri);
            }
            _ => {}
        }
    }
    Ok((vertices, triangles))
}

/// Gmsh MSH 2.x ASCII; keeps only 3-node triangles (element type 2).
pub fn parse_msh2(text: &str, path: &Path) -> Result<(Vec<Point>, Vec<[usize; 3]>)> {
    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    let mut ids = std::collections::HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut seen_format = false;
    let count = |i: usize| -> Result<usize> {
        lines
            .get(i)
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| parse_err(path, i + 1, "expected a count"))
    };
    while i < lines.len() {
        match lines[i].trim() {
            "$MeshFormat" => {
                let hdr: Vec<&str> = lines.get(i + 1).unwrap_or(&"").split_whitespace().collect();
                let version: f64 = hdr
                    .first()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| parse_err(path, i + 2, "bad format header"))?;
                if !(2.0..3.0).contains(&version) {
                    return Err(Error::UnsupportedFormat(format!("gmsh version {version}")));
                }
                if hdr.get(1) != Some(&"0") {
                    return Err(Error::UnsupportedFormat("binary gmsh".into()));
                }
                seen_format = true;
                i += 3;
            }
            "$Nodes" => {
                let n = count(i + 1)?;
                for k in 0..n {
                    let ln = i + 2 + k;
                    let mut tok = lines.get(ln).unwrap_or(&"").split_whitespace();
                    let id: usize = tok
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(path, ln + 1, "bad node id"))?;
                    let x = parse_f64(tok.next(), path, ln + 1)?;
                    let y = parse_f64(tok.next(), path, ln + 1)?;
                    let z = parse_f64(tok.next(), path, ln + 1)?;
                    ids.insert(id, vertices.len());
                    vertices.push([x, y, z]);
                }
                i += n + 3;
            }
            "$Elements" => {
                let n = count(i + 1)?;
                for k in 0..n {
                    let ln = i + 2 + k;
                    let tok: Vec<usize> = lines
                        .get(ln)
                        .unwrap_or(&"")
                        .split_whitespace()
                        .map(|s| s.parse().map_err(|_| parse_err(path, ln + 1, "bad element")))
                        .collect::<Result<_>>()?;
                    if tok.len() < 3 || tok[1] != 2 {
                        continue;
                    }
                    let start = 3 + tok[2];
                    if tok.len() < start + 3 {
                        return Err(parse_err(path, ln + 1, "truncated triangle"));
                    }
                    let mut tri = [0; 3];
                    for c in 0..3 {
                        tri[c] = *ids
                            .get(&tok[start + c])
                            .ok_or_else(|| parse_err(path, ln + 1, "unknown node"))?;
                    }
                    triangles.push(tri);
                }
                i += n + 3;
            }
            _ => i += 1,
        }
    }
    if !seen_format {
        return Err(parse_err(path, 1, "missing $MeshFormat section"));
    }
    // Drop nodes not referenced by any triangle (e.g. geometry points).
    let mut used = vec![usize::MAX; vertices.len()];
    let mut kept = Vec::new();
    for tri in &mut triangles {
        for v in tri.iter_mut() {
            if used[*v] == usize::MAX {
                used[*v] = kept.len();
                kept.push(vertices[*v]);
            }
            *v = used[*v];
        }
    }
    Ok((kept, triangles))
}

pub fn write_obj(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    for p in mesh.vertices() {
        let _ = writeln!(s, "v {:.17e} {:.17e} {:.17e}", p[0], p[1], p[2]);
    }
    for t in mesh.triangles() {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}
