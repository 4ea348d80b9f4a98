use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Triangle, Vec3};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObjMesh {
    pub triangles: Vec<Triangle>,
    /// Zero-area faces skipped while loading.
    pub dropped: usize,
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<ObjMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

fn parse_floats<const K: usize>(fields: &[&str], path: &Path, line: usize) -> Result<[f64; K]> {
    let err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    if fields.len() < K {
        return Err(err(format!("expected {K} numbers, found {}", fields.len())));
    }
    let mut out = [0.0f64; K];
    for (o, f) in out.iter_mut().zip(fields) {
        *o = f.parse().map_err(|_| err(format!("bad number {f:?}")))?;
        if !o.is_finite() {
            return Err(err(format!("non-finite number {f:?}")));
        }
    }
    Ok(out)
}

/// 1-based (or negative, relative) OBJ index to a 0-based one.
fn resolve(index: &str, count: usize, path: &Path, line: usize) -> Result<usize> {
    let err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let i: i64 = index.parse().map_err(|_| err(format!("bad index {index:?}")))?;
    let resolved = match i {
        0 => return Err(err("index 0 is invalid".into())),
        i if i > 0 => i - 1,
        i => count as i64 + i,
    };
    if resolved < 0 || resolved as usize >= count {
        return Err(err(format!("index {i} out of range ({count} defined)")));
    }
    Ok(resolved as usize)
}

/// Parses `v`, `vn` and `f` records; other record types are ignored.
/// Polygons are fan-triangulated, and faces without normals on every corner
/// fall back to the geometric normal.
pub fn parse_obj(text: &str, path: &Path) -> Result<ObjMesh> {
    let mut positions: Vec<Vec3> = Vec::new();
    let mut normals: Vec<Vec3> = Vec::new();
    let mut mesh = ObjMesh::default();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("");
        let fields: Vec<&str> = content.split_whitespace().collect();
        let Some((&tag, rest)) = fields.split_first() else { continue };
        match tag {
            "v" => positions.push(parse_floats::<3>(rest, path, line)?.into()),
            "vn" => normals.push(parse_floats::<3>(rest, path, line)?.into()),
            "f" => {
                if rest.len() < 3 {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        message: format!("face needs at least 3 vertices, found {}", rest.len()),
                    });
                }
                let mut corners = Vec::with_capacity(rest.len());
                for corner in rest {
                    let mut parts = corner.split('/');
                    let v = resolve(parts.next().unwrap_or(""), positions.len(), path, line)?;
                    let _texcoord = parts.next();
                    let vn = match parts.next() {
                        Some(s) if !s.is_empty() => Some(resolve(s, normals.len(), path, line)?),
                        _ => None,
                    };
                    corners.push((v, vn));
                }
                for k in 1..corners.len() - 1 {
                    let c = [corners[0], corners[k], corners[k + 1]];
                    let mut tri = Triangle::new(positions[c[0].0], positions[c[1].0], positions[c[2].0]);
                    if let (Some(a), Some(b), Some(d)) = (c[0].1, c[1].1, c[2].1) {
                        let ns = [normals[a], normals[b], normals[d]];
                        if ns.iter().all(|n| n.length_squared() > 0.0) {
                            tri.normals = Some(ns.map(|n| n.normalized()));
                        }
                    }
                    if tri.is_degenerate() {
                        mesh.dropped += 1;
                    } else {
                        mesh.triangles.push(tri);
                    }
                }
            }
            _ => {}
        }
    }
    if mesh.dropped > 0 {
        log::warn!("{}: dropped {} degenerate faces", path.display(), mesh.dropped);
    }
    Ok(mesh)
}

/// Writes triangles with per-corner normals (geometric when absent).
pub fn write_obj(path: impl AsRef<Path>, triangles: &[Triangle]) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    for t in triangles {
        for v in [t.v0, t.v1, t.v2] {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        let ns = t.normals.unwrap_or([t.geometric_normal(); 3]);
        for n in ns {
            let _ = writeln!(s, "vn {} {} {}", n.x, n.y, n.z);
        }
    }
    for i in 0..triangles.len() {
        let b = 3 * i + 1;
        let _ = writeln!(s, "f {b}//{b} {}//{} {}//{}", b + 1, b + 1, b + 2, b + 2);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
