//! Wavefront OBJ geometry: `v` and `f` records only. Polygons are fan
//! triangulated; degenerate faces are dropped.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Vec3;

use super::mesh::{Material, Mesh};

pub fn parse_obj(text: &str, material: Material) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut dropped = 0usize;
    for (ln, line) in text.lines().enumerate() {
        let loc = || format!("line {}", ln + 1);
        let line = line.split('#').next().unwrap_or("").trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut xyz = [0.0; 3];
                for c in &mut xyz {
                    let s = tok.next().ok_or_else(|| Error::parse(loc(), "vertex needs three coordinates"))?;
                    *c = s.parse().map_err(|_| Error::parse(loc(), format!("bad coordinate `{s}`")))?;
                }
                vertices.push(Vec3::from_array(xyz));
            }
            Some("f") => {
                let idx = tok
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let k: i64 = first.parse().map_err(|_| Error::parse(loc(), format!("bad face index `{t}`")))?;
                        let n = vertices.len() as i64;
                        let abs = if k < 0 { n + k } else { k - 1 };
                        if k == 0 || abs < 0 || abs >= n {
                            return Err(Error::parse(loc(), format!("face index {k} out of range (1..={n})")));
                        }
                        Ok(abs as u32)
                    })
                    .collect::<Result<Vec<u32>>>()?;
                if idx.len() < 3 {
                    return Err(Error::parse(loc(), "face needs at least three vertices"));
                }
                for k in 1..idx.len() - 1 {
                    let t = [idx[0], idx[k], idx[k + 1]];
                    let [a, b, c] = t.map(|i| vertices[i as usize]);
                    if (b - a).cross(c - a).norm() > 0.0 {
                        triangles.push(t);
                    } else {
                        dropped += 1;
                    }
                }
            }
            _ => {}
        }
    }
    if dropped > 0 {
        log::warn!("obj: dropped {dropped} degenerate triangles");
    }
    Mesh::new(vertices, triangles, material)
}

pub fn load_obj(path: &Path, material: Material) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, material).map_err(|e| match e {
        Error::Parse { location, message } => Error::parse(format!("{}: {location}", path.display()), message),
        other => other,
    })
}
