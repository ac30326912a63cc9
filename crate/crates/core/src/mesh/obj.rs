//! ASCII OBJ subset: `v x y z [r g b]` and triangular `f a b c` lines with
//! 1-based indices. `a/b/c` style face tokens keep only the position index.
//! Everything else (`vn`, `vt`, `o`, `g`, `s`, comments) is ignored.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::TriangleMesh;
use crate::error::{Error, Result};

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_obj(&text, path)
}

/// Parse OBJ text; `path` is only used in error messages.
pub fn parse_obj(text: &str, path: &Path) -> Result<TriangleMesh> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut vertices = Vec::new();
    let mut colors: Vec<Vector3<f64>> = Vec::new();
    let mut faces = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line_no = no + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let nums = tokens
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| err(line_no, format!("bad number {t:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                match nums.len() {
                    3 | 6 => {}
                    n => return Err(err(line_no, format!("vertex has {n} values, expected 3 or 6"))),
                }
                if nums.len() == 6 {
                    if colors.len() != vertices.len() {
                        return Err(err(line_no, "colors given for only some vertices".into()));
                    }
                    colors.push(Vector3::new(nums[3], nums[4], nums[5]));
                } else if !colors.is_empty() {
                    return Err(err(line_no, "colors given for only some vertices".into()));
                }
                vertices.push(Vector3::new(nums[0], nums[1], nums[2]));
            }
            Some("f") => {
                let idx = tokens
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        match first.parse::<i64>() {
                            Ok(i) if i >= 1 => Ok((i - 1) as usize),
                            _ => Err(err(line_no, format!("bad face index {t:?}"))),
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                if idx.len() != 3 {
                    return Err(err(
                        line_no,
                        format!("face has {} vertices, only triangles are supported", idx.len()),
                    ));
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    let mesh = TriangleMesh::new(vertices, faces)?;
    if colors.is_empty() {
        Ok(mesh)
    } else {
        mesh.with_colors(colors)
    }
}

/// Render a mesh as OBJ text. `header` lines are emitted as comments.
pub fn write_obj(mesh: &TriangleMesh, header: &[String]) -> String {
    let mut out = String::new();
    for h in header {
        let _ = writeln!(out, "# {h}");
    }
    for (i, v) in mesh.vertices().iter().enumerate() {
        let _ = write!(out, "v {} {} {}", v.x, v.y, v.z);
        if let Some(c) = mesh.colors() {
            let _ = write!(out, " {} {} {}", c[i].x, c[i].y, c[i].z);
        }
        out.push('\n');
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn save_mesh(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_obj(mesh, &[]))?;
    Ok(())
}
