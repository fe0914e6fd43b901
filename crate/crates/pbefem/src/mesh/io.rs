//! Plain-text mesh format.
//!
//! ```text
//! PBEMESH 1
//! VERTICES n
//! x y                (n lines)
//! TRIANGLES m
//! i j k region       (m lines, 0-based indices)
//! BOUNDARY b
//! i j marker         (b lines)
//! INTERFACE g
//! i j                (g lines)
//! ```
//!
//! The INTERFACE section may be absent in legacy files; the markers are then
//! reconstructed from region-tag discontinuities. Bisection lineage is not
//! stored: loaded meshes restart from the longest-edge rule.

use super::{Mesh, MeshError};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshIoError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {what}")]
    Parse { line: usize, what: String },
}

struct Lines<'a> {
    iter: std::str::Lines<'a>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Option<(usize, &'a str)> {
        for l in self.iter.by_ref() {
            self.line += 1;
            let t = l.trim();
            if !t.is_empty() {
                return Some((self.line, t));
            }
        }
        None
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str), MeshIoError> {
        self.next().ok_or_else(|| MeshIoError::Parse {
            line: self.line + 1,
            what: format!("unexpected end of file, expected {what}"),
        })
    }
}

fn parse_err(line: usize, what: impl Into<String>) -> MeshIoError {
    MeshIoError::Parse { line, what: what.into() }
}

fn section_header(line: usize, text: &str, name: &str) -> Result<usize, MeshIoError> {
    let mut it = text.split_whitespace();
    match (it.next(), it.next(), it.next()) {
        (Some(n), Some(count), None) if n == name => count
            .parse()
            .map_err(|_| parse_err(line, format!("bad {name} count field '{count}'"))),
        _ => Err(parse_err(line, format!("expected '{name} <count>', got '{text}'"))),
    }
}

fn fields<'a, const N: usize>(line: usize, text: &'a str, what: &str) -> Result<[&'a str; N], MeshIoError> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    parts
        .try_into()
        .map_err(|_| parse_err(line, format!("expected {N} fields ({what}), got '{text}'")))
}

/// Parse a mesh from the text format.
pub fn parse_mesh(text: &str) -> Result<Mesh, MeshError> {
    let mut lines = Lines { iter: text.lines(), line: 0 };

    let (ln, header) = lines.expect("PBEMESH header")?;
    if header != "PBEMESH 1" {
        return Err(parse_err(ln, format!("expected 'PBEMESH 1', got '{header}'")).into());
    }

    let (ln, sec) = lines.expect("VERTICES section")?;
    let nv = section_header(ln, sec, "VERTICES")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, row) = lines.expect("vertex line")?;
        let [x, y] = fields(ln, row, "x y")?;
        let parse = |s: &str, which| {
            s.parse::<f64>()
                .map_err(|_| parse_err(ln, format!("bad {which} coordinate '{s}'")))
        };
        vertices.push([parse(x, "x")?, parse(y, "y")?]);
    }

    let (ln, sec) = lines.expect("TRIANGLES section")?;
    let nt = section_header(ln, sec, "TRIANGLES")?;
    let mut triangles = Vec::with_capacity(nt);
    let mut region = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (ln, row) = lines.expect("triangle line")?;
        let [i, j, k, r] = fields(ln, row, "i j k region")?;
        let idx = |s: &str, which| {
            s.parse::<usize>()
                .map_err(|_| parse_err(ln, format!("bad {which} vertex index '{s}'")))
        };
        triangles.push([idx(i, "first")?, idx(j, "second")?, idx(k, "third")?]);
        region.push(
            r.parse::<u8>()
                .map_err(|_| parse_err(ln, format!("bad region tag '{r}'")))?,
        );
    }

    let (ln, sec) = lines.expect("BOUNDARY section")?;
    let nb = section_header(ln, sec, "BOUNDARY")?;
    let mut boundary = Vec::with_capacity(nb);
    for _ in 0..nb {
        let (ln, row) = lines.expect("boundary edge line")?;
        let [i, j, m] = fields(ln, row, "i j marker")?;
        let idx = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(ln, format!("bad boundary vertex index '{s}'")))
        };
        boundary.push((
            idx(i)?,
            idx(j)?,
            m.parse::<i32>()
                .map_err(|_| parse_err(ln, format!("bad boundary marker '{m}'")))?,
        ));
    }

    let interface = match lines.next() {
        None => None,
        Some((ln, sec)) => {
            let ng = section_header(ln, sec, "INTERFACE")?;
            let mut interface = Vec::with_capacity(ng);
            for _ in 0..ng {
                let (ln, row) = lines.expect("interface edge line")?;
                let [i, j] = fields(ln, row, "i j")?;
                let idx = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| parse_err(ln, format!("bad interface vertex index '{s}'")))
                };
                interface.push((idx(i)?, idx(j)?));
            }
            Some(interface)
        }
    };

    Mesh::new(vertices, triangles, region, boundary, interface)
}

/// Serialize a mesh to the text format.
pub fn format_mesh(mesh: &Mesh) -> String {
    let mut s = String::new();
    s.push_str("PBEMESH 1\n");
    let _ = writeln!(s, "VERTICES {}", mesh.n_vertices());
    for &[x, y] in mesh.vertices() {
        let _ = writeln!(s, "{x} {y}");
    }
    let _ = writeln!(s, "TRIANGLES {}", mesh.n_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let _ = writeln!(s, "{} {} {} {}", tri[0], tri[1], tri[2], mesh.region(t));
    }
    let _ = writeln!(s, "BOUNDARY {}", mesh.boundary_edges().len());
    for &(i, j, m) in mesh.boundary_edges() {
        let _ = writeln!(s, "{i} {j} {m}");
    }
    let _ = writeln!(s, "INTERFACE {}", mesh.interface_edges().len());
    for &(i, j) in mesh.interface_edges() {
        let _ = writeln!(s, "{i} {j}");
    }
    s
}

pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<(), MeshError> {
    std::fs::write(path, format_mesh(mesh)).map_err(MeshIoError::from)?;
    Ok(())
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh, MeshError> {
    let text = std::fs::read_to_string(path).map_err(MeshIoError::from)?;
    parse_mesh(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_with_tags() -> Mesh {
        let poly = vec![[0.5, -0.5], [0.5, 0.5], [-0.5, 0.5], [-0.5, -0.5]];
        crate::mesh::build_square_with_polygon(2.0, &poly, 0.7).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let mesh = square_with_tags().refine(&[0]).unwrap().mesh;
        let text = format_mesh(&mesh);
        let back = parse_mesh(&text).unwrap();
        assert_eq!(back.triangles(), mesh.triangles());
        assert_eq!(back.vertices(), mesh.vertices());
        assert_eq!(back.regions(), mesh.regions());
        assert_eq!(back.boundary_edges(), mesh.boundary_edges());
        assert_eq!(back.interface_edges(), mesh.interface_edges());
        // and the text itself is stable
        assert_eq!(format_mesh(&back), text);
    }

    #[test]
    fn missing_vertex_reports_triangle() {
        let text = "PBEMESH 1\nVERTICES 3\n0 0\n1 0\n0 1\nTRIANGLES 1\n0 1 9 2\nBOUNDARY 3\n0 1 1\n1 9 1\n9 0 1\n";
        match parse_mesh(text) {
            Err(MeshError::BadVertexIndex { tri: 0, vertex: 9 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_position() {
        let text = "PBEMESH 1\nVERTICES 2\n0 0\noops 1\n";
        match parse_mesh(text) {
            Err(MeshError::Io(MeshIoError::Parse { line: 4, what })) => {
                assert!(what.contains("x coordinate"), "{what}");
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn legacy_file_without_interface_reconstructs_markers() {
        let mesh = square_with_tags();
        let mut text = format_mesh(&mesh);
        let cut = text.find("INTERFACE").unwrap();
        text.truncate(cut);
        let back = parse_mesh(&text).unwrap();
        // reconstruction normalizes pair order, so compare as sorted sets
        let norm = |list: &[(usize, usize)]| {
            let mut v: Vec<(usize, usize)> =
                list.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
            v.sort_unstable();
            v
        };
        assert_eq!(norm(back.interface_edges()), norm(mesh.interface_edges()));
        assert!(!back.interface_edges().is_empty());
    }
}
