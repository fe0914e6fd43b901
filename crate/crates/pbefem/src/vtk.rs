//! Legacy-format VTK export of meshes with point and cell data, for
//! visualization of solutions, region tags, and local error indicators.

use crate::mesh::Mesh;
use std::fmt::Write as _;
use std::path::Path;

/// Write an unstructured-grid VTK file. `point_data` arrays have one value
/// per vertex, `cell_data` one per triangle.
pub fn write_vtk(
    mesh: &Mesh,
    path: impl AsRef<Path>,
    point_data: &[(&str, &[f64])],
    cell_data: &[(&str, &[f64])],
) -> std::io::Result<()> {
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    s.push_str("pbefem export\n");
    s.push_str("ASCII\n");
    s.push_str("DATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {} double", mesh.n_vertices());
    for &[x, y] in mesh.vertices() {
        let _ = writeln!(s, "{x} {y} 0");
    }
    let nt = mesh.n_triangles();
    let _ = writeln!(s, "CELLS {nt} {}", 4 * nt);
    for tri in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", tri[0], tri[1], tri[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        s.push_str("5\n");
    }
    if !point_data.is_empty() {
        let _ = writeln!(s, "POINT_DATA {}", mesh.n_vertices());
        for (name, values) in point_data {
            assert_eq!(values.len(), mesh.n_vertices(), "point data '{name}'");
            let _ = writeln!(s, "SCALARS {name} double 1");
            s.push_str("LOOKUP_TABLE default\n");
            for v in *values {
                let _ = writeln!(s, "{v}");
            }
        }
    }
    let _ = writeln!(s, "CELL_DATA {nt}");
    let _ = writeln!(s, "SCALARS region int 1");
    s.push_str("LOOKUP_TABLE default\n");
    for t in 0..nt {
        let _ = writeln!(s, "{}", mesh.region(t));
    }
    for (name, values) in cell_data {
        assert_eq!(values.len(), nt, "cell data '{name}'");
        let _ = writeln!(s, "SCALARS {name} double 1");
        s.push_str("LOOKUP_TABLE default\n");
        for v in *values {
            let _ = writeln!(s, "{v}");
        }
    }
    std::fs::write(path, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vtk_export_has_expected_sections() {
        let mesh = crate::mesh::build_square_with_polygon(1.0, &[], 0.5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.vtk");
        let u: Vec<f64> = (0..mesh.n_vertices()).map(|v| v as f64).collect();
        let eta: Vec<f64> = (0..mesh.n_triangles()).map(|t| t as f64 * 0.5).collect();
        write_vtk(&mesh, &path, &[("u", &u)], &[("eta2", &eta)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        for section in [
            "DATASET UNSTRUCTURED_GRID",
            "POINTS",
            "CELLS",
            "CELL_TYPES",
            "POINT_DATA",
            "SCALARS u double 1",
            "SCALARS region int 1",
            "SCALARS eta2 double 1",
        ] {
            assert!(text.contains(section), "missing {section}");
        }
    }
}
