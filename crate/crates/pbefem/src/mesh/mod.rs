//! Conforming triangle meshes with interface and region bookkeeping.
//!
//! A [`Mesh`] is immutable after construction: refinement returns a new mesh
//! whose vertex array extends the old one (existing vertex indices are
//! preserved, which is what makes nodal transfer between nested meshes a
//! prefix copy). Region tags are 1 for the interior subdomain and 2 for the
//! exterior; every edge separating differently tagged triangles carries the
//! interface marker and the interface polyline is resolved exactly by mesh
//! edges at all refinement levels.
//!
//! Local edge convention: edge `k` of triangle `(v0, v1, v2)` is the edge
//! opposite vertex `k`. The refinement edge of every triangle is stored as a
//! local edge index; fresh meshes use the longest edge, bisection children
//! follow the newest-vertex rule.

mod build;
mod io;
mod refine;

pub use build::{build_square_with_polygon, regular_polygon};
pub use io::{load_mesh, save_mesh};
pub use refine::Refinement;

use crate::geo::{self, Point};
use std::sync::OnceLock;
use thiserror::Error;

pub const REGION_INNER: u8 = 1;
pub const REGION_OUTER: u8 = 2;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh has no triangles")]
    Empty,
    #[error("triangle {tri} references missing vertex {vertex}")]
    BadVertexIndex { tri: usize, vertex: usize },
    #[error("triangle {tri} has non-positive area {area}")]
    NonPositiveArea { tri: usize, area: f64 },
    #[error("triangle {tri} is degenerate (repeated vertex)")]
    DegenerateTriangle { tri: usize },
    #[error("edge ({0}, {1}) is shared by more than two triangles")]
    NonManifoldEdge(usize, usize),
    #[error("edge ({0}, {1}) lies on the boundary but is missing from the boundary list")]
    MissingBoundaryEdge(usize, usize),
    #[error("boundary list entry ({0}, {1}) is not a boundary edge of the triangulation")]
    BadBoundaryEdge(usize, usize),
    #[error("triangle {tri} has region tag {tag}, expected 1 or 2")]
    BadRegionTag { tri: usize, tag: u8 },
    #[error("interface list disagrees with region tags at edge ({0}, {1})")]
    InterfaceMismatch(usize, usize),
    #[error("interface polyline is not closed at vertex {vertex} (degree {degree})")]
    InterfaceNotClosed { vertex: usize, degree: usize },
    #[error("vertex {0} is not used by any triangle")]
    IsolatedVertex(usize),
    #[error("marked element {0} is out of range")]
    BadElementId(usize),
    #[error("mesh {fine} is not nested in {coarse}: element {element} has no containing parent")]
    NotNested { fine: String, coarse: String, element: usize },
    #[error("point ({0}, {1}) lies outside the mesh")]
    PointOutside(f64, f64),
    #[error("polygon is degenerate (area {0})")]
    DegeneratePolygon(f64),
    #[error("polygon vertex ({0}, {1}) touches or leaves the square")]
    PolygonOutsideSquare(f64, f64),
    #[error("polygon is self-intersecting")]
    PolygonSelfIntersects,
    #[error("polygon is not star-shaped with respect to its centroid")]
    PolygonNotStarShaped,
    #[error("invalid build parameter: {0}")]
    BadParameter(String),
    #[error("{0}")]
    Io(#[from] io::MeshIoError),
}

/// All triangles containing one vertex.
#[derive(Debug, Clone)]
pub struct VertexPatch {
    pub vertex: usize,
    pub elements: Vec<usize>,
}

#[derive(Debug)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    region: Vec<u8>,
    refinement_edge: Vec<u8>,
    /// Boundary edges as (v0, v1, marker).
    boundary: Vec<(usize, usize, i32)>,
    /// Interface edges as vertex pairs.
    interface: Vec<(usize, usize)>,

    // derived connectivity
    edges: Vec<(usize, usize)>,
    tri_edges: Vec<[usize; 3]>,
    edge_tris: Vec<(usize, Option<usize>)>,
    areas: Vec<f64>,
    boundary_marker: Vec<Option<i32>>,
    interface_flag: Vec<bool>,
    boundary_vertex: Vec<bool>,
    vertex_tris: Vec<Vec<usize>>,

    locator: OnceLock<Locator>,
}

impl Clone for Mesh {
    fn clone(&self) -> Self {
        Mesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
            region: self.region.clone(),
            refinement_edge: self.refinement_edge.clone(),
            boundary: self.boundary.clone(),
            interface: self.interface.clone(),
            edges: self.edges.clone(),
            tri_edges: self.tri_edges.clone(),
            edge_tris: self.edge_tris.clone(),
            areas: self.areas.clone(),
            boundary_marker: self.boundary_marker.clone(),
            interface_flag: self.interface_flag.clone(),
            boundary_vertex: self.boundary_vertex.clone(),
            vertex_tris: self.vertex_tris.clone(),
            locator: OnceLock::new(),
        }
    }
}

fn sorted_pair(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Mesh {
    /// Build a mesh from raw arrays, assigning refinement edges by the
    /// longest-edge rule, and validate all structural invariants.
    pub fn new(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        region: Vec<u8>,
        boundary: Vec<(usize, usize, i32)>,
        interface: Option<Vec<(usize, usize)>>,
    ) -> Result<Self, MeshError> {
        Self::assemble(vertices, triangles, region, boundary, interface, None)
    }

    pub(crate) fn assemble(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        region: Vec<u8>,
        boundary: Vec<(usize, usize, i32)>,
        interface: Option<Vec<(usize, usize)>>,
        refinement_edge: Option<Vec<u8>>,
    ) -> Result<Self, MeshError> {
        if triangles.is_empty() {
            return Err(MeshError::Empty);
        }
        let nv = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= nv {
                    return Err(MeshError::BadVertexIndex { tri: t, vertex: v });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::DegenerateTriangle { tri: t });
            }
        }
        let mut areas = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let a2 = geo::signed_area_x2(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if a2 <= 0.0 {
                return Err(MeshError::NonPositiveArea { tri: t, area: 0.5 * a2 });
            }
            areas.push(0.5 * a2);
        }
        for (t, &r) in region.iter().enumerate() {
            if r != REGION_INNER && r != REGION_OUTER {
                return Err(MeshError::BadRegionTag { tri: t, tag: r });
            }
        }

        // global edge numbering: lexicographically sorted vertex pairs
        let mut edges: Vec<(usize, usize)> = triangles
            .iter()
            .flat_map(|t| (0..3).map(|k| sorted_pair(t[(k + 1) % 3], t[(k + 2) % 3])))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        let edge_id = |a: usize, b: usize| -> usize {
            edges.binary_search(&sorted_pair(a, b)).expect("edge exists")
        };

        let mut tri_edges = vec![[0usize; 3]; triangles.len()];
        let mut edge_tris: Vec<(usize, Option<usize>)> = vec![(usize::MAX, None); edges.len()];
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let e = edge_id(tri[(k + 1) % 3], tri[(k + 2) % 3]);
                tri_edges[t][k] = e;
                match edge_tris[e] {
                    (usize::MAX, None) => edge_tris[e] = (t, None),
                    (first, None) => edge_tris[e] = (first, Some(t)),
                    _ => {
                        let (a, b) = edges[e];
                        return Err(MeshError::NonManifoldEdge(a, b));
                    }
                }
            }
        }

        // boundary bookkeeping: the 1-triangle edges must be exactly the list
        let mut boundary_marker = vec![None; edges.len()];
        for &(a, b, m) in &boundary {
            if a >= nv || b >= nv {
                return Err(MeshError::BadBoundaryEdge(a, b));
            }
            let e = edges
                .binary_search(&sorted_pair(a, b))
                .map_err(|_| MeshError::BadBoundaryEdge(a, b))?;
            if edge_tris[e].1.is_some() {
                return Err(MeshError::BadBoundaryEdge(a, b));
            }
            boundary_marker[e] = Some(m);
        }
        for (e, &(a, b)) in edges.iter().enumerate() {
            if edge_tris[e].1.is_none() && boundary_marker[e].is_none() {
                return Err(MeshError::MissingBoundaryEdge(a, b));
            }
        }

        // interface: edges between different region tags; reconstruct when absent
        let mut interface_flag = vec![false; edges.len()];
        for (e, &(t0, t1)) in edge_tris.iter().enumerate() {
            if let Some(t1) = t1 {
                if region[t0] != region[t1] {
                    interface_flag[e] = true;
                }
            }
        }
        let interface = match interface {
            Some(list) => {
                let mut claimed = vec![false; edges.len()];
                for &(a, b) in &list {
                    let e = edges
                        .binary_search(&sorted_pair(a.min(b), a.max(b)))
                        .map_err(|_| MeshError::InterfaceMismatch(a, b))?;
                    if !interface_flag[e] {
                        return Err(MeshError::InterfaceMismatch(a, b));
                    }
                    claimed[e] = true;
                }
                for (e, &f) in interface_flag.iter().enumerate() {
                    if f && !claimed[e] {
                        let (a, b) = edges[e];
                        return Err(MeshError::InterfaceMismatch(a, b));
                    }
                }
                list
            }
            None => edges
                .iter()
                .enumerate()
                .filter(|&(e, _)| interface_flag[e])
                .map(|(_, &(a, b))| (a, b))
                .collect(),
        };

        // interface edges must form closed polylines
        let mut if_degree = vec![0usize; nv];
        for (e, &f) in interface_flag.iter().enumerate() {
            if f {
                if_degree[edges[e].0] += 1;
                if_degree[edges[e].1] += 1;
            }
        }
        for (v, &d) in if_degree.iter().enumerate() {
            if d != 0 && d != 2 {
                return Err(MeshError::InterfaceNotClosed { vertex: v, degree: d });
            }
        }

        let mut vertex_tris = vec![Vec::new(); nv];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                vertex_tris[v].push(t);
            }
        }
        for (v, tris) in vertex_tris.iter().enumerate() {
            if tris.is_empty() {
                return Err(MeshError::IsolatedVertex(v));
            }
        }

        let mut boundary_vertex = vec![false; nv];
        for (e, m) in boundary_marker.iter().enumerate() {
            if m.is_some() {
                boundary_vertex[edges[e].0] = true;
                boundary_vertex[edges[e].1] = true;
            }
        }

        let refinement_edge = match refinement_edge {
            Some(r) => r,
            None => triangles
                .iter()
                .map(|tri| {
                    let mut best = 0u8;
                    let mut best_len = -1.0;
                    for k in 0..3 {
                        let len =
                            geo::dist(vertices[tri[(k + 1) % 3]], vertices[tri[(k + 2) % 3]]);
                        if len > best_len {
                            best_len = len;
                            best = k as u8;
                        }
                    }
                    best
                })
                .collect(),
        };

        Ok(Mesh {
            vertices,
            triangles,
            region,
            refinement_edge,
            boundary,
            interface,
            edges,
            tri_edges,
            edge_tris,
            areas,
            boundary_marker,
            interface_flag,
            boundary_vertex,
            vertex_tris,
            locator: OnceLock::new(),
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }
    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }
    pub fn vertex(&self, v: usize) -> Point {
        self.vertices[v]
    }
    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }
    pub fn triangle(&self, t: usize) -> [usize; 3] {
        self.triangles[t]
    }
    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }
    pub fn region(&self, t: usize) -> u8 {
        self.region[t]
    }
    pub fn regions(&self) -> &[u8] {
        &self.region
    }
    pub fn area(&self, t: usize) -> f64 {
        self.areas[t]
    }
    pub fn refinement_edge(&self, t: usize) -> u8 {
        self.refinement_edge[t]
    }
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
    pub fn edge_vertices(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }
    /// Global edge ids of the three local edges (edge k opposite vertex k).
    pub fn tri_edges(&self, t: usize) -> [usize; 3] {
        self.tri_edges[t]
    }
    pub fn edge_triangles(&self, e: usize) -> (usize, Option<usize>) {
        self.edge_tris[e]
    }
    pub fn edge_length(&self, e: usize) -> f64 {
        let (a, b) = self.edges[e];
        geo::dist(self.vertices[a], self.vertices[b])
    }
    pub fn boundary_edges(&self) -> &[(usize, usize, i32)] {
        &self.boundary
    }
    pub fn interface_edges(&self) -> &[(usize, usize)] {
        &self.interface
    }
    pub fn is_interface_edge(&self, e: usize) -> bool {
        self.interface_flag[e]
    }
    pub fn is_boundary_edge(&self, e: usize) -> bool {
        self.boundary_marker[e].is_some()
    }
    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }
    pub fn triangles_of_vertex(&self, v: usize) -> &[usize] {
        &self.vertex_tris[v]
    }

    /// Physical point of a barycentric coordinate inside an element.
    pub fn point_at(&self, t: usize, b: [f64; 3]) -> Point {
        let [i, j, k] = self.triangles[t];
        let (p, q, r) = (self.vertices[i], self.vertices[j], self.vertices[k]);
        [
            b[0] * p[0] + b[1] * q[0] + b[2] * r[0],
            b[0] * p[1] + b[1] * q[1] + b[2] * r[1],
        ]
    }

    pub fn centroid(&self, t: usize) -> Point {
        self.point_at(t, [1.0 / 3.0; 3])
    }

    /// Gradients of the three P1 basis functions on an element (constant).
    pub fn p1_gradients(&self, t: usize) -> [[f64; 2]; 3] {
        let [i, j, k] = self.triangles[t];
        let (p, q, r) = (self.vertices[i], self.vertices[j], self.vertices[k]);
        let d = 2.0 * self.areas[t];
        // grad of the hat at vertex i is the rotated opposite edge / (2|K|)
        [
            [(q[1] - r[1]) / d, (r[0] - q[0]) / d],
            [(r[1] - p[1]) / d, (p[0] - r[0]) / d],
            [(p[1] - q[1]) / d, (q[0] - p[0]) / d],
        ]
    }

    pub fn total_area(&self) -> f64 {
        crate::quad::pairwise_sum(&self.areas)
    }

    /// One patch per vertex; patch elements are the incident triangles.
    pub fn vertex_patches(&self) -> Vec<VertexPatch> {
        self.vertex_tris
            .iter()
            .enumerate()
            .map(|(v, tris)| VertexPatch { vertex: v, elements: tris.clone() })
            .collect()
    }

    /// Locate the element containing a point (ties broken by element id).
    pub fn locate(&self, p: Point) -> Option<usize> {
        self.locator().locate(self, p)
    }

    /// For every element of `fine`, the element of `self` containing it.
    ///
    /// Verifies actual containment of all three corners, so a non-nested pair
    /// is reported instead of producing garbage transfers.
    pub fn containing_elements(&self, fine: &Mesh) -> Result<Vec<usize>, MeshError> {
        let not_nested = |element| MeshError::NotNested {
            fine: format!("mesh[{} tris]", fine.n_triangles()),
            coarse: format!("mesh[{} tris]", self.n_triangles()),
            element,
        };
        (0..fine.n_triangles())
            .map(|t| {
                let c = self.locate(fine.centroid(t)).ok_or_else(|| not_nested(t))?;
                let [i, j, k] = self.triangles[c];
                let (a, b, d) = (self.vertices[i], self.vertices[j], self.vertices[k]);
                let h = self.areas[c].sqrt();
                for &v in &fine.triangles[t] {
                    let bc = geo::barycentric(fine.vertices[v], a, b, d);
                    if bc.iter().any(|&l| l < -1e-9 * h.max(1.0) - 1e-12) {
                        return Err(not_nested(t));
                    }
                }
                Ok(c)
            })
            .collect()
    }

    fn locator(&self) -> &Locator {
        self.locator.get_or_init(|| Locator::build(self))
    }
}

/// Uniform-bin point locator over the mesh bounding box.
#[derive(Debug)]
struct Locator {
    x0: f64,
    y0: f64,
    inv_h: f64,
    nx: usize,
    ny: usize,
    bins: Vec<Vec<u32>>,
}

impl Locator {
    fn build(mesh: &Mesh) -> Self {
        let (mut xmin, mut ymin) = (f64::INFINITY, f64::INFINITY);
        let (mut xmax, mut ymax) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &[x, y] in &mesh.vertices {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
        let span = (xmax - xmin).max(ymax - ymin).max(1e-300);
        let target = (mesh.n_triangles() as f64).sqrt().ceil() as usize;
        let n = target.clamp(1, 2048);
        let h = span / n as f64;
        let nx = (((xmax - xmin) / h).ceil() as usize).max(1);
        let ny = (((ymax - ymin) / h).ceil() as usize).max(1);
        let mut bins = vec![Vec::new(); nx * ny];
        let clampi = |v: f64, n: usize| (v.floor().max(0.0) as usize).min(n - 1);
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let xs = tri.map(|v| mesh.vertices[v][0]);
            let ys = tri.map(|v| mesh.vertices[v][1]);
            let ix0 = clampi((xs.iter().cloned().fold(f64::INFINITY, f64::min) - xmin) / h, nx);
            let ix1 = clampi((xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - xmin) / h, nx);
            let iy0 = clampi((ys.iter().cloned().fold(f64::INFINITY, f64::min) - ymin) / h, ny);
            let iy1 = clampi((ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - ymin) / h, ny);
            for iy in iy0..=iy1 {
                for ix in ix0..=ix1 {
                    bins[iy * nx + ix].push(t as u32);
                }
            }
        }
        Locator { x0: xmin, y0: ymin, inv_h: 1.0 / h, nx, ny, bins }
    }

    fn locate(&self, mesh: &Mesh, p: Point) -> Option<usize> {
        let ix = (((p[0] - self.x0) * self.inv_h).floor().max(0.0) as usize).min(self.nx - 1);
        let iy = (((p[1] - self.y0) * self.inv_h).floor().max(0.0) as usize).min(self.ny - 1);
        let mut best: Option<(f64, usize)> = None;
        for &t in &self.bins[iy * self.nx + ix] {
            let t = t as usize;
            let [i, j, k] = mesh.triangles[t];
            let b = geo::barycentric(p, mesh.vertices[i], mesh.vertices[j], mesh.vertices[k]);
            let worst = b.iter().cloned().fold(f64::INFINITY, f64::min);
            if worst >= 0.0 {
                return Some(t);
            }
            if worst > -1e-10 {
                match best {
                    Some((w, _)) if w >= worst => {}
                    _ => best = Some((worst, t)),
                }
            }
        }
        best.map(|(_, t)| t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_triangle_square() -> Mesh {
        // unit square split along the diagonal (0,0)-(1,1)
        Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
            vec![REGION_OUTER, REGION_OUTER],
            vec![(0, 1, 1), (1, 2, 1), (2, 3, 1), (3, 0, 1)],
            None,
        )
        .unwrap()
    }

    #[test]
    fn patches_of_two_triangle_square() {
        let mesh = two_triangle_square();
        let patches = mesh.vertex_patches();
        assert_eq!(patches.len(), 4);
        // diagonal vertices 0 and 2 belong to both triangles
        assert_eq!(patches[0].elements, vec![0, 1]);
        assert_eq!(patches[2].elements, vec![0, 1]);
        assert_eq!(patches[1].elements, vec![0]);
        assert_eq!(patches[3].elements, vec![1]);
        let total: usize = patches.iter().map(|p| p.elements.len()).sum();
        assert_eq!(total, 3 * mesh.n_triangles());
    }

    #[test]
    fn single_triangle_patches() {
        let mesh = Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            vec![REGION_OUTER],
            vec![(0, 1, 1), (1, 2, 1), (2, 0, 1)],
            None,
        )
        .unwrap();
        let patches = mesh.vertex_patches();
        assert_eq!(patches.len(), 3);
        assert!(patches.iter().all(|p| p.elements == vec![0]));
    }

    #[test]
    fn rejects_missing_vertex_and_negative_area() {
        let e = Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0]],
            vec![[0, 1, 7]],
            vec![2],
            vec![],
            None,
        )
        .unwrap_err();
        assert!(matches!(e, MeshError::BadVertexIndex { tri: 0, vertex: 7 }));
        let e = Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 2, 1]],
            vec![2],
            vec![(0, 1, 1), (1, 2, 1), (2, 0, 1)],
            None,
        )
        .unwrap_err();
        assert!(matches!(e, MeshError::NonPositiveArea { tri: 0, .. }));
    }

    #[test]
    fn locate_finds_elements() {
        let mesh = two_triangle_square();
        assert_eq!(mesh.locate([0.8, 0.1]), Some(0));
        assert_eq!(mesh.locate([0.1, 0.8]), Some(1));
        assert_eq!(mesh.locate([5.0, 5.0]), None);
    }

    #[test]
    fn p1_gradients_sum_to_zero() {
        let mesh = two_triangle_square();
        for t in 0..mesh.n_triangles() {
            let g = mesh.p1_gradients(t);
            assert!((g[0][0] + g[1][0] + g[2][0]).abs() < 1e-14);
            assert!((g[0][1] + g[1][1] + g[2][1]).abs() < 1e-14);
        }
    }
}
