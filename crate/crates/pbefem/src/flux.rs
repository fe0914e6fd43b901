//! Dual (flux) approximations in H(div): patchwise equilibrated lowest-order
//! Raviart-Thomas reconstruction and the global gradient-averaging baseline.
//!
//! The equilibrated flux `y` satisfies, elementwise and up to solver
//! rounding, `div y = P0(k^2 sinh(u_h + w) - l)`; in particular `div y + l
//! = 0` wherever `k = 0` and `l = 0`, which is the admissibility constraint
//! of the error majorant. It is assembled from independent vertex-patch
//! problems: on each patch the hat-weighted residual is lifted into a local
//! RT0 space with zero normal flux through the patch boundary (free flux on
//! the part lying on the outer boundary), picking the minimizer of the
//! (1/eps)-weighted norm among admissible corrections. Interior patches are
//! solvable because the hat functions are Galerkin test functions; the tiny
//! leftover Newton residual is spread area-proportionally so the local
//! systems stay exactly compatible.

use crate::fem::{P1Field, Problem};
use crate::geo;
use crate::linalg::CsrMatrix;
use crate::mesh::{Mesh, MeshError};
use crate::quad::{self, QuadError};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FluxError {
    #[error("singular local problem on the patch of vertex {vertex}")]
    SingularPatch { vertex: usize },
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Linear(#[from] crate::linalg::LinSolveError),
    #[error("flux file: {0}")]
    Io(String),
}

/// Anything usable as a dual variable: evaluable inside elements with an
/// elementwise-constant divergence.
pub trait DualFlux: Sync {
    fn value(&self, elem: usize, bary: [f64; 3]) -> [f64; 2];
    fn divergence(&self, elem: usize) -> f64;
}

/// Lowest-order Raviart-Thomas field; one signed normal-flux dof per edge.
///
/// The dof on edge `e = (a, b)` (a < b in the global numbering) is the
/// integrated flux through the edge in the direction of the fixed global
/// normal `rot(b - a) = (b.y - a.y, a.x - b.x)` normalized. Normal-flux
/// continuity across edges is structural: both neighbors read the same dof.
#[derive(Debug, Clone)]
pub struct FluxField {
    mesh: Arc<Mesh>,
    edge_flux: Vec<f64>,
}

impl FluxField {
    pub fn new(mesh: Arc<Mesh>, edge_flux: Vec<f64>) -> Result<Self, FluxError> {
        if edge_flux.len() != mesh.n_edges() {
            return Err(FluxError::Io(format!(
                "{} dofs for {} edges",
                edge_flux.len(),
                mesh.n_edges()
            )));
        }
        Ok(FluxField { mesh, edge_flux })
    }

    pub fn zeros(mesh: Arc<Mesh>) -> Self {
        let n = mesh.n_edges();
        FluxField { mesh, edge_flux: vec![0.0; n] }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn edge_flux(&self) -> &[f64] {
        &self.edge_flux
    }

    /// Sign of the global edge normal relative to the outward direction of
    /// the element (+1 when the global normal points out of `elem`).
    fn orientation(mesh: &Mesh, elem: usize, local_edge: usize) -> f64 {
        let tri = mesh.triangle(elem);
        let opposite = tri[local_edge];
        let (a, b) = mesh.edge_vertices(mesh.tri_edges(elem)[local_edge]);
        let (pa, pb) = (mesh.vertex(a), mesh.vertex(b));
        let n = [pb[1] - pa[1], pa[0] - pb[0]];
        let mid = geo::midpoint(pa, pb);
        let outward = geo::sub(mid, mesh.vertex(opposite));
        if geo::dot(n, outward) >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), FluxError> {
        let mut s = String::from("PBEFLUX 1\n");
        s.push_str(&format!("{}\n", self.edge_flux.len()));
        for (e, v) in self.edge_flux.iter().enumerate() {
            let (a, b) = self.mesh.edge_vertices(e);
            s.push_str(&format!("{a} {b} {v}\n"));
        }
        std::fs::write(path, s).map_err(|e| FluxError::Io(e.to_string()))
    }

    pub fn load(mesh: Arc<Mesh>, path: impl AsRef<std::path::Path>) -> Result<Self, FluxError> {
        let text = std::fs::read_to_string(path).map_err(|e| FluxError::Io(e.to_string()))?;
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("PBEFLUX 1") {
            return Err(FluxError::Io("expected 'PBEFLUX 1' header".into()));
        }
        let n: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| FluxError::Io("bad edge count".into()))?;
        let mut flux = vec![0.0; mesh.n_edges()];
        if n != mesh.n_edges() {
            return Err(FluxError::Io(format!("{n} edges in file, {} in mesh", mesh.n_edges())));
        }
        for (i, line) in lines.take(n).enumerate() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || FluxError::Io(format!("edge line {}: '{line}'", i + 3));
            if parts.len() != 3 {
                return Err(bad());
            }
            let a: usize = parts[0].parse().map_err(|_| bad())?;
            let b: usize = parts[1].parse().map_err(|_| bad())?;
            let v: f64 = parts[2].parse().map_err(|_| bad())?;
            let e = mesh
                .edges()
                .binary_search(&(a.min(b), a.max(b)))
                .map_err(|_| bad())?;
            flux[e] = v;
        }
        FluxField::new(mesh, flux)
    }
}

impl DualFlux for FluxField {
    fn value(&self, elem: usize, bary: [f64; 3]) -> [f64; 2] {
        let mesh = &self.mesh;
        let tri = mesh.triangle(elem);
        let area = mesh.area(elem);
        let x = mesh.point_at(elem, bary);
        let mut v = [0.0, 0.0];
        for local in 0..3 {
            let e = mesh.tri_edges(elem)[local];
            let sign = Self::orientation(mesh, elem, local);
            let p = mesh.vertex(tri[local]);
            let c = sign * self.edge_flux[e] / (2.0 * area);
            v[0] += c * (x[0] - p[0]);
            v[1] += c * (x[1] - p[1]);
        }
        v
    }

    fn divergence(&self, elem: usize) -> f64 {
        let mesh = &self.mesh;
        let area = mesh.area(elem);
        let mut d = 0.0;
        for local in 0..3 {
            let e = mesh.tri_edges(elem)[local];
            d += Self::orientation(mesh, elem, local) * self.edge_flux[e];
        }
        d / area
    }
}

/// Continuous P1 vector field (the gradient-averaging result).
#[derive(Debug, Clone)]
pub struct VectorP1Field {
    pub x: P1Field,
    pub y: P1Field,
}

impl DualFlux for VectorP1Field {
    fn value(&self, elem: usize, bary: [f64; 3]) -> [f64; 2] {
        [self.x.value_at(elem, bary), self.y.value_at(elem, bary)]
    }

    fn divergence(&self, elem: usize) -> f64 {
        self.x.gradient(elem)[0] + self.y.gradient(elem)[1]
    }
}

/// The broken elementwise field `eps grad v`. Not in H(div); usable only
/// where a norm of `eps grad v - y` is evaluated.
pub struct BrokenGradient<'a> {
    pub v: &'a P1Field,
    pub problem: &'a Problem,
}

impl DualFlux for BrokenGradient<'_> {
    fn value(&self, elem: usize, _bary: [f64; 3]) -> [f64; 2] {
        let g = self.v.gradient(elem);
        let eps = self.problem.eps_at(elem);
        [eps * g[0], eps * g[1]]
    }

    fn divergence(&self, _elem: usize) -> f64 {
        0.0
    }
}

/// Elementwise L2 projection of `k^2 sinh(u_h + w) - l` onto piecewise
/// constants: the divergence the reconstructed flux must match.
pub fn target_divergence(problem: &Problem, u: &P1Field) -> Result<Vec<f64>, FluxError> {
    let mesh = &problem.mesh;
    let per = quad::integrate_per_element(mesh, problem.spec.quad_order, |t, b| {
        problem.b_value(t, b, u.value_at(t, b)) - problem.l.eval(mesh, t, b)
    })?;
    Ok((0..mesh.n_triangles()).map(|t| per[t] / mesh.area(t)).collect())
}

/// Patchwise equilibrated RT0 reconstruction of the numerical flux
/// `eps grad u_h`.
///
/// `u_h` must be the Galerkin solution of `problem` (up to the Newton
/// tolerance): interior-patch solvability is exactly Galerkin orthogonality
/// against the patch hat function. Returns the flux whose elementwise
/// divergence matches [`target_divergence`] to solver rounding.
pub fn equilibrate(problem: &Problem, u: &P1Field) -> Result<FluxField, FluxError> {
    let mesh = problem.mesh.clone();
    let rule = quad::rule(problem.spec.quad_order)?;
    let rule2 = quad::rule(2)?;

    // per-element, per-hat residual moments r[t][local] and flux moments
    type PatchContribution = Vec<(usize, f64)>; // (edge id, flux dof increment)
    let patch_results: Result<Vec<PatchContribution>, FluxError> = (0..mesh.n_vertices())
        .into_par_iter()
        .map(|vertex| {
            let elems = mesh.triangles_of_vertex(vertex);
            // local edge numbering: all edges of the patch, sorted by global id
            let mut edges: Vec<usize> = elems
                .iter()
                .flat_map(|&t| mesh.tri_edges(t))
                .collect();
            edges.sort_unstable();
            edges.dedup();
            let boundary_vertex = mesh.is_boundary_vertex(vertex);
            // free dofs: edges containing the vertex; on boundary-vertex
            // patches additionally the far edges lying on the outer boundary
            // (free normal flux there keeps the local problem solvable
            // without a compatibility condition)
            let free: Vec<usize> = edges
                .iter()
                .cloned()
                .filter(|&e| {
                    let (a, b) = mesh.edge_vertices(e);
                    a == vertex || b == vertex || (boundary_vertex && mesh.is_boundary_edge(e))
                })
                .collect();
            let nf = free.len();
            let ne = elems.len();
            let free_index = |e: usize| free.binary_search(&e).ok();

            // weighted RT0 mass matrix and moment rhs on the free dofs
            let mut m = DMatrix::<f64>::zeros(nf, nf);
            let mut rhs_m = DVector::<f64>::zeros(nf);
            // divergence constraints: one row per element
            let mut bmat = DMatrix::<f64>::zeros(ne, nf);
            let mut c = DVector::<f64>::zeros(ne);

            for (row, &t) in elems.iter().enumerate() {
                let tri = mesh.triangle(t);
                let area = mesh.area(t);
                let eps = problem.eps_at(t);
                let local_hat = tri.iter().position(|&v| v == vertex).expect("vertex in tri");
                let grads = mesh.p1_gradients(t);
                let gu = u.gradient(t);

                // residual moment r_K = Q(phi_i (l - b(u+w))) - eps area grad phi_i . grad u
                let mut r = -eps
                    * area
                    * (grads[local_hat][0] * gu[0] + grads[local_hat][1] * gu[1]);
                for (p, wq) in rule.points.iter().zip(&rule.weights) {
                    let z = u.value_at(t, *p);
                    let bval = problem.b_value(t, *p, z);
                    if !bval.is_finite() {
                        return Err(QuadError::NonFinite { element: t, point: *p }.into());
                    }
                    r += wq * area * (problem.l.eval(&mesh, t, *p) - bval) * p[local_hat];
                }
                c[row] = -r;

                // local RT0 bases on this element, restricted to free dofs
                for li in 0..3 {
                    let ei = mesh.tri_edges(t)[li];
                    let Some(fi) = free_index(ei) else { continue };
                    let si = FluxField::orientation(&mesh, t, li);
                    bmat[(row, fi)] += si;
                    let pi = mesh.vertex(tri[li]);
                    // moment rhs: integral (phi_hat grad u) . chi_i
                    for (p, wq) in rule2.points.iter().zip(&rule2.weights) {
                        let x = mesh.point_at(t, *p);
                        let chi = [
                            si * (x[0] - pi[0]) / (2.0 * area),
                            si * (x[1] - pi[1]) / (2.0 * area),
                        ];
                        rhs_m[fi] +=
                            wq * area * p[local_hat] * (gu[0] * chi[0] + gu[1] * chi[1]);
                        for lj in 0..3 {
                            let ej = mesh.tri_edges(t)[lj];
                            let Some(fj) = free_index(ej) else { continue };
                            let sj = FluxField::orientation(&mesh, t, lj);
                            let pj = mesh.vertex(tri[lj]);
                            let chj = [
                                sj * (x[0] - pj[0]) / (2.0 * area),
                                sj * (x[1] - pj[1]) / (2.0 * area),
                            ];
                            m[(fi, fj)] += wq * area / eps
                                * (chi[0] * chj[0] + chi[1] * chj[1]);
                        }
                    }
                }
            }

            // constraint rows are d_K = c_K / |K| scaled by |K|: B sigma = c
            // interior patches: spread the (tiny) Galerkin residual so the
            // constraints are exactly compatible, then drop one row
            let mut keep_rows = ne;
            if !boundary_vertex {
                let patch_area: f64 = elems.iter().map(|&t| mesh.area(t)).sum();
                let defect: f64 = c.iter().sum();
                for (row, &t) in elems.iter().enumerate() {
                    c[row] -= defect * mesh.area(t) / patch_area;
                }
                keep_rows = ne - 1;
            }

            // assemble the saddle system [M B^T; B 0]
            let dim = nf + keep_rows;
            let mut sys = DMatrix::<f64>::zeros(dim, dim);
            let mut rhs = DVector::<f64>::zeros(dim);
            for i in 0..nf {
                for j in 0..nf {
                    sys[(i, j)] = m[(i, j)];
                }
                rhs[i] = rhs_m[i];
            }
            for r in 0..keep_rows {
                for j in 0..nf {
                    sys[(nf + r, j)] = bmat[(r, j)];
                    sys[(j, nf + r)] = bmat[(r, j)];
                }
                rhs[nf + r] = c[r];
            }
            let lu = sys.lu();
            let sol = lu
                .solve(&rhs)
                .ok_or(FluxError::SingularPatch { vertex })?;
            // reject garbage from nearly singular systems
            if sol.iter().any(|v| !v.is_finite()) {
                return Err(FluxError::SingularPatch { vertex });
            }
            Ok(free.iter().enumerate().map(|(i, &e)| (e, sol[i])).collect())
        })
        .collect();

    let mut edge_flux = vec![0.0; mesh.n_edges()];
    for contribution in patch_results? {
        for (e, v) in contribution {
            edge_flux[e] += v;
        }
    }
    Ok(FluxField { mesh, edge_flux })
}

/// Global L2 projection of the elementwise flux `eps grad u_h` onto
/// continuous P1 vector fields (consistent mass matrix, one SPD solve per
/// component). Violates the divergence target in general; comparison
/// baseline only.
pub fn gradient_average(problem: &Problem, u: &P1Field) -> Result<VectorP1Field, FluxError> {
    let mesh = problem.mesh.clone();
    let mass = crate::fem::assemble_mass(&mesh);
    let mut rhs_x = vec![0.0; mesh.n_vertices()];
    let mut rhs_y = vec![0.0; mesh.n_vertices()];
    for t in 0..mesh.n_triangles() {
        let tri = mesh.triangle(t);
        let g = u.gradient(t);
        let eps = problem.eps_at(t);
        let third = mesh.area(t) / 3.0;
        for &v in &tri {
            rhs_x[v] += third * eps * g[0];
            rhs_y[v] += third * eps * g[1];
        }
    }
    let x = crate::linalg::solve_spd(&mass, &rhs_x)?;
    let y = crate::linalg::solve_spd(&mass, &rhs_y)?;
    Ok(VectorP1Field {
        x: P1Field::new(mesh.clone(), x).expect("size"),
        y: P1Field::new(mesh, y).expect("size"),
    })
}

/// Largest elementwise deviation `|div y - target|`.
pub fn divergence_defect(mesh: &Mesh, y: &FluxField, target: &[f64]) -> f64 {
    (0..mesh.n_triangles())
        .map(|t| (y.divergence(t) - target[t]).abs())
        .fold(0.0, f64::max)
}

/// Consistency helper for tests: the mass matrix of the projection is the
/// standard P1 mass.
pub fn projection_mass(mesh: &Mesh) -> CsrMatrix {
    crate::fem::assemble_mass(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{FieldData, Nonlinearity, ProblemSpec};
    use crate::mesh::build_square_with_polygon;
    use crate::newton::{newton_solve, NewtonOptions};

    const PI: f64 = std::f64::consts::PI;

    #[test]
    fn rt0_normal_flux_is_single_valued() {
        let mesh = Arc::new(build_square_with_polygon(1.0, &[], 0.4).unwrap());
        let flux = FluxField::new(
            mesh.clone(),
            (0..mesh.n_edges()).map(|e| (e as f64 * 0.7).sin()).collect(),
        )
        .unwrap();
        for e in 0..mesh.n_edges() {
            let (t0, t1) = mesh.edge_triangles(e);
            let Some(t1) = t1 else { continue };
            let (a, b) = mesh.edge_vertices(e);
            let mid = geo::midpoint(mesh.vertex(a), mesh.vertex(b));
            let tvec = geo::sub(mesh.vertex(b), mesh.vertex(a));
            let len = geo::norm(tvec);
            let n = [tvec[1] / len, -tvec[0] / len];
            let locate = |t: usize| {
                let [i, j, k] = mesh.triangle(t);
                geo::barycentric(mid, mesh.vertex(i), mesh.vertex(j), mesh.vertex(k))
            };
            let v0 = flux.value(t0, locate(t0));
            let v1 = flux.value(t1, locate(t1));
            assert!(
                ((v0[0] - v1[0]) * n[0] + (v0[1] - v1[1]) * n[1]).abs() < 1e-12,
                "normal jump across edge {e}"
            );
        }
    }

    #[test]
    fn rt0_divergence_agrees_with_flux_sums() {
        let mesh = Arc::new(build_square_with_polygon(1.0, &[], 0.4).unwrap());
        let flux = FluxField::new(
            mesh.clone(),
            (0..mesh.n_edges()).map(|e| (e as f64 + 1.0) * 0.1).collect(),
        )
        .unwrap();
        // divergence theorem per element, via midpoint rule on each edge
        for t in 0..mesh.n_triangles() {
            let mut boundary_integral = 0.0;
            for local in 0..3 {
                let e = mesh.tri_edges(t)[local];
                boundary_integral += FluxField::orientation(&mesh, t, local) * flux.edge_flux()[e];
            }
            assert!((flux.divergence(t) * mesh.area(t) - boundary_integral).abs() < 1e-12);
        }
    }

    #[test]
    fn target_divergence_examples() {
        let mesh = Arc::new(build_square_with_polygon(2.0, &crate::mesh::regular_polygon(8, 0.5), 0.5).unwrap());
        // u = 0, w = 0, l = 0: all zeros
        let spec = ProblemSpec { k1: 0.9, k2: 0.9, ..Default::default() };
        let problem = Problem::new(spec, mesh.clone(), FieldData::Zero, FieldData::Zero).unwrap();
        let t0 = target_divergence(&problem, &P1Field::zeros(mesh.clone())).unwrap();
        assert!(t0.iter().all(|&d| d == 0.0));

        // k = 0 region with l = 0 gets exactly zero regardless of u
        let spec = ProblemSpec { k1: 0.0, k2: 0.9, ..Default::default() };
        let problem = Problem::new(spec, mesh.clone(), FieldData::Constant(1.0), FieldData::Zero).unwrap();
        let u = P1Field::interpolate(mesh.clone(), |p| p[0] * p[1]);
        let t1 = target_divergence(&problem, &u).unwrap();
        for t in 0..mesh.n_triangles() {
            if mesh.region(t) == crate::mesh::REGION_INNER {
                assert_eq!(t1[t], 0.0);
            }
        }

        // linear mode, l constant: d = P0(u - l)
        let spec = ProblemSpec { nonlinearity: Nonlinearity::LinearIdentity, ..Default::default() };
        let problem = Problem::new(spec, mesh.clone(), FieldData::Zero, FieldData::Constant(3.0)).unwrap();
        let t2 = target_divergence(&problem, &P1Field::zeros(mesh.clone())).unwrap();
        assert!(t2.iter().all(|&d| (d + 3.0).abs() < 1e-13));
    }

    fn poisson_problem(mesh: &Arc<Mesh>) -> (Problem, P1Field) {
        // linear mode with manufactured polynomial solution on the square
        let u_exact = |p: [f64; 2]| (0.25 - p[0] * p[0]) * (0.25 - p[1] * p[1]);
        let load: crate::fem::ScalarFn = Arc::new(move |p: [f64; 2]| {
            // -lap u + u = l
            2.0 * (0.25 - p[1] * p[1]) + 2.0 * (0.25 - p[0] * p[0]) + u_exact(p)
        });
        let spec = ProblemSpec {
            nonlinearity: Nonlinearity::LinearIdentity,
            quad_order: 5,
            ..Default::default()
        };
        let problem = Problem::new(
            spec,
            mesh.clone(),
            FieldData::Zero,
            FieldData::Function(load),
        )
        .unwrap();
        let (u, _) = newton_solve(&problem, &P1Field::zeros(mesh.clone()), NewtonOptions::default())
            .unwrap();
        (problem, u)
    }

    #[test]
    fn equilibration_hits_target_divergence_exactly() {
        let mesh = Arc::new(build_square_with_polygon(1.0, &[], 0.125).unwrap());
        let (problem, u) = poisson_problem(&mesh);
        let y = equilibrate(&problem, &u).unwrap();
        let target = target_divergence(&problem, &u).unwrap();
        let defect = divergence_defect(&mesh, &y, &target);
        assert!(defect <= 1e-10, "defect {defect}");
    }

    #[test]
    fn equilibration_of_zero_problem_is_zero() {
        let mesh = Arc::new(build_square_with_polygon(1.0, &[], 0.3).unwrap());
        let spec = ProblemSpec { k1: 1.0, k2: 1.0, ..Default::default() };
        let problem = Problem::new(spec, mesh.clone(), FieldData::Zero, FieldData::Zero).unwrap();
        let y = equilibrate(&problem, &P1Field::zeros(mesh.clone())).unwrap();
        for &v in y.edge_flux() {
            assert!(v.abs() < 1e-13);
        }
    }

    #[test]
    fn equilibrated_flux_tracks_energy_error() {
        // efficiency surrogate: ||eps grad u_h - y||_* stays within a small
        // factor of the energy error on the manufactured problem
        let mesh = Arc::new(build_square_with_polygon(1.0, &[], 0.1).unwrap());
        let (problem, u) = poisson_problem(&mesh);
        let y = equilibrate(&problem, &u).unwrap();
        let u_exact = |p: [f64; 2]| (0.25 - p[0] * p[0]) * (0.25 - p[1] * p[1]);
        let grad_exact = |p: [f64; 2]| {
            [
                -2.0 * p[0] * (0.25 - p[1] * p[1]),
                -2.0 * p[1] * (0.25 - p[0] * p[0]),
            ]
        };
        let _ = u_exact;
        let misfit = quad::integrate(&mesh, 5, |t, b| {
            let g = u.gradient(t);
            let yv = y.value(t, b);
            (g[0] - yv[0]).powi(2) + (g[1] - yv[1]).powi(2)
        })
        .unwrap()
        .sqrt();
        let energy_err = quad::integrate(&mesh, 5, |t, b| {
            let g = u.gradient(t);
            let ge = grad_exact(mesh.point_at(t, b));
            (g[0] - ge[0]).powi(2) + (g[1] - ge[1]).powi(2)
        })
        .unwrap()
        .sqrt();
        assert!(
            misfit <= 5.0 * energy_err,
            "misfit {misfit} vs energy error {energy_err}"
        );
    }

    #[test]
    fn gradient_average_reproduces_constant_fields() {
        let mesh = Arc::new(build_square_with_polygon(1.0, &[], 0.3).unwrap());
        let spec = ProblemSpec { k1: 1.0, k2: 1.0, ..Default::default() };
        let problem = Problem::new(spec, mesh.clone(), FieldData::Zero, FieldData::Zero).unwrap();
        let u = P1Field::interpolate(mesh.clone(), |p| 2.0 * p[0] - 3.0 * p[1]);
        let avg = gradient_average(&problem, &u).unwrap();
        for v in 0..mesh.n_vertices() {
            assert!((avg.x.values()[v] - 2.0).abs() < 1e-10);
            assert!((avg.y.values()[v] + 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_average_is_an_l2_projection() {
        let mesh = Arc::new(build_square_with_polygon(1.0, &[], 0.2).unwrap());
        let spec = ProblemSpec { k1: 1.0, k2: 1.0, ..Default::default() };
        let problem = Problem::new(spec, mesh.clone(), FieldData::Zero, FieldData::Zero).unwrap();
        let u = P1Field::interpolate(mesh.clone(), |p| (PI * p[0]).sin() * (PI * p[1]).cos());
        let avg = gradient_average(&problem, &u).unwrap();
        // orthogonality (eps grad u - Pi, phi) = 0 against a few P1 fields
        for seed in 0..5u32 {
            let test = P1Field::interpolate(mesh.clone(), move |p| {
                ((seed as f64 + 1.0) * p[0] + 0.3 * p[1] * seed as f64).sin()
            });
            let residual = quad::integrate(&mesh, 5, |t, b| {
                let g = u.gradient(t);
                let a = avg.value(t, b);
                (g[0] - a[0]) * test.value_at(t, b)
            })
            .unwrap();
            assert!(residual.abs() < 1e-10, "seed {seed}: {residual}");
        }
    }

    #[test]
    fn gradient_average_keeps_o1_divergence_mismatch_at_interface() {
        // two-region eps: the averaged flux is continuous, hence wrong at the
        // interface; its divergence mismatch does not vanish under refinement
        let poly = crate::mesh::regular_polygon(10, 0.5);
        let g: crate::fem::ScalarFn =
            Arc::new(|p: [f64; 2]| (1.0 - p[0] * p[0]).max(0.0) * (1.0 - p[1] * p[1]).max(0.0));
        let spec = ProblemSpec { eps1: 1.0, eps2: 50.0, k1: 0.3, k2: 0.8, ..Default::default() };
        let mut mismatches = Vec::new();
        for rounds in [0usize, 2] {
            let base = build_square_with_polygon(2.0, &poly, 0.25).unwrap();
            let mesh = Arc::new(if rounds == 0 {
                base
            } else {
                base.uniform_refine(rounds).unwrap().mesh
            });
            let reference =
                crate::newton::solve_reference(&spec, mesh.clone(), &g, &FieldData::Zero).unwrap();
            let problem = Problem::new(
                spec.clone(),
                mesh.clone(),
                FieldData::Nodal(reference.w.clone()),
                FieldData::Zero,
            )
            .unwrap();
            let (u, _) = newton_solve(&problem, &P1Field::zeros(mesh.clone()), NewtonOptions::default()).unwrap();
            let avg = gradient_average(&problem, &u).unwrap();
            let target = target_divergence(&problem, &u).unwrap();
            let mismatch = quad::integrate(&mesh, 2, |t, _| {
                (avg.divergence(t) - target[t]).powi(2)
            })
            .unwrap()
            .sqrt();
            mismatches.push(mismatch);
        }
        assert!(
            mismatches[1] > 0.5 * mismatches[0],
            "divergence mismatch unexpectedly vanished: {mismatches:?}"
        );
    }
}
