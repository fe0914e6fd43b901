//! P1 Lagrange finite element space: fields, assembly of the stiffness and
//! (weighted) mass forms, the nonlinear residual and Jacobian, the energy
//! functional, and Dirichlet handling.
//!
//! The nonlinearity is `b(x, z) = k^2 sinh(z + w)` with energy density
//! `k^2 cosh(z + w)`; a quadratic test-only mode replaces it with the
//! identity map `b(z) = z` (energy `z^2/2`), which turns the problem into
//! `-div(eps grad u) + u = l` and collapses every nonlinear error measure to
//! a plain L2 norm.

use crate::linalg::CsrMatrix;
use crate::mesh::{Mesh, MeshError, REGION_INNER};
use crate::quad::{self, QuadError};
use std::sync::Arc;
use thiserror::Error;

pub type ScalarFn = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("invalid problem specification: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("field has {values} values but mesh has {vertices} vertices")]
    FieldSizeMismatch { values: usize, vertices: usize },
    #[error("field file: {0}")]
    FieldIo(String),
}

/// Spatially varying problem data: either a closed form or a nodal field.
#[derive(Clone)]
pub enum FieldData {
    Zero,
    Constant(f64),
    Function(ScalarFn),
    Nodal(P1Field),
}

impl std::fmt::Debug for FieldData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FieldData::Zero => write!(f, "Zero"),
            FieldData::Constant(c) => write!(f, "Constant({c})"),
            FieldData::Function(_) => write!(f, "Function(..)"),
            FieldData::Nodal(_) => write!(f, "Nodal(..)"),
        }
    }
}

impl FieldData {
    pub fn eval(&self, mesh: &Mesh, elem: usize, bary: [f64; 3]) -> f64 {
        match self {
            FieldData::Zero => 0.0,
            FieldData::Constant(c) => *c,
            FieldData::Function(f) => f(mesh.point_at(elem, bary)),
            FieldData::Nodal(field) => field.value_at(elem, bary),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, FieldData::Zero) || matches!(self, FieldData::Constant(c) if *c == 0.0)
    }
}

/// Choice of nonlinearity in `-div(eps grad u) + b(x, u) = l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    /// `b(x, z) = k^2 sinh(z + w)`
    SinhShifted,
    /// `b(z) = z`; quadratic test mode, `k` and `w` are ignored
    LinearIdentity,
}

/// Coefficients and solver settings; the data functions `w`, `l` live in
/// [`Problem`] next to the mesh they are evaluated on.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    /// Dielectric coefficient in region 1 (inner) and region 2 (outer).
    pub eps1: f64,
    pub eps2: f64,
    /// Debye parameter k per region (the equations use k^2).
    pub k1: f64,
    pub k2: f64,
    pub nonlinearity: Nonlinearity,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub quad_order: u32,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        ProblemSpec {
            eps1: 1.0,
            eps2: 1.0,
            k1: 0.0,
            k2: 1.0,
            nonlinearity: Nonlinearity::SinhShifted,
            newton_tol: 1e-10,
            newton_max_iter: 50,
            quad_order: 5,
        }
    }
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<(), FemError> {
        if !(self.eps1 > 0.0 && self.eps2 > 0.0) {
            return Err(FemError::BadSpec(format!(
                "dielectric coefficients must be positive (eps1 = {}, eps2 = {})",
                self.eps1, self.eps2
            )));
        }
        if self.k1 < 0.0 || self.k2 < 0.0 {
            return Err(FemError::BadSpec("k must be nonnegative".into()));
        }
        if self.nonlinearity == Nonlinearity::SinhShifted && self.k1 == 0.0 && self.k2 == 0.0 {
            return Err(FemError::BadSpec("k vanishes everywhere".into()));
        }
        if !(self.newton_tol > 0.0) || self.newton_max_iter == 0 {
            return Err(FemError::BadSpec("bad Newton settings".into()));
        }
        Ok(())
    }

    pub fn eps_of(&self, region: u8) -> f64 {
        if region == REGION_INNER {
            self.eps1
        } else {
            self.eps2
        }
    }

    /// `k^2` in the given region (1 in the quadratic test mode).
    pub fn k2_of(&self, region: u8) -> f64 {
        match self.nonlinearity {
            Nonlinearity::LinearIdentity => 1.0,
            Nonlinearity::SinhShifted => {
                let k = if region == REGION_INNER { self.k1 } else { self.k2 };
                k * k
            }
        }
    }
}

/// A concrete problem: coefficients, mesh, and the data functions.
#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub mesh: Arc<Mesh>,
    pub w: FieldData,
    pub l: FieldData,
}

/// Continuous piecewise-linear scalar field.
#[derive(Debug, Clone)]
pub struct P1Field {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
}

impl P1Field {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>) -> Result<Self, FemError> {
        if values.len() != mesh.n_vertices() {
            return Err(FemError::FieldSizeMismatch {
                values: values.len(),
                vertices: mesh.n_vertices(),
            });
        }
        Ok(P1Field { mesh, values })
    }

    pub fn zeros(mesh: Arc<Mesh>) -> Self {
        let n = mesh.n_vertices();
        P1Field { mesh, values: vec![0.0; n] }
    }

    /// Vertex interpolant of a function.
    pub fn interpolate(mesh: Arc<Mesh>, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = mesh.vertices().iter().map(|&p| f(p)).collect();
        P1Field { mesh, values }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn value_at(&self, elem: usize, bary: [f64; 3]) -> f64 {
        let [i, j, k] = self.mesh.triangle(elem);
        bary[0] * self.values[i] + bary[1] * self.values[j] + bary[2] * self.values[k]
    }

    /// Elementwise-constant gradient.
    pub fn gradient(&self, elem: usize) -> [f64; 2] {
        let g = self.mesh.p1_gradients(elem);
        let [i, j, k] = self.mesh.triangle(elem);
        let (a, b, c) = (self.values[i], self.values[j], self.values[k]);
        [
            a * g[0][0] + b * g[1][0] + c * g[2][0],
            a * g[0][1] + b * g[1][1] + c * g[2][1],
        ]
    }

    /// Evaluate at an arbitrary point by locating the containing element.
    pub fn eval_at_point(&self, p: [f64; 2]) -> Result<f64, MeshError> {
        let elem = self
            .mesh
            .locate(p)
            .ok_or(MeshError::PointOutside(p[0], p[1]))?;
        let [i, j, k] = self.mesh.triangle(elem);
        let b = crate::geo::barycentric(
            p,
            self.mesh.vertex(i),
            self.mesh.vertex(j),
            self.mesh.vertex(k),
        );
        Ok(self.value_at(elem, b))
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    /// Pin all Dirichlet (outer boundary) vertices to the given value.
    pub fn apply_dirichlet(&mut self, value: f64) {
        for v in 0..self.mesh.n_vertices() {
            if self.mesh.is_boundary_vertex(v) {
                self.values[v] = value;
            }
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), FemError> {
        let mut s = String::with_capacity(self.values.len() * 20);
        s.push_str("PBEFIELD 1\n");
        s.push_str(&format!("{}\n", self.values.len()));
        for v in &self.values {
            s.push_str(&format!("{v}\n"));
        }
        std::fs::write(path, s).map_err(|e| FemError::FieldIo(e.to_string()))
    }

    pub fn load(mesh: Arc<Mesh>, path: impl AsRef<std::path::Path>) -> Result<Self, FemError> {
        let text = std::fs::read_to_string(path).map_err(|e| FemError::FieldIo(e.to_string()))?;
        let mut lines = text.lines().enumerate();
        let header = lines.next().map(|(_, l)| l.trim()).unwrap_or("");
        if header != "PBEFIELD 1" {
            return Err(FemError::FieldIo(format!(
                "line 1: expected 'PBEFIELD 1', got '{header}'"
            )));
        }
        let (_, count_line) = lines
            .next()
            .ok_or_else(|| FemError::FieldIo("line 2: missing value count".into()))?;
        let n: usize = count_line
            .trim()
            .parse()
            .map_err(|_| FemError::FieldIo(format!("line 2: bad count '{count_line}'")))?;
        let mut values = Vec::with_capacity(n);
        for (i, line) in lines {
            if values.len() == n {
                break;
            }
            let v: f64 = line
                .trim()
                .parse()
                .map_err(|_| FemError::FieldIo(format!("line {}: bad value '{line}'", i + 1)))?;
            values.push(v);
        }
        if values.len() != n {
            return Err(FemError::FieldIo(format!(
                "expected {n} values, found {}",
                values.len()
            )));
        }
        P1Field::new(mesh, values)
    }
}

/// Map between full vertex dofs and the free (non-Dirichlet) subset.
#[derive(Debug, Clone)]
pub struct DirichletMap {
    free: Vec<usize>,
    index_of: Vec<Option<usize>>,
}

impl DirichletMap {
    pub fn new(mesh: &Mesh) -> Self {
        let mut free = Vec::new();
        let mut index_of = vec![None; mesh.n_vertices()];
        for v in 0..mesh.n_vertices() {
            if !mesh.is_boundary_vertex(v) {
                index_of[v] = Some(free.len());
                free.push(v);
            }
        }
        DirichletMap { free, index_of }
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn free_vertices(&self) -> &[usize] {
        &self.free
    }

    pub fn reduce_vec(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&v| full[v]).collect()
    }

    /// Scatter reduced values into a full vector (Dirichlet entries untouched).
    pub fn expand_into(&self, reduced: &[f64], full: &mut [f64]) {
        for (i, &v) in self.free.iter().enumerate() {
            full[v] = reduced[i];
        }
    }

    /// Restrict a full matrix to the free x free block.
    pub fn reduce_matrix(&self, a: &CsrMatrix) -> CsrMatrix {
        let mut triplets = Vec::new();
        for (ri, &r) in self.free.iter().enumerate() {
            let (cols, vals) = a.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                if let Some(ci) = self.index_of[c] {
                    triplets.push((ri, ci, v));
                }
            }
        }
        CsrMatrix::from_triplets(self.n_free(), &triplets)
    }
}

/// Exact local mass matrix of a triangle with area `a`.
fn local_mass(a: f64) -> [[f64; 3]; 3] {
    let d = a / 6.0;
    let o = a / 12.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

impl Problem {
    pub fn new(
        spec: ProblemSpec,
        mesh: Arc<Mesh>,
        w: FieldData,
        l: FieldData,
    ) -> Result<Self, FemError> {
        spec.validate()?;
        Ok(Problem { spec, mesh, w, l })
    }

    pub fn eps_at(&self, elem: usize) -> f64 {
        self.spec.eps_of(self.mesh.region(elem))
    }

    pub fn k2_at(&self, elem: usize) -> f64 {
        self.spec.k2_of(self.mesh.region(elem))
    }

    /// `b(x, z)`: the nonlinear reaction term.
    pub fn b_value(&self, elem: usize, bary: [f64; 3], z: f64) -> f64 {
        match self.spec.nonlinearity {
            Nonlinearity::SinhShifted => {
                self.k2_at(elem) * (z + self.w.eval(&self.mesh, elem, bary)).sinh()
            }
            Nonlinearity::LinearIdentity => z,
        }
    }

    /// `d b / d z`.
    pub fn b_derivative(&self, elem: usize, bary: [f64; 3], z: f64) -> f64 {
        match self.spec.nonlinearity {
            Nonlinearity::SinhShifted => {
                self.k2_at(elem) * (z + self.w.eval(&self.mesh, elem, bary)).cosh()
            }
            Nonlinearity::LinearIdentity => 1.0,
        }
    }

    /// Energy density of the reaction term (antiderivative of `b` in `z`).
    pub fn b_energy(&self, elem: usize, bary: [f64; 3], z: f64) -> f64 {
        match self.spec.nonlinearity {
            Nonlinearity::SinhShifted => {
                self.k2_at(elem) * (z + self.w.eval(&self.mesh, elem, bary)).cosh()
            }
            Nonlinearity::LinearIdentity => 0.5 * z * z,
        }
    }

    /// Stiffness matrix of `a(u, v) = integral eps grad u . grad v`.
    pub fn assemble_stiffness(&self) -> CsrMatrix {
        assemble_stiffness(&self.mesh, |t| self.eps_at(t))
    }

    /// Galerkin residual: `r_i = a(u, phi_i) + (b(u + w), phi_i) - (l, phi_i)`
    /// for free vertices `i`; Dirichlet rows are zero.
    pub fn residual(&self, u: &P1Field) -> Result<Vec<f64>, FemError> {
        let mesh = &self.mesh;
        let rule = quad::rule(self.spec.quad_order)?;
        let mut r = vec![0.0; mesh.n_vertices()];
        for t in 0..mesh.n_triangles() {
            let tri = mesh.triangle(t);
            let grads = mesh.p1_gradients(t);
            let area = mesh.area(t);
            let eps = self.eps_at(t);
            let gu = u.gradient(t);
            for (local, &v) in tri.iter().enumerate() {
                let mut acc = eps * area * (gu[0] * grads[local][0] + gu[1] * grads[local][1]);
                for (p, wq) in rule.points.iter().zip(&rule.weights) {
                    let z = u.value_at(t, *p);
                    let bval = self.b_value(t, *p, z);
                    if !bval.is_finite() {
                        return Err(QuadError::NonFinite { element: t, point: *p }.into());
                    }
                    let lval = self.l.eval(mesh, t, *p);
                    acc += wq * area * (bval - lval) * p[local];
                }
                r[v] += acc;
            }
        }
        for v in 0..mesh.n_vertices() {
            if mesh.is_boundary_vertex(v) {
                r[v] = 0.0;
            }
        }
        Ok(r)
    }

    /// Newton linearization `a(., .) + (b'(u + w) ., .)` on all vertex dofs.
    pub fn jacobian(&self, u: &P1Field) -> Result<CsrMatrix, FemError> {
        let mesh = &self.mesh;
        let rule = quad::rule(self.spec.quad_order)?;
        let mut triplets = Vec::with_capacity(mesh.n_triangles() * 9);
        for t in 0..mesh.n_triangles() {
            let tri = mesh.triangle(t);
            let grads = mesh.p1_gradients(t);
            let area = mesh.area(t);
            let eps = self.eps_at(t);
            let mut local = [[0.0f64; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    local[i][j] =
                        eps * area * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                }
            }
            for (p, wq) in rule.points.iter().zip(&rule.weights) {
                let z = u.value_at(t, *p);
                let bp = self.b_derivative(t, *p, z);
                if !bp.is_finite() {
                    return Err(QuadError::NonFinite { element: t, point: *p }.into());
                }
                for i in 0..3 {
                    for j in 0..3 {
                        local[i][j] += wq * area * bp * p[i] * p[j];
                    }
                }
            }
            for i in 0..3 {
                for j in 0..3 {
                    triplets.push((tri[i], tri[j], local[i][j]));
                }
            }
        }
        Ok(CsrMatrix::from_triplets(mesh.n_vertices(), &triplets))
    }

    /// Energy functional
    /// `J(v) = integral [ eps/2 |grad v|^2 + B(x, v) - l v ]`.
    pub fn energy(&self, v: &P1Field) -> Result<f64, FemError> {
        let gv: Vec<[f64; 2]> = (0..self.mesh.n_triangles()).map(|t| v.gradient(t)).collect();
        let value = quad::integrate(&self.mesh, self.spec.quad_order, |t, b| {
            let eps = self.eps_at(t);
            let z = v.value_at(t, b);
            let g = gv[t];
            0.5 * eps * (g[0] * g[0] + g[1] * g[1]) + self.b_energy(t, b, z)
                - self.l.eval(&self.mesh, t, b) * z
        })?;
        Ok(value)
    }
}

/// Stiffness assembly with an arbitrary per-element coefficient.
pub fn assemble_stiffness(mesh: &Mesh, eps: impl Fn(usize) -> f64) -> CsrMatrix {
    let mut triplets = Vec::with_capacity(mesh.n_triangles() * 9);
    for t in 0..mesh.n_triangles() {
        let tri = mesh.triangle(t);
        let grads = mesh.p1_gradients(t);
        let coeff = eps(t) * mesh.area(t);
        for i in 0..3 {
            for j in 0..3 {
                triplets.push((
                    tri[i],
                    tri[j],
                    coeff * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]),
                ));
            }
        }
    }
    CsrMatrix::from_triplets(mesh.n_vertices(), &triplets)
}

/// Consistent (unweighted) mass matrix, exact for P1.
pub fn assemble_mass(mesh: &Mesh) -> CsrMatrix {
    let mut triplets = Vec::with_capacity(mesh.n_triangles() * 9);
    for t in 0..mesh.n_triangles() {
        let tri = mesh.triangle(t);
        let local = local_mass(mesh.area(t));
        for i in 0..3 {
            for j in 0..3 {
                triplets.push((tri[i], tri[j], local[i][j]));
            }
        }
    }
    CsrMatrix::from_triplets(mesh.n_vertices(), &triplets)
}
