//! Ready-made problem configurations: the two square-with-polygon studies,
//! a case-(b) configuration with a dead zone in the inclusion, the
//! manufactured convergence problem, the quadratic-collapse mode, and the
//! trivial all-zero case.

use crate::amr::{CampaignConfig, CampaignProblem};
use crate::fem::{FieldData, Nonlinearity, ProblemSpec, ScalarFn};
use crate::mesh::{build_square_with_polygon, regular_polygon, Mesh, MeshError};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetKind {
    /// Full adaptive campaign (solve, estimate, mark, refine).
    Campaign,
    /// Uniform-refinement convergence study against a closed-form solution.
    Manufactured,
    /// One-shot identity check in the quadratic test mode.
    LinearCollapse,
    /// All-zero data; the campaign terminates immediately.
    Trivial,
}

/// A named, fully specified experiment configuration.
pub struct Preset {
    pub name: &'static str,
    pub kind: PresetKind,
    pub side: f64,
    pub polygon: Vec<[f64; 2]>,
    pub target_h: f64,
    pub spec: ProblemSpec,
    pub g: ScalarFn,
    pub l: FieldData,
    pub default_config: CampaignConfig,
    /// Assumptions recorded in the campaign manifest.
    pub notes: Vec<String>,
}

impl Preset {
    pub fn build_mesh(&self) -> Result<Mesh, MeshError> {
        build_square_with_polygon(self.side, &self.polygon, self.target_h)
    }

    pub fn campaign_problem(&self) -> Result<CampaignProblem, MeshError> {
        Ok(CampaignProblem {
            spec: self.spec.clone(),
            mesh0: Arc::new(self.build_mesh()?),
            g: self.g.clone(),
            l: self.l.clone(),
        })
    }
}

pub fn names() -> &'static [&'static str] {
    &[
        "example1_2d",
        "example2_2d",
        "caseb_2d",
        "manufactured",
        "linear_collapse",
        "trivial",
    ]
}

pub fn by_name(name: &str) -> Option<Preset> {
    match name {
        "example1_2d" => Some(example1_2d()),
        "example2_2d" => Some(example2_2d()),
        "caseb_2d" => Some(caseb_2d()),
        "manufactured" => Some(manufactured()),
        "linear_collapse" => Some(linear_collapse()),
        "trivial" => Some(trivial()),
        _ => None,
    }
}

/// Square of side 20 with a regular 15-gon inclusion of circumradius 2;
/// eps = 1 / 100, k = 0.15 / 0.4, separated Gaussian bumps in x and y, l = 0.
pub fn example1_2d() -> Preset {
    let (b1, b2) = (2.0, 2.0);
    let (c1, c2) = (-1.0, 6.0);
    let (s1, s2) = (1.5, 1.5);
    let amp = 0.8;
    let g: ScalarFn = Arc::new(move |p: [f64; 2]| {
        let ex = (-b1 * ((p[0] - c1) * (p[0] - c1) / (s1 * s1) - 1.0)).exp();
        let ey = (-b2 * ((p[1] - c2) * (p[1] - c2) / (s2 * s2) - 1.0)).exp();
        amp * (ex - ey)
    });
    Preset {
        name: "example1_2d",
        kind: PresetKind::Campaign,
        side: 20.0,
        polygon: regular_polygon(15, 2.0),
        target_h: 4.0,
        spec: ProblemSpec {
            eps1: 1.0,
            eps2: 100.0,
            k1: 0.15,
            k2: 0.4,
            ..Default::default()
        },
        g,
        l: FieldData::Zero,
        default_config: CampaignConfig { stop_elements: 8000, ..Default::default() },
        notes: vec![
            "k > 0 in both regions, so the conjugate integrand extends over the whole domain (no constraint region)".into(),
        ],
    }
}

/// Same geometry as example1_2d (the study does not restate its domain),
/// radial bumps in g, oscillatory load l.
pub fn example2_2d() -> Preset {
    let (b1, b2, b3) = (2.2, 2.5, 6.0);
    let c1 = [-1.0, 0.0];
    let c2 = [5.0, 5.0];
    let (s1, s2, s3) = (2.0, 2.0, 10.0);
    let g: ScalarFn = Arc::new(move |p: [f64; 2]| {
        let r1 = (p[0] - c1[0]) * (p[0] - c1[0]) + (p[1] - c1[1]) * (p[1] - c1[1]);
        let r2 = (p[0] - c2[0]) * (p[0] - c2[0]) + (p[1] - c2[1]) * (p[1] - c2[1]);
        (-b1 * (r1 / (s1 * s1) - 1.0)).exp() - (-b2 * (r2 / (s2 * s2) - 1.0)).exp()
    });
    let l: ScalarFn = Arc::new(move |p: [f64; 2]| {
        let r = p[0] * p[0] + p[1] * p[1];
        (-b3 * (r / (s3 * s3) - 1.0)).exp() * (p[0] * p[1] / 4.0).sin()
    });
    Preset {
        name: "example2_2d",
        kind: PresetKind::Campaign,
        side: 20.0,
        polygon: regular_polygon(15, 2.0),
        target_h: 4.0,
        spec: ProblemSpec {
            eps1: 1.0,
            eps2: 100.0,
            k1: 0.2,
            k2: 0.3,
            ..Default::default()
        },
        g,
        l: FieldData::Function(l),
        default_config: CampaignConfig { stop_elements: 6000, ..Default::default() },
        notes: vec![
            "domain geometry reuses the side-20 square with the 15-gon inclusion; the original study leaves it implicit".into(),
        ],
    }
}

/// Case (b): k = 0 inside the inclusion, in the style of the biophysical
/// configuration (eps 2 / 80, k2 = 0.84, l = 0, four radial bumps).
pub fn caseb_2d() -> Preset {
    let b = 2.3;
    let centers = [[1.0, 1.0], [4.0, 4.0], [0.0, 6.0], [-5.0, 0.0]];
    let signs = [1.0, -1.0, 1.0, 1.0];
    let sigma = 2.0;
    let g: ScalarFn = Arc::new(move |p: [f64; 2]| {
        let mut v = 0.0;
        for (c, s) in centers.iter().zip(signs) {
            let r = (p[0] - c[0]) * (p[0] - c[0]) + (p[1] - c[1]) * (p[1] - c[1]);
            v += s * (-b * (r / (sigma * sigma) - 1.0)).exp();
        }
        v
    });
    Preset {
        name: "caseb_2d",
        kind: PresetKind::Campaign,
        side: 20.0,
        polygon: regular_polygon(15, 1.4),
        target_h: 4.0,
        spec: ProblemSpec {
            eps1: 2.0,
            eps2: 80.0,
            k1: 0.0,
            k2: 0.84,
            ..Default::default()
        },
        g,
        l: FieldData::Zero,
        default_config: CampaignConfig { stop_elements: 6000, ..Default::default() },
        notes: vec![
            "2D analogue of the molecular configuration: 15-gon of circumradius 1.4 standing in for the solute".into(),
        ],
    }
}

/// Manufactured problem on the centered unit square:
/// `-lap u + sinh(u) = l` with `u = cos(pi x) cos(pi y)`.
pub fn manufactured() -> Preset {
    let l: ScalarFn = Arc::new(move |p: [f64; 2]| {
        let u = manufactured_exact(p);
        2.0 * std::f64::consts::PI * std::f64::consts::PI * u + u.sinh()
    });
    Preset {
        name: "manufactured",
        kind: PresetKind::Manufactured,
        side: 1.0,
        polygon: Vec::new(),
        target_h: 1.0 / 8.0,
        spec: ProblemSpec { k1: 1.0, k2: 1.0, ..Default::default() },
        g: Arc::new(|_| 0.0),
        l: FieldData::Function(l),
        default_config: CampaignConfig {
            stop_elements: 40_000,
            with_reference: false,
            ..Default::default()
        },
        notes: vec!["exact solution cos(pi x) cos(pi y), w = 0".into()],
    }
}

pub fn manufactured_exact(p: [f64; 2]) -> f64 {
    (std::f64::consts::PI * p[0]).cos() * (std::f64::consts::PI * p[1]).cos()
}

pub fn manufactured_exact_gradient(p: [f64; 2]) -> [f64; 2] {
    let pi = std::f64::consts::PI;
    [
        -pi * (pi * p[0]).sin() * (pi * p[1]).cos(),
        -pi * (pi * p[0]).cos() * (pi * p[1]).sin(),
    ]
}

/// Quadratic test mode on the unit right triangle:
/// `-lap u + u = l`, `u = x y (1 - x - y)`. Every integrand is polynomial of
/// degree at most six, so an order-7 rule makes the identity checks exact.
pub fn linear_collapse() -> Preset {
    let l: ScalarFn = Arc::new(|p: [f64; 2]| {
        let u = p[0] * p[1] * (1.0 - p[0] - p[1]);
        u + 2.0 * (p[0] + p[1])
    });
    Preset {
        name: "linear_collapse",
        kind: PresetKind::LinearCollapse,
        side: 1.0,
        polygon: Vec::new(),
        target_h: 1.0,
        spec: ProblemSpec {
            nonlinearity: Nonlinearity::LinearIdentity,
            quad_order: 7,
            ..Default::default()
        },
        g: Arc::new(|_| 0.0),
        l: FieldData::Function(l),
        default_config: CampaignConfig {
            stop_elements: 16_384,
            with_reference: false,
            ..Default::default()
        },
        notes: vec!["exact u = x y (1 - x - y) on the unit right triangle".into()],
    }
}

pub fn linear_collapse_exact(p: [f64; 2]) -> f64 {
    p[0] * p[1] * (1.0 - p[0] - p[1])
}

pub fn linear_collapse_exact_gradient(p: [f64; 2]) -> [f64; 2] {
    let (x, y) = (p[0], p[1]);
    [y - 2.0 * x * y - y * y, x - x * x - 2.0 * x * y]
}

/// `div p` of the quadratic-collapse exact flux (`p = grad u`).
pub fn linear_collapse_exact_laplacian(p: [f64; 2]) -> f64 {
    -2.0 * (p[0] + p[1])
}

/// Domain of the quadratic collapse: one right triangle, refined uniformly.
pub fn linear_collapse_mesh(refinement_sweeps: usize) -> Result<Mesh, MeshError> {
    let base = Mesh::new(
        vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
        vec![[0, 1, 2]],
        vec![crate::mesh::REGION_OUTER],
        vec![(0, 1, 1), (1, 2, 1), (2, 0, 1)],
        None,
    )?;
    Ok(base.uniform_refine(refinement_sweeps)?.mesh)
}

/// All data zero: u = 0, y = 0, every error vanishes.
pub fn trivial() -> Preset {
    Preset {
        name: "trivial",
        kind: PresetKind::Trivial,
        side: 1.0,
        polygon: Vec::new(),
        target_h: 0.3,
        spec: ProblemSpec { k1: 1.0, k2: 1.0, ..Default::default() },
        g: Arc::new(|_| 0.0),
        l: FieldData::Zero,
        default_config: CampaignConfig {
            stop_elements: 1000,
            with_reference: false,
            ..Default::default()
        },
        notes: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo;

    #[test]
    fn example1_g_matches_closed_form_at_bump_centers() {
        let preset = example1_2d();
        let mesh = Arc::new(preset.build_mesh().unwrap());
        let field = crate::fem::P1Field::interpolate(mesh.clone(), |p| (preset.g)(p));
        // vertex evaluation is exact at every mesh vertex
        for v in (0..mesh.n_vertices()).step_by(17) {
            let p = mesh.vertex(v);
            assert!((field.values()[v] - (preset.g)(p)).abs() < 1e-14);
        }
        // spot values: the x-bump peaks on the line x = c1, the y-bump on y = c2
        let gx = (preset.g)([-1.0, 0.0]);
        let expect = 0.8 * ((2.0f64).exp() - (-2.0f64 * (36.0 / 2.25 - 1.0)).exp());
        assert!((gx - expect).abs() < 1e-12);
    }

    #[test]
    fn example1_energy_of_zero_is_k2_weighted_area() {
        let preset = example1_2d();
        let mesh = Arc::new(preset.build_mesh().unwrap());
        let problem = crate::fem::Problem::new(
            preset.spec.clone(),
            mesh.clone(),
            FieldData::Zero,
            FieldData::Zero,
        )
        .unwrap();
        let j = problem.energy(&crate::fem::P1Field::zeros(mesh.clone())).unwrap();
        let poly_area = geo::polygon_area(&preset.polygon);
        let expect = 0.0225 * poly_area + 0.16 * (400.0 - poly_area);
        assert!((j - expect).abs() < 1e-9 * expect, "J(0) = {j} vs {expect}");
    }

    #[test]
    fn all_presets_build() {
        for name in names() {
            let preset = by_name(name).unwrap();
            let mesh = preset.build_mesh().unwrap();
            assert!(mesh.n_triangles() > 0, "{name}");
        }
        assert!(by_name("nope").is_none());
    }

    #[test]
    fn linear_collapse_load_is_consistent() {
        // -lap u + u at a few points equals the stored load
        let preset = linear_collapse();
        let FieldData::Function(l) = &preset.l else { panic!() };
        for p in [[0.2, 0.3], [0.1, 0.7], [0.5, 0.25]] {
            let expect = linear_collapse_exact(p) - linear_collapse_exact_laplacian(p);
            assert!((l(p) - expect).abs() < 1e-14);
        }
    }
}
