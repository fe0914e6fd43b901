//! Self-check suites: each suite evaluates a set of named properties and
//! reports observed value, tolerance, and verdict. The randomized samplers
//! honor the `PBE_SEED` environment variable.
//!
//! The same functions back the command-line `verify` subcommand and the
//! acceptance tests: `scalar` covers the pointwise inequalities of the
//! nonlinear measures, `identity` the quadratic-mode collapse where every
//! error relation must hold to rounding, `equilibration` the divergence
//! exactness of the flux reconstruction, and `convergence` the manufactured
//! first-order rate.

use crate::fem::{FieldData, P1Field, Problem};
use crate::newton::{newton_solve, NewtonOptions};
use crate::preset;
use crate::quad;
use crate::scalar;
use rand::{Rng, SeedableRng};
use std::sync::Arc;

/// Seed for randomized property sampling (`PBE_SEED`, default 0x9be).
pub fn seed() -> u64 {
    std::env::var("PBE_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0x9be)
}

/// One verified property: `observed <= tolerance` must hold.
#[derive(Debug, Clone)]
pub struct VerifyRow {
    pub property: String,
    pub observed: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl VerifyRow {
    pub fn check(property: impl Into<String>, observed: f64, tolerance: f64) -> Self {
        VerifyRow { property: property.into(), observed, tolerance, pass: observed <= tolerance }
    }
}

pub fn render(rows: &[VerifyRow]) -> String {
    let mut out = String::new();
    let width = rows.iter().map(|r| r.property.len()).max().unwrap_or(8).max(8);
    out.push_str(&format!(
        "{:width$}  {:>13}  {:>13}  verdict\n",
        "property", "observed", "tolerance"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:width$}  {:>13.6e}  {:>13.6e}  {}\n",
            r.property,
            r.observed,
            r.tolerance,
            if r.pass { "pass" } else { "FAIL" }
        ));
    }
    out
}

pub fn all_pass(rows: &[VerifyRow]) -> bool {
    rows.iter().all(|r| r.pass)
}

/// Pointwise inequalities of the scalar kernel.
pub fn scalar_suite() -> Vec<VerifyRow> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed());
    let mut rows = Vec::new();

    // sandwich (t-s)^2/2 <= A(s,t) <= (sinh t - sinh s)^2/2 on 1e5 samples
    let mut worst_low = 0.0f64;
    let mut worst_high = 0.0f64;
    for _ in 0..100_000 {
        let s: f64 = rng.gen_range(-8.0..8.0);
        let t: f64 = rng.gen_range(-8.0..8.0);
        let a = scalar::bregman_a(s, t).unwrap();
        let low = 0.5 * (t - s) * (t - s);
        let high = 0.5 * (t.sinh() - s.sinh()).powi(2);
        worst_low = worst_low.max((low - a) / (1.0 + a.abs()));
        worst_high = worst_high.max((a - high) / (1.0 + high.abs()));
    }
    rows.push(VerifyRow::check("bregman lower bound violation", worst_low, 1e-12));
    rows.push(VerifyRow::check("bregman upper bound violation", worst_high, 1e-12));
    let mut worst_diag = 0.0f64;
    for i in 0..1000 {
        let s = -8.0 + 16.0 * i as f64 / 999.0;
        worst_diag = worst_diag.max(scalar::bregman_a(s, s).unwrap().abs());
    }
    rows.push(VerifyRow::check("bregman A(s,s)", worst_diag, 1e-12));

    let mut worst_theta = 0.0f64;
    for i in 0..=600 {
        let s = -30.0 + 0.1 * i as f64;
        worst_theta = worst_theta.max((scalar::theta(s) * scalar::theta(-s) - 1.0).abs());
    }
    rows.push(VerifyRow::check("theta reciprocal identity", worst_theta, 1e-14));

    let mut worst_xi = 0.0f64;
    for _ in 0..10_000 {
        let rho: f64 = rng.gen_range(-50.0..50.0);
        worst_xi = worst_xi.max(scalar::xi0(rho, 0.0).abs() - rho.abs());
    }
    rows.push(VerifyRow::check("xi0 bound |xi0(rho,0)| <= |rho|", worst_xi, 0.0));

    let mut worst_forcing = 0.0f64;
    for i in 0..=10_000 {
        let z = -20.0 + 0.004 * i as f64;
        let gap = scalar::forcing_density(z, 1.0).unwrap() - z * z / 8.0;
        worst_forcing = worst_forcing.max(-gap);
    }
    rows.push(VerifyRow::check("forcing quadratic lower bound", worst_forcing, 1e-15));

    let p = scalar::NonlinearityParams { k2: 0.16, w: 1.5, l: 0.3 };
    let mut worst_convex = 0.0f64;
    for _ in 0..10_000 {
        let a: f64 = rng.gen_range(-40.0..40.0);
        let b: f64 = rng.gen_range(-40.0..40.0);
        let fa = scalar::fstar_density(a, &p).unwrap();
        let fb = scalar::fstar_density(b, &p).unwrap();
        let fm = scalar::fstar_density(0.5 * (a + b), &p).unwrap();
        worst_convex = worst_convex.max((fm - 0.5 * (fa + fb)) / (1.0 + fa.abs() + fb.abs()));
    }
    rows.push(VerifyRow::check("conjugate density midpoint convexity", worst_convex, 1e-12));
    rows
}

/// Result of the quadratic-mode collapse computation.
#[derive(Debug, Clone)]
pub struct CollapseCheck {
    pub elements: usize,
    pub df_primal_compound: f64,
    pub df_primal_norm: f64,
    pub df_dual_compound: f64,
    pub df_dual_norm: f64,
    /// `|2M2 - (energy^2 + dual^2 + ||v-u||^2 + ||div(y-p)||^2)| / 2M2`.
    pub identity_residual_rel: f64,
    pub df_primal_rel: f64,
    pub df_dual_rel: f64,
    pub max_div_defect: f64,
}

/// Solve the quadratic test problem (`-lap u + u = l` with polynomial exact
/// solution) and evaluate every error relation with exact quadrature. The
/// compound (Fenchel) route and the plain norm route must agree to rounding,
/// and the error identity in pure norms must close.
pub fn linear_collapse_check(sweeps: usize) -> Result<CollapseCheck, crate::amr::AmrError> {
    let p = preset::linear_collapse();
    let mesh = Arc::new(preset::linear_collapse_mesh(sweeps)?);
    let problem = Problem::new(p.spec.clone(), mesh.clone(), FieldData::Zero, p.l.clone())?;
    let (v, _) = newton_solve(&problem, &P1Field::zeros(mesh.clone()), NewtonOptions::default())?;
    let y = crate::flux::equilibrate(&problem, &v)?;
    let target = crate::flux::target_divergence(&problem, &v)?;
    let max_div_defect = crate::flux::divergence_defect(&mesh, &y, &target);
    let maj = crate::estimator::majorant(&problem, &v, &y)?;
    let order = problem.spec.quad_order;

    let u_exact = preset::linear_collapse_exact;
    let gu_exact = preset::linear_collapse_exact_gradient;
    let divp_exact = preset::linear_collapse_exact_laplacian;
    let l_fun =
        |x: [f64; 2]| preset::linear_collapse_exact(x) - preset::linear_collapse_exact_laplacian(x);

    use crate::flux::DualFlux as _;
    fn q<F: Fn(usize, [f64; 3]) -> f64 + Sync>(
        mesh: &crate::mesh::Mesh,
        order: u32,
        f: F,
    ) -> Result<f64, crate::fem::FemError> {
        quad::integrate(mesh, order, f).map_err(crate::fem::FemError::from)
    }
    // compound route with the exact dual flux divergence
    let df_primal_compound = q(&mesh, order, |t, b| {
        let x = mesh.point_at(t, b);
        crate::estimator::df_density_linear(v.value_at(t, b), divp_exact(x), l_fun(x))
    })?;
    let df_primal_norm = q(&mesh, order, |t, b| {
        let d = v.value_at(t, b) - u_exact(mesh.point_at(t, b));
        0.5 * d * d
    })?;
    // compound route with the exact primal solution and the reconstructed flux
    let df_dual_compound = q(&mesh, order, |t, b| {
        let x = mesh.point_at(t, b);
        let u = u_exact(x);
        let l = l_fun(x);
        let div_y = y.divergence(t);
        0.5 * u * u - l * u + 0.5 * (div_y + l) * (div_y + l) - div_y * u
    })?;
    let df_dual_norm = q(&mesh, order, |t, b| {
        let d = y.divergence(t) - divp_exact(mesh.point_at(t, b));
        0.5 * d * d
    })?;
    let energy2 = q(&mesh, order, |t, b| {
        let g = v.gradient(t);
        let ge = gu_exact(mesh.point_at(t, b));
        (g[0] - ge[0]) * (g[0] - ge[0]) + (g[1] - ge[1]) * (g[1] - ge[1])
    })?;
    let dual2 = q(&mesh, order, |t, b| {
        let yv = y.value(t, b);
        let ge = gu_exact(mesh.point_at(t, b));
        (yv[0] - ge[0]) * (yv[0] - ge[0]) + (yv[1] - ge[1]) * (yv[1] - ge[1])
    })?;
    let two_m2 = 2.0 * maj.total_m2;
    let rhs = energy2 + dual2 + 2.0 * df_primal_norm + 2.0 * df_dual_norm;
    let rel = |a: f64, b: f64, scale: f64| (a - b).abs() / scale.max(1e-300);
    Ok(CollapseCheck {
        elements: mesh.n_triangles(),
        df_primal_compound,
        df_primal_norm,
        df_dual_compound,
        df_dual_norm,
        identity_residual_rel: (two_m2 - rhs).abs() / two_m2,
        df_primal_rel: rel(df_primal_compound, df_primal_norm, df_primal_norm),
        df_dual_rel: rel(df_dual_compound, df_dual_norm, df_dual_norm),
        max_div_defect,
    })
}

/// Quadratic-mode error relations (the identity suite).
pub fn identity_suite() -> Vec<VerifyRow> {
    match linear_collapse_check(14) {
        Ok(c) => vec![
            VerifyRow::check(
                format!("D_F(v,.) compound vs 0.5||v-u||^2 rel ({} elts)", c.elements),
                c.df_primal_rel,
                1e-10,
            ),
            VerifyRow::check(
                "D_F(u,.) compound vs 0.5||div(y-p)||^2 rel",
                c.df_dual_rel,
                1e-10,
            ),
            VerifyRow::check(
                "quadratic error identity rel residual",
                c.identity_residual_rel,
                1e-10,
            ),
            VerifyRow::check("equilibration defect", c.max_div_defect, 1e-10),
        ],
        Err(e) => vec![VerifyRow::check(format!("identity suite failed: {e}"), 1.0, 0.0)],
    }
}

/// Divergence exactness of the patchwise reconstruction.
pub fn equilibration_suite() -> Vec<VerifyRow> {
    let run = || -> Result<Vec<VerifyRow>, crate::amr::AmrError> {
        let mut rows = Vec::new();
        // quadratic mode on the triangle
        let c = linear_collapse_check(10)?;
        rows.push(VerifyRow::check(
            format!("div exactness, quadratic mode ({} elts)", c.elements),
            c.max_div_defect,
            1e-10,
        ));
        // nonlinear interface problem
        let p = preset::example1_2d();
        let mesh = Arc::new(p.build_mesh()?.uniform_refine(2)?.mesh);
        let reference = crate::newton::solve_reference(&p.spec, mesh.clone(), &p.g, &p.l)?;
        let problem = Problem::new(
            p.spec.clone(),
            mesh.clone(),
            FieldData::Nodal(reference.w.clone()),
            p.l.clone(),
        )?;
        let (u, _) =
            newton_solve(&problem, &P1Field::zeros(mesh.clone()), NewtonOptions::default())?;
        let y = crate::flux::equilibrate(&problem, &u)?;
        let target = crate::flux::target_divergence(&problem, &u)?;
        rows.push(VerifyRow::check(
            format!("div exactness, interface problem ({} elts)", mesh.n_triangles()),
            crate::flux::divergence_defect(&mesh, &y, &target),
            1e-10,
        ));
        // partition of unity at quadrature points
        let rule = quad::rule(5).map_err(crate::fem::FemError::from)?;
        let mut worst = 0.0f64;
        for p in &rule.points {
            worst = worst.max((p[0] + p[1] + p[2] - 1.0).abs());
        }
        rows.push(VerifyRow::check("partition of unity at quad points", worst, 1e-14));
        Ok(rows)
    };
    run().unwrap_or_else(|e| {
        vec![VerifyRow::check(format!("equilibration suite failed: {e}"), 1.0, 0.0)]
    })
}

/// Result of the manufactured uniform-refinement study.
#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub mesh_sizes: Vec<f64>,
    pub energy_errors: Vec<f64>,
    pub newton_residuals: Vec<f64>,
    pub energy_monotone: bool,
    pub slope: f64,
}

/// Solve the manufactured problem on a hierarchy of uniformly refined meshes
/// and fit the energy-error rate against the mesh size.
pub fn manufactured_convergence(levels: usize) -> Result<ConvergenceStudy, crate::amr::AmrError> {
    let p = preset::manufactured();
    let mut mesh = Arc::new(p.build_mesh()?);
    let mut sizes = Vec::new();
    let mut errors = Vec::new();
    let mut residuals = Vec::new();
    let mut energy_monotone = true;
    for level in 0..levels {
        let problem = Problem::new(p.spec.clone(), mesh.clone(), FieldData::Zero, p.l.clone())?;
        let (u, report) =
            newton_solve(&problem, &P1Field::zeros(mesh.clone()), NewtonOptions::default())?;
        for pair in report.iterations.windows(2) {
            if pair[1].energy > pair[0].energy + 1e-12 {
                energy_monotone = false;
            }
        }
        let err2 = quad::integrate(&mesh, 5, |t, b| {
            let g = u.gradient(t);
            let ge = preset::manufactured_exact_gradient(mesh.point_at(t, b));
            (g[0] - ge[0]) * (g[0] - ge[0]) + (g[1] - ge[1]) * (g[1] - ge[1])
        })
        .map_err(crate::fem::FemError::from)?;
        sizes.push(0.125 / (1 << level) as f64);
        errors.push(err2.sqrt());
        residuals.push(report.final_residual_measure);
        if level + 1 < levels {
            mesh = Arc::new(mesh.uniform_refine(2)?.mesh);
        }
    }
    // least-squares slope of log e against log h
    let n = sizes.len() as f64;
    let xs: Vec<f64> = sizes.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    Ok(ConvergenceStudy {
        mesh_sizes: sizes,
        energy_errors: errors,
        newton_residuals: residuals,
        energy_monotone,
        slope,
    })
}

/// Manufactured-solution convergence (the convergence suite).
pub fn convergence_suite() -> Vec<VerifyRow> {
    match manufactured_convergence(3) {
        Ok(s) => {
            let mut rows = vec![VerifyRow::check(
                format!(
                    "energy-error slope vs h deviation (errors {:.3e} {:.3e} {:.3e})",
                    s.energy_errors[0], s.energy_errors[1], s.energy_errors[2]
                ),
                (s.slope - 1.0).abs(),
                0.15,
            )];
            let worst = s.newton_residuals.iter().cloned().fold(0.0f64, f64::max);
            rows.push(VerifyRow::check("Newton residual at every level", worst, 1e-10));
            rows.push(VerifyRow::check(
                "energy descent across Newton steps",
                if s.energy_monotone { 0.0 } else { 1.0 },
                0.0,
            ));
            rows
        }
        Err(e) => vec![VerifyRow::check(format!("convergence suite failed: {e}"), 1.0, 0.0)],
    }
}

/// Quadrature saturation: order 5 vs order 7 on the nonlinear energy
/// integrand `k^2 cosh(u + w)`.
pub fn quadrature_saturation(problem: &Problem, u: &P1Field) -> Result<f64, crate::fem::FemError> {
    let mut values = [0.0f64; 2];
    for (slot, order) in [(0usize, 5u32), (1, 7)] {
        values[slot] = quad::integrate(&problem.mesh, order, |t, b| {
            problem.k2_at(t) * (u.value_at(t, b) + problem.w.eval(&problem.mesh, t, b)).cosh()
        })?;
    }
    Ok((values[0] - values[1]).abs() / values[1].abs().max(1e-300))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_suite_passes() {
        let rows = scalar_suite();
        assert!(all_pass(&rows), "{}", render(&rows));
    }

    #[test]
    fn collapse_check_is_machine_exact_on_small_mesh() {
        let c = linear_collapse_check(6).unwrap();
        assert!(c.df_primal_rel <= 1e-10, "{c:?}");
        assert!(c.df_dual_rel <= 1e-10, "{c:?}");
        assert!(c.identity_residual_rel <= 1e-10, "{c:?}");
        assert!(c.max_div_defect <= 1e-10, "{c:?}");
    }

    #[test]
    fn convergence_suite_passes() {
        let rows = convergence_suite();
        assert!(all_pass(&rows), "{}", render(&rows));
    }
}
