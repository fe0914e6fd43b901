//! Structured construction of the square-with-inclusion geometry.
//!
//! The square is triangulated in polar fashion around the polygon: rings of
//! vertices at a fixed set of angles run from the polygon centroid, across
//! the polygon boundary, out to the square boundary. Polygon vertices and
//! square corners are placed exactly, every extra angular sample on the
//! polygon boundary lies exactly on a polygon edge, and the polygon boundary
//! ring is the interface. The radii between polygon and square grow
//! geometrically so elements keep bounded aspect ratio near the inclusion.
//!
//! The construction needs the polygon to be star-shaped with respect to its
//! centroid (every preset geometry is convex); anything else is rejected.

use super::{Mesh, MeshError, REGION_INNER, REGION_OUTER};
use crate::geo::{self, Point};

/// Triangulate a centered square of the given side with an interior polygon
/// resolved exactly by mesh edges. Triangles inside the polygon are tagged
/// region 1, outside region 2. An empty polygon yields a plain structured
/// grid entirely in region 2.
pub fn build_square_with_polygon(
    side: f64,
    polygon: &[Point],
    target_h: f64,
) -> Result<Mesh, MeshError> {
    if !(side > 0.0) || !side.is_finite() {
        return Err(MeshError::BadParameter(format!("side must be positive, got {side}")));
    }
    if !(target_h > 0.0) || !target_h.is_finite() {
        return Err(MeshError::BadParameter(format!(
            "target_h must be positive, got {target_h}"
        )));
    }
    if polygon.is_empty() {
        return structured_square(side, target_h);
    }
    if polygon.len() < 3 {
        return Err(MeshError::DegeneratePolygon(0.0));
    }

    let mut poly: Vec<Point> = polygon.to_vec();
    let area = geo::polygon_area(&poly);
    if area.abs() < 1e-12 * side * side {
        return Err(MeshError::DegeneratePolygon(area));
    }
    if area < 0.0 {
        poly.reverse();
    }
    let half = side / 2.0;
    for &[x, y] in &poly {
        if x.abs() >= half || y.abs() >= half {
            return Err(MeshError::PolygonOutsideSquare(x, y));
        }
    }
    let n = poly.len();
    for i in 0..n {
        for j in i + 1..n {
            if geo::segments_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return Err(MeshError::PolygonSelfIntersects);
            }
        }
    }

    // area centroid
    let c = {
        let mut cx = 0.0;
        let mut cy = 0.0;
        let mut a2 = 0.0;
        for i in 0..n {
            let cr = geo::cross(poly[i], poly[(i + 1) % n]);
            cx += (poly[i][0] + poly[(i + 1) % n][0]) * cr;
            cy += (poly[i][1] + poly[(i + 1) % n][1]) * cr;
            a2 += cr;
        }
        [cx / (3.0 * a2), cy / (3.0 * a2)]
    };

    // star-shapedness: vertex angles around the centroid must advance by
    // (0, pi) at every edge
    let vangle: Vec<f64> = poly.iter().map(|&p| angle_of(geo::sub(p, c))).collect();
    for i in 0..n {
        let d = wrap_positive(vangle[(i + 1) % n] - vangle[i]);
        if !(1e-9..std::f64::consts::PI - 1e-9).contains(&d) {
            return Err(MeshError::PolygonNotStarShaped);
        }
    }

    // base angle set: polygon vertices and square corners, exact points kept
    #[derive(Clone, Copy)]
    struct BaseAngle {
        theta: f64,
        poly_vertex: Option<usize>,
        corner: Option<Point>,
    }
    let mut base: Vec<BaseAngle> = (0..n)
        .map(|i| BaseAngle { theta: vangle[i], poly_vertex: Some(i), corner: None })
        .collect();
    for corner in [[half, half], [-half, half], [-half, -half], [half, -half]] {
        base.push(BaseAngle {
            theta: angle_of(geo::sub(corner, c)),
            poly_vertex: None,
            corner: Some(corner),
        });
    }
    base.sort_by(|a, b| a.theta.total_cmp(&b.theta));
    let mut merged: Vec<BaseAngle> = Vec::with_capacity(base.len());
    for b in base {
        match merged.last_mut() {
            Some(last) if (b.theta - last.theta).abs() < 1e-12 => {
                last.poly_vertex = last.poly_vertex.or(b.poly_vertex);
                last.corner = last.corner.or(b.corner);
            }
            _ => merged.push(b),
        }
    }

    // fill every angular gap so outer-boundary spacing respects target_h
    let mut samples: Vec<BaseAngle> = Vec::new();
    let m = merged.len();
    for i in 0..m {
        let a = merged[i];
        let b_theta = if i + 1 < m {
            merged[i + 1].theta
        } else {
            merged[0].theta + std::f64::consts::TAU
        };
        samples.push(a);
        let gap = b_theta - a.theta;
        let r_a = square_ray_radius(c, a.theta, half);
        let r_b = square_ray_radius(c, b_theta, half);
        let sub = ((gap * r_a.max(r_b) / target_h).ceil() as usize).max(1);
        for s in 1..sub {
            samples.push(BaseAngle {
                theta: a.theta + gap * s as f64 / sub as f64,
                poly_vertex: None,
                corner: None,
            });
        }
    }
    let angles = samples.len();

    // ray hits: exact vertices/corners where available
    let mut p_in = Vec::with_capacity(angles);
    let mut p_out = Vec::with_capacity(angles);
    for s in &samples {
        p_in.push(match s.poly_vertex {
            Some(i) => poly[i],
            None => ray_polygon_hit(c, s.theta, &poly, &vangle)?,
        });
        p_out.push(match s.corner {
            Some(p) => p,
            None => {
                let r = square_ray_radius(c, s.theta, half);
                geo::add(c, geo::scale(r, [s.theta.cos(), s.theta.sin()]))
            }
        });
    }

    // ring counts
    let max_gap = {
        let mut g: f64 = 0.0;
        for i in 0..angles {
            let next = if i + 1 < angles {
                samples[i + 1].theta
            } else {
                samples[0].theta + std::f64::consts::TAU
            };
            g = g.max(next - samples[i].theta);
        }
        g
    };
    let mut outer_rings = 1usize;
    let mut inner_rings = 1usize;
    for j in 0..angles {
        let r_in = geo::dist(p_in[j], c);
        let r_out = geo::dist(p_out[j], c);
        let ratio = 1.0 + max_gap.min(target_h / r_out);
        let lj = ((r_out / r_in).ln() / ratio.ln()).ceil() as usize;
        outer_rings = outer_rings.max(lj.max(1));
        inner_rings = inner_rings.max((r_in / target_h).ceil() as usize).max(1);
    }

    // vertex layout: centroid, inner rings 1..=K (K = polygon ring), outer rings 1..=L
    let mut vertices: Vec<Point> = vec![c];
    let ring_id = |k: usize, j: usize| 1 + (k - 1) * angles + j;
    for k in 1..=inner_rings {
        for j in 0..angles {
            if k == inner_rings {
                vertices.push(p_in[j]);
            } else {
                let t = k as f64 / inner_rings as f64;
                vertices.push(geo::add(c, geo::scale(t, geo::sub(p_in[j], c))));
            }
        }
    }
    for l in 1..=outer_rings {
        for j in 0..angles {
            if l == outer_rings {
                vertices.push(p_out[j]);
            } else {
                let r_in = geo::dist(p_in[j], c);
                let r_out = geo::dist(p_out[j], c);
                let r = r_in * (r_out / r_in).powf(l as f64 / outer_rings as f64);
                let dir = geo::scale(1.0 / geo::dist(p_in[j], c), geo::sub(p_in[j], c));
                vertices.push(geo::add(c, geo::scale(r, dir)));
            }
        }
    }

    let mut triangles = Vec::new();
    let mut region = Vec::new();
    // fan around the centroid
    for j in 0..angles {
        let jn = (j + 1) % angles;
        triangles.push([0, ring_id(1, j), ring_id(1, jn)]);
        region.push(REGION_INNER);
    }
    // ring bands; polygon ring is inner ring K = outer ring 0
    let total_rings = inner_rings + outer_rings;
    for k in 1..total_rings {
        for j in 0..angles {
            let jn = (j + 1) % angles;
            let (a, b, d, e) = (ring_id(k, j), ring_id(k + 1, j), ring_id(k + 1, jn), ring_id(k, jn));
            triangles.push([a, b, d]);
            triangles.push([a, d, e]);
            let tag = if k < inner_rings { REGION_INNER } else { REGION_OUTER };
            region.push(tag);
            region.push(tag);
        }
    }

    let boundary: Vec<(usize, usize, i32)> = (0..angles)
        .map(|j| (ring_id(total_rings, j), ring_id(total_rings, (j + 1) % angles), 1))
        .collect();
    let interface: Vec<(usize, usize)> = (0..angles)
        .map(|j| (ring_id(inner_rings, j), ring_id(inner_rings, (j + 1) % angles)))
        .collect();

    Mesh::new(vertices, triangles, region, boundary, Some(interface))
}

fn angle_of(d: Point) -> f64 {
    d[1].atan2(d[0])
}

fn wrap_positive(mut t: f64) -> f64 {
    while t <= 0.0 {
        t += std::f64::consts::TAU;
    }
    while t > std::f64::consts::TAU {
        t -= std::f64::consts::TAU;
    }
    t
}

/// Distance from `c` along direction `theta` to the boundary of the centered
/// square with half-side `half`.
fn square_ray_radius(c: Point, theta: f64, half: f64) -> f64 {
    let d = [theta.cos(), theta.sin()];
    let mut r = f64::INFINITY;
    if d[0].abs() > 1e-15 {
        for x in [half, -half] {
            let t = (x - c[0]) / d[0];
            if t > 0.0 && (c[1] + t * d[1]).abs() <= half + 1e-12 {
                r = r.min(t);
            }
        }
    }
    if d[1].abs() > 1e-15 {
        for y in [half, -half] {
            let t = (y - c[1]) / d[1];
            if t > 0.0 && (c[0] + t * d[0]).abs() <= half + 1e-12 {
                r = r.min(t);
            }
        }
    }
    r
}

/// Intersection of the ray from the centroid at angle `theta` with the
/// polygon boundary; the result lies exactly on the containing edge segment.
fn ray_polygon_hit(
    c: Point,
    theta: f64,
    poly: &[Point],
    vangle: &[f64],
) -> Result<Point, MeshError> {
    let n = poly.len();
    let t = wrap_positive(theta - vangle[0]);
    // locate the edge whose angular interval (relative to vertex 0) holds t
    let mut edge = n - 1;
    let mut acc = 0.0;
    for i in 0..n {
        let step = wrap_positive(vangle[(i + 1) % n] - vangle[i]);
        if t <= acc + step + 1e-15 {
            edge = i;
            break;
        }
        acc += step;
    }
    let a = poly[edge];
    let b = poly[(edge + 1) % n];
    let d = [theta.cos(), theta.sin()];
    let denom = geo::cross(d, geo::sub(b, a));
    if denom.abs() < 1e-300 {
        return Err(MeshError::PolygonNotStarShaped);
    }
    let s = geo::cross(geo::sub(a, c), geo::sub(b, a)) / denom;
    let lam = geo::cross(geo::sub(a, c), d) / denom;
    if s <= 0.0 || !(-1e-9..=1.0 + 1e-9).contains(&lam) {
        return Err(MeshError::PolygonNotStarShaped);
    }
    let lam = lam.clamp(0.0, 1.0);
    Ok(geo::add(a, geo::scale(lam, geo::sub(b, a))))
}

/// Plain structured grid on the centered square, all triangles in region 2.
fn structured_square(side: f64, target_h: f64) -> Result<Mesh, MeshError> {
    let n = ((side / target_h).ceil() as usize).max(1);
    let half = side / 2.0;
    let h = side / n as f64;
    let vid = |i: usize, j: usize| j * (n + 1) + i;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            let x = if i == n { half } else { -half + i as f64 * h };
            let y = if j == n { half } else { -half + j as f64 * h };
            vertices.push([x, y]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            triangles.push([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)]);
            triangles.push([vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)]);
        }
    }
    let mut boundary = Vec::with_capacity(4 * n);
    for i in 0..n {
        boundary.push((vid(i, 0), vid(i + 1, 0), 1));
        boundary.push((vid(i, n), vid(i + 1, n), 1));
        boundary.push((vid(0, i), vid(0, i + 1), 1));
        boundary.push((vid(n, i), vid(n, i + 1), 1));
    }
    let region = vec![REGION_OUTER; triangles.len()];
    Mesh::new(vertices, triangles, region, boundary, None)
}

/// Regular polygon with `sides` vertices and the given circumradius, centered
/// at the origin with the first vertex on the positive x axis.
pub fn regular_polygon(sides: usize, circumradius: f64) -> Vec<Point> {
    (0..sides)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / sides as f64;
            [circumradius * t.cos(), circumradius * t.sin()]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifteen_gon_in_square() {
        let poly = regular_polygon(15, 2.0);
        let mesh = build_square_with_polygon(20.0, &poly, 2.0).unwrap();
        assert!(mesh.regions().contains(&REGION_INNER));
        assert!(mesh.regions().contains(&REGION_OUTER));
        assert!(mesh.interface_edges().len() >= 15);
        assert!((mesh.total_area() - 400.0).abs() < 1e-9);
        // inner area is exactly the polygon area
        let inner: f64 = (0..mesh.n_triangles())
            .filter(|&t| mesh.region(t) == REGION_INNER)
            .map(|t| mesh.area(t))
            .sum();
        assert!((inner - geo::polygon_area(&poly)).abs() < 1e-12 * inner);
    }

    #[test]
    fn empty_polygon_gives_plain_grid() {
        let mesh = build_square_with_polygon(1.0, &[], 0.3).unwrap();
        assert!(mesh.regions().iter().all(|&r| r == REGION_OUTER));
        assert!(mesh.interface_edges().is_empty());
        assert!((mesh.total_area() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn aligned_inner_square_area_is_exact() {
        let poly = vec![[0.5, -0.5], [0.5, 0.5], [-0.5, 0.5], [-0.5, -0.5]];
        let mesh = build_square_with_polygon(2.0, &poly, 0.5).unwrap();
        let inner: f64 = (0..mesh.n_triangles())
            .filter(|&t| mesh.region(t) == REGION_INNER)
            .map(|t| mesh.area(t))
            .sum();
        assert!((inner - 1.0).abs() < 1e-12, "inner = {inner}");
        // every interface edge lies on the polygon boundary
        for &(a, b) in mesh.interface_edges() {
            for v in [mesh.vertex(a), mesh.vertex(b)] {
                let on = (v[0].abs() - 0.5).abs() < 1e-12 || (v[1].abs() - 0.5).abs() < 1e-12;
                assert!(on, "interface vertex {v:?} off the polygon");
            }
        }
    }

    #[test]
    fn rejects_bad_polygons() {
        assert!(matches!(
            build_square_with_polygon(2.0, &regular_polygon(4, 1.5), 0.5),
            Err(MeshError::PolygonOutsideSquare(..))
        ));
        let bowtie = vec![[0.0, 0.0], [0.6, 0.6], [0.6, 0.0], [0.0, 0.4]];
        assert!(matches!(
            build_square_with_polygon(2.0, &bowtie, 0.5),
            Err(MeshError::PolygonSelfIntersects | MeshError::PolygonNotStarShaped)
        ));
        let line = vec![[0.0, 0.0], [0.3, 0.0], [0.6, 0.0]];
        assert!(matches!(
            build_square_with_polygon(2.0, &line, 0.5),
            Err(MeshError::DegeneratePolygon(..))
        ));
    }

    #[test]
    fn refinement_preserves_interface_geometry() {
        let poly = regular_polygon(15, 2.0);
        let mesh = build_square_with_polygon(20.0, &poly, 3.0).unwrap();
        let before: f64 = mesh
            .interface_edges()
            .iter()
            .map(|&(a, b)| geo::dist(mesh.vertex(a), mesh.vertex(b)))
            .sum();
        let marked: Vec<usize> = (0..mesh.n_triangles()).step_by(3).collect();
        let fine = mesh.refine(&marked).unwrap().mesh;
        let after: f64 = fine
            .interface_edges()
            .iter()
            .map(|&(a, b)| geo::dist(fine.vertex(a), fine.vertex(b)))
            .sum();
        assert!((before - after).abs() < 1e-10);
        // all fine interface vertices lie on the coarse interface segments
        for &(a, b) in fine.interface_edges() {
            for v in [fine.vertex(a), fine.vertex(b)] {
                let mut on = false;
                for &(p, q) in mesh.interface_edges() {
                    let (p, q) = (mesh.vertex(p), mesh.vertex(q));
                    let cr = geo::signed_area_x2(p, q, v).abs();
                    let within = geo::dot(geo::sub(v, p), geo::sub(v, q)) <= 1e-12;
                    if cr < 1e-10 && within {
                        on = true;
                        break;
                    }
                }
                assert!(on, "fine interface vertex {v:?} not on coarse interface");
            }
        }
    }
}
