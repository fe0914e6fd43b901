//! Symmetric positive-weight quadrature on triangles.
//!
//! Rules are exact for polynomials up to the named order and have all points
//! inside the closed reference triangle. Orders 1 and 2 are the centroid and
//! edge-midpoint rules; orders 3 and 5 are the classical 6- and 7-point
//! symmetric rules; order 7 is a 16-point conical product rule (all weights
//! positive, unlike the 13-point rule of the same degree).

use crate::mesh::Mesh;
use rayon::prelude::*;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("unsupported quadrature order {0}; supported: 1, 2, 3, 5, 7")]
    UnsupportedOrder(u32),
    #[error("non-finite density value in element {element} at barycentric point {point:?}")]
    NonFinite { element: usize, point: [f64; 3] },
}

/// Quadrature rule in barycentric coordinates; weights sum to one and are
/// scaled by the element area on use.
#[derive(Debug, Clone)]
pub struct QuadRule {
    pub order: u32,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

fn orbit3(a: f64, b: f64) -> [[f64; 3]; 3] {
    let c = 1.0 - a - b;
    [[a, b, c], [b, a, c], [b, c, a]]
}

fn build(order: u32) -> Option<QuadRule> {
    let (points, weights): (Vec<[f64; 3]>, Vec<f64>) = match order {
        1 => (vec![[1.0 / 3.0; 3]], vec![1.0]),
        2 => (
            vec![[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]],
            vec![1.0 / 3.0; 3],
        ),
        3 => {
            // 6-point degree-4 symmetric rule
            let mut p = Vec::new();
            let mut w = Vec::new();
            for (a, b, wt) in [
                (0.108103018168070, 0.445948490915965, 0.223381589678011),
                (0.816847572980459, 0.091576213509771, 0.109951743655322),
            ] {
                for q in orbit3(a, b) {
                    p.push(q);
                    w.push(wt);
                }
            }
            (p, w)
        }
        5 => {
            let mut p = vec![[1.0 / 3.0; 3]];
            let mut w = vec![0.225];
            for (a, b, wt) in [
                (0.059715871789770, 0.470142064105115, 0.132394152788506),
                (0.797426985353087, 0.101286507323456, 0.125939180544827),
            ] {
                p.push([a, b, b]);
                p.push([b, a, b]);
                p.push([b, b, a]);
                w.extend([wt; 3]);
            }
            (p, w)
        }
        7 => {
            // conical product Gauss rule, 16 points, degree 7
            const PW: [(f64, f64, f64, f64); 16] = [
                (8.77428809330467741e-1, 5.71041961145177246e-2, 6.54669945550144516e-2, 4.71367363867647785e-2),
                (6.31731251641125202e-1, 5.71041961145177246e-2, 3.11164552244357018e-1, 8.83701770447237189e-2),
                (3.11164552244357018e-1, 5.71041961145177246e-2, 6.31731251641125202e-1, 8.83701770447237189e-2),
                (6.54669945550144794e-2, 5.71041961145177246e-2, 8.77428809330467741e-1, 4.71367363867647785e-2),
                (6.72946863150506447e-1, 2.76843013638123803e-1, 5.02101232113697782e-2, 7.07761357961717713e-2),
                (4.84508326630433306e-1, 2.76843013638123803e-1, 2.38648659731442919e-1, 1.32688432214099317e-1),
                (2.38648659731442947e-1, 2.76843013638123803e-1, 4.84508326630433250e-1, 1.32688432214099317e-1),
                (5.02101232113698615e-2, 2.76843013638123803e-1, 6.72946863150506336e-1, 7.07761357961717713e-2),
                (3.87497483406694154e-1, 5.83590432368916834e-1, 2.89120842243890119e-2, 4.51680985647398003e-2),
                (2.78990463496508800e-1, 5.83590432368916834e-1, 1.37419104134574366e-1, 8.46794490434925190e-2),
                (1.37419104134574366e-1, 5.83590432368916834e-1, 2.78990463496508800e-1, 8.46794490434925190e-2),
                (2.89120842243890119e-2, 5.83590432368916834e-1, 3.87497483406694154e-1, 4.51680985647398003e-2),
                (1.30056079216834403e-1, 8.60240135656219485e-1, 9.70378512694610937e-3, 1.08464518210505036e-2),
                (9.36377844373284807e-2, 8.60240135656219485e-1, 4.61220799064520348e-2, 2.03345191289575761e-2),
                (4.61220799064520348e-2, 8.60240135656219485e-1, 9.36377844373284807e-2, 2.03345191289575761e-2),
                (9.70378512694611284e-3, 8.60240135656219485e-1, 1.30056079216834403e-1, 1.08464518210505036e-2),
            ];
            (
                PW.iter().map(|&(l1, l2, l3, _)| [l1, l2, l3]).collect(),
                PW.iter().map(|&(_, _, _, w)| w).collect(),
            )
        }
        _ => return None,
    };
    Some(QuadRule { order, points, weights })
}

/// Quadrature rule for the requested order.
pub fn rule(order: u32) -> Result<&'static QuadRule, QuadError> {
    static RULES: [OnceLock<Option<QuadRule>>; 8] = [const { OnceLock::new() }; 8];
    let slot = RULES
        .get(order as usize)
        .ok_or(QuadError::UnsupportedOrder(order))?;
    slot.get_or_init(|| build(order))
        .as_ref()
        .ok_or(QuadError::UnsupportedOrder(order))
}

/// Sum with a fixed pairwise reduction order, so repeated runs (serial or
/// parallel) agree bitwise.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Integrate a pointwise density over every element of the mesh.
///
/// `density(element, barycentric)` is evaluated at the quadrature points of
/// the rule of the given order; a non-finite value aborts with the offending
/// element (this is how cosh overflow at extreme arguments surfaces).
pub fn integrate<F>(mesh: &Mesh, order: u32, density: F) -> Result<f64, QuadError>
where
    F: Fn(usize, [f64; 3]) -> f64 + Sync,
{
    let per = integrate_per_element(mesh, order, density)?;
    Ok(pairwise_sum(&per))
}

/// Per-element integrals of a pointwise density.
pub fn integrate_per_element<F>(mesh: &Mesh, order: u32, density: F) -> Result<Vec<f64>, QuadError>
where
    F: Fn(usize, [f64; 3]) -> f64 + Sync,
{
    let r = rule(order)?;
    (0..mesh.n_triangles())
        .into_par_iter()
        .map(|t| {
            let mut acc = 0.0;
            for (p, w) in r.points.iter().zip(&r.weights) {
                let v = density(t, *p);
                if !v.is_finite() {
                    return Err(QuadError::NonFinite { element: t, point: *p });
                }
                acc += w * v;
            }
            Ok(acc * mesh.area(t))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monomial_exact(a: u32, b: u32) -> f64 {
        // integral of x^a y^b over the unit right triangle
        let fact = |n: u32| (1..=n as u64).product::<u64>() as f64;
        fact(a) * fact(b) / fact(a + b + 2)
    }

    #[test]
    fn rules_are_exact_for_their_degree() {
        for order in [1u32, 2, 3, 5, 7] {
            let r = rule(order).unwrap();
            assert!((pairwise_sum(&r.weights) - 1.0).abs() <= 1e-14);
            assert!(r.weights.iter().all(|&w| w > 0.0));
            assert!(r
                .points
                .iter()
                .all(|p| p.iter().all(|&l| (-1e-14..=1.0 + 1e-14).contains(&l))));
            for a in 0..=order {
                for b in 0..=(order - a) {
                    // l2 = x, l3 = y on the reference triangle; area 1/2
                    let q: f64 = r
                        .points
                        .iter()
                        .zip(&r.weights)
                        .map(|(p, w)| w * p[1].powi(a as i32) * p[2].powi(b as i32))
                        .sum::<f64>()
                        * 0.5;
                    let e = monomial_exact(a, b);
                    assert!(
                        (q - e).abs() <= 1e-12 * e.max(1e-3),
                        "order {order} x^{a} y^{b}: {q} vs {e}"
                    );
                }
            }
        }
        assert_eq!(rule(4).unwrap_err(), QuadError::UnsupportedOrder(4));
    }

    #[test]
    fn spec_point_values() {
        // order 1: centroid, weight 1; order 2: edge midpoints, weights 1/3
        let r1 = rule(1).unwrap();
        assert_eq!(r1.points, vec![[1.0 / 3.0; 3]]);
        let r2 = rule(2).unwrap();
        assert_eq!(r2.weights, vec![1.0 / 3.0; 3]);
        // x^2 over the unit right triangle = 1/12, x^3 y^2 = 1/420
        assert!((monomial_exact(2, 0) - 1.0 / 12.0).abs() < 1e-16);
        assert!((monomial_exact(3, 2) - 1.0 / 420.0).abs() < 1e-16);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_smooth_data() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        let naive: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - naive).abs() < 1e-9);
    }
}
