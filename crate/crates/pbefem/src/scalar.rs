//! Stable closed-form scalar functions behind the dual functional.
//!
//! Everything here is pointwise arithmetic on the quantities entering the
//! conjugate integrand and the nonlinear error measures: `Theta(s) = s +
//! sqrt(s^2+1)`, the scaled residual `rho = (div y* + l)/k^2`, the conjugate
//! density, the Bregman-type distance `A(s,t)` of cosh, and the forcing
//! (uniform convexity) density. Hyperbolic arguments are limited to
//! [`COSH_ARG_LIMIT`] because `cosh` overflows an f64 shortly above 710; the
//! limit is an error, not a silent clamp.

use thiserror::Error;

/// Largest hyperbolic argument accepted before reporting overflow.
pub const COSH_ARG_LIMIT: f64 = 700.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScalarError {
    #[error("hyperbolic argument {arg} exceeds |{COSH_ARG_LIMIT}|, cosh would overflow")]
    Overflow { arg: f64 },
    #[error("rho is undefined where k^2 = 0")]
    ZeroIonicStrength,
}

/// Pointwise data of the nonlinearity: `k^2`, the shift `w`, and the load `l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearityParams {
    pub k2: f64,
    pub w: f64,
    pub l: f64,
}

fn guard(arg: f64) -> Result<f64, ScalarError> {
    if arg.abs() <= COSH_ARG_LIMIT {
        Ok(arg)
    } else {
        Err(ScalarError::Overflow { arg })
    }
}

/// `Theta(s) = s + sqrt(s^2 + 1)`, always positive.
///
/// For negative arguments the direct formula cancels catastrophically, so the
/// reciprocal identity `Theta(-s) = 1/Theta(s)` is used instead.
pub fn theta(s: f64) -> f64 {
    if s >= 0.0 {
        s + s.hypot(1.0)
    } else {
        1.0 / (-s + s.hypot(1.0))
    }
}

/// `arsinh(s) = ln(Theta(s))`, computed through [`theta`] so that large
/// negative arguments keep full precision.
pub fn asinh_stable(s: f64) -> f64 {
    if s >= 0.0 {
        theta(s).ln()
    } else {
        -theta(-s).ln()
    }
}

/// Scaled flux residual `rho = (div y* + l) / k^2`.
pub fn rho_k(div_y_star: f64, params: &NonlinearityParams) -> Result<f64, ScalarError> {
    if params.k2 <= 0.0 {
        return Err(ScalarError::ZeroIonicStrength);
    }
    Ok((div_y_star + params.l) / params.k2)
}

/// Maximizer `xi_0 = arsinh(rho) - w` of the pointwise conjugate problem.
pub fn xi0(rho: f64, w: f64) -> f64 {
    asinh_stable(rho) - w
}

/// Pointwise conjugate density
/// `(r + l) (arsinh(rho) - w) - k^2 sqrt(rho^2 + 1)` with `rho = (r + l)/k^2`,
/// where `r` is the flux divergence. Uses `cosh(arsinh(x)) = sqrt(x^2+1)`.
pub fn fstar_density(div_y_star: f64, params: &NonlinearityParams) -> Result<f64, ScalarError> {
    let rho = rho_k(div_y_star, params)?;
    Ok(params.k2 * (rho * (asinh_stable(rho) - params.w) - rho.hypot(1.0)))
}

/// `A(s, t) = cosh(t) - cosh(s) + s sinh(s) - t sinh(s)`, the nonnegative
/// distance underlying both nonlinear error measures.
///
/// Satisfies `(t-s)^2/2 <= A(s,t) <= (sinh t - sinh s)^2/2` with equality
/// exactly at `s = t`.
pub fn bregman_a(s: f64, t: f64) -> Result<f64, ScalarError> {
    let s = guard(s)?;
    let t = guard(t)?;
    Ok(t.cosh() - s.cosh() + s * s.sinh() - t * s.sinh())
}

/// Forcing density `k^2 (cosh(zeta/2) - 1) >= k^2 zeta^2 / 8`.
///
/// Written as `2 k^2 sinh^2(zeta/4)` so the value stays accurate (and the
/// quadratic lower bound exact) near zero.
pub fn forcing_density(zeta: f64, k2: f64) -> Result<f64, ScalarError> {
    let z = guard(zeta)?;
    let s = (z / 4.0).sinh();
    Ok(2.0 * k2 * s * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn theta_exact_values() {
        assert_eq!(theta(0.0), 1.0);
        // sqrt(0.75^2 + 1) = 5/4 exactly
        assert_eq!(theta(0.75), 2.0);
        assert_eq!(theta(-0.75), 0.5);
    }

    #[test]
    fn theta_reciprocal_identity() {
        for i in 0..=600 {
            let s = -30.0 + i as f64 * 0.1;
            let prod = theta(s) * theta(-s);
            assert!((prod - 1.0).abs() <= 1e-14, "s={s} prod={prod}");
        }
    }

    #[test]
    fn asinh_stable_at_large_negative() {
        // ln(theta(-1e8)) = -ln(theta(1e8)); the naive formula returns -inf
        let v = asinh_stable(-1e8);
        assert!((v + (2.0f64 * 1e8).ln()).abs() < 1e-9);
    }

    #[test]
    fn rho_examples() {
        let p = NonlinearityParams { k2: 1.0, w: 0.0, l: 0.0 };
        assert_eq!(rho_k(0.0, &p).unwrap(), 0.0);
        let p = NonlinearityParams { k2: 0.16, w: 0.0, l: 0.04 };
        assert!((rho_k(0.12, &p).unwrap() - 1.0).abs() < 1e-15);
        let p = NonlinearityParams { k2: 0.0, w: 0.0, l: 0.0 };
        assert_eq!(rho_k(0.0, &p), Err(ScalarError::ZeroIonicStrength));
    }

    #[test]
    fn xi0_inverts_sinh() {
        assert_eq!(xi0(0.0, 0.0), 0.0);
        assert!((xi0(1.3f64.sinh(), 0.3) - 1.0).abs() < 1e-14);
        for rho in [-5.0, -1.0, 2.0, 10.0] {
            assert!(xi0(rho, 0.0).abs() <= rho.abs());
        }
    }

    #[test]
    fn fstar_density_examples() {
        let p = NonlinearityParams { k2: 1.0, w: 0.0, l: 0.0 };
        assert!((fstar_density(0.0, &p).unwrap() + 1.0).abs() < 1e-15);
        // rho = sinh(1): value is 0.16 (sinh 1 - cosh 1) = -0.16 exp(-1)
        let p = NonlinearityParams { k2: 0.16, w: 0.0, l: 0.0 };
        let v = fstar_density(1.0f64.sinh() * 0.16, &p).unwrap();
        assert!((v - (-0.0588607)).abs() < 1e-7);
        assert!((v + 0.16 * (-1.0f64).exp()).abs() < 1e-15);
        // w multiplies (r + l) = 0
        let p = NonlinearityParams { k2: 1.0, w: 2.0, l: 0.0 };
        assert!((fstar_density(0.0, &p).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn fstar_density_is_convex_in_r() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(super::super::verify::seed());
        let p = NonlinearityParams { k2: 0.16, w: 1.5, l: 0.3 };
        for _ in 0..10_000 {
            let a: f64 = rng.gen_range(-40.0..40.0);
            let b: f64 = rng.gen_range(-40.0..40.0);
            let fa = fstar_density(a, &p).unwrap();
            let fb = fstar_density(b, &p).unwrap();
            let fm = fstar_density(0.5 * (a + b), &p).unwrap();
            assert!(fm <= 0.5 * (fa + fb) + 1e-12 * (1.0 + fa.abs() + fb.abs()));
        }
    }

    #[test]
    fn bregman_examples() {
        for s in [-3.0, 0.0, 1.7] {
            assert_eq!(bregman_a(s, s).unwrap(), 0.0);
        }
        assert!((bregman_a(0.0, 2.0).unwrap() - (2.0f64.cosh() - 1.0)).abs() < 1e-14);
        assert!((bregman_a(0.0, 2.0).unwrap() - 2.7621957).abs() < 1e-6);
        let a12 = bregman_a(1.0, 2.0).unwrap();
        assert!((a12 - 1.0439139).abs() < 1e-6);
        let upper = (2.0f64.sinh() - 1.0f64.sinh()).powi(2) / 2.0;
        assert!(0.5 <= a12 && a12 <= upper);
        assert!((upper - 3.0053).abs() < 1e-4);
        assert!(bregman_a(0.0, 701.0).is_err());
    }

    #[test]
    fn bregman_sandwich_over_random_samples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(super::super::verify::seed());
        for _ in 0..100_000 {
            let s: f64 = rng.gen_range(-8.0..8.0);
            let t: f64 = rng.gen_range(-8.0..8.0);
            let a = bregman_a(s, t).unwrap();
            let low = (t - s) * (t - s) / 2.0;
            let high = (t.sinh() - s.sinh()).powi(2) / 2.0;
            assert!(low <= a + 1e-11 * (1.0 + a.abs()), "low s={s} t={t}");
            assert!(a <= high + 1e-11 * (1.0 + high.abs()), "high s={s} t={t}");
        }
    }

    #[test]
    fn forcing_examples_and_quadratic_bound() {
        assert_eq!(forcing_density(0.0, 7.0).unwrap(), 0.0);
        let v = forcing_density(2.0, 0.16).unwrap();
        assert!((v - 0.16 * (1.0f64.cosh() - 1.0)).abs() < 1e-15);
        assert!((v - 0.0868929).abs() < 1e-7);
        assert!(forcing_density(3.0, 1.0).unwrap() >= 9.0 / 8.0);
        for i in 0..=10_000 {
            let z = -20.0 + i as f64 * 0.004;
            let gap = forcing_density(z, 1.0).unwrap() - z * z / 8.0;
            assert!(gap >= -1e-15, "z={z} gap={gap}");
        }
    }
}
