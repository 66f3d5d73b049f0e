//! Derived geometry of the radial graph `X = e^phi x` over the cap.
//!
//! In axisymmetric coordinates the mean curvature is
//! `H = e^{-phi} v^{-1} D`, where `v = sqrt(1 + phi_theta^2)` and
//! `D = n - phi_thetatheta / v^2 - (n - 1) cot(theta) phi_theta`.

use serde::Serialize;
use thiserror::Error;

use crate::grid::{CapGrid, GridError};
use crate::weight::{WeightError, WeightSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite log-radius {value} at node {node}")]
    NonFinite { node: usize, value: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Weight(#[from] WeightError),
}

/// Per-node geometry of one profile. All vectors have one entry per grid node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeometryFields {
    pub phi_theta: Vec<f64>,
    pub phi_thetatheta: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub denom: Vec<f64>,
    pub h: Vec<f64>,
    /// Support function `<X, nu> = u / v`.
    pub w: Vec<f64>,
    /// Speed `1 / (f(u) H)`.
    pub phi_speed: Vec<f64>,
    /// `Phi / w = v / (u f(u) H)`.
    pub psi: Vec<f64>,
    /// Area density `e^{n phi} v sin^{n-1} theta`.
    pub area_elem: Vec<f64>,
}

pub(crate) fn check_finite(phi: &[f64]) -> Result<(), GeometryError> {
    match phi.iter().position(|p| !p.is_finite()) {
        Some(node) => Err(GeometryError::NonFinite { node, value: phi[node] }),
        None => Ok(()),
    }
}

/// Operator denominator `D` from precomputed derivatives.
#[inline]
pub(crate) fn denominator(n: f64, cot: f64, p1: f64, p2: f64) -> f64 {
    n - p2 / (1.0 + p1 * p1) - (n - 1.0) * cot * p1
}

pub fn compute_fields(grid: &CapGrid, w: &WeightSpec, phi: &[f64]) -> Result<GeometryFields, GeometryError> {
    let p1 = grid.d1(phi)?;
    let p2 = grid.d2(phi)?;
    check_finite(phi)?;
    let n = grid.n() as f64;
    let len = phi.len();
    let mut f = GeometryFields {
        phi_theta: p1,
        phi_thetatheta: p2,
        u: Vec::with_capacity(len),
        v: Vec::with_capacity(len),
        denom: Vec::with_capacity(len),
        h: Vec::with_capacity(len),
        w: Vec::with_capacity(len),
        phi_speed: Vec::with_capacity(len),
        psi: Vec::with_capacity(len),
        area_elem: Vec::with_capacity(len),
    };
    for j in 0..len {
        let (d1, d2) = (f.phi_theta[j], f.phi_thetatheta[j]);
        let u = phi[j].exp();
        let v = (1.0 + d1 * d1).sqrt();
        let denom = denominator(n, grid.cot()[j], d1, d2);
        let h = denom / (u * v);
        let fu = w.eval(u)?;
        f.u.push(u);
        f.v.push(v);
        f.denom.push(denom);
        f.h.push(h);
        f.w.push(u / v);
        f.phi_speed.push(1.0 / (fu * h));
        f.psi.push(v / (u * fu * h));
        f.area_elem.push((n * phi[j]).exp() * v * grid.sin_pow()[j]);
    }
    Ok(f)
}

/// `H^n` measure of the graph of `e^phi`.
pub fn hypersurface_area(grid: &CapGrid, phi: &[f64]) -> Result<f64, GeometryError> {
    let p1 = grid.d1(phi)?;
    check_finite(phi)?;
    let n = grid.n() as f64;
    Ok(grid.integrate(|j| (n * phi[j]).exp() * (1.0 + p1[j] * p1[j]).sqrt()))
}

/// `min_j 1/v_j = min <X/|X|, nu>`, the worst-case star-shapedness.
pub fn star_shape_ratio(fields: &GeometryFields) -> f64 {
    fields.v.iter().map(|v| 1.0 / v).fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn round_sphere_radius_two() {
        let g = CapGrid::new(2, PI / 3.0, 64).unwrap();
        let phi = vec![2f64.ln(); 64];
        let f = compute_fields(&g, &WeightSpec::power_exact(1.0), &phi).unwrap();
        for j in 0..64 {
            assert_eq!(f.v[j], 1.0);
            assert_eq!(f.denom[j], 2.0);
            assert!((f.h[j] - 1.0).abs() < 1e-15);
            assert!((f.w[j] - 2.0).abs() < 1e-15);
            assert!((f.phi_speed[j] - 0.5).abs() < 1e-15);
            assert!((f.psi[j] - 0.25).abs() < 1e-15);
        }
        assert_eq!(star_shape_ratio(&f), 1.0);
    }

    #[test]
    fn unit_sphere_any_dimension() {
        for n in 1..5 {
            let g = CapGrid::new(n, 1.0, 16).unwrap();
            let f = compute_fields(&g, &WeightSpec::power_exact(2.0), &[0.0; 16]).unwrap();
            assert!(f.h.iter().all(|&h| h == n as f64));
            assert!(f.w.iter().all(|&w| w == 1.0));
        }
    }

    #[test]
    fn algebraic_identities_hold_per_node() {
        let g = CapGrid::new(3, 1.2, 96).unwrap();
        let phi = g.sample(|t| 0.3 + 0.1 * (PI * t / 1.2).cos() + 0.02 * (2.0 * PI * t / 1.2).cos());
        let f = compute_fields(&g, &WeightSpec::power_exact(1.5), &phi).unwrap();
        for j in 0..96 {
            assert!((f.h[j] * f.u[j] * f.v[j] - f.denom[j]).abs() <= 1e-12);
            assert!((f.w[j] * f.v[j] - f.u[j]).abs() <= 1e-12);
            assert!((f.psi[j] * f.w[j] - f.phi_speed[j]).abs() <= 1e-12 * f.phi_speed[j].abs());
            assert!(f.v[j] >= 1.0);
        }
    }

    #[test]
    fn area_of_scaled_cap() {
        let g = CapGrid::new(2, PI / 3.0, 128).unwrap();
        let a = hypersurface_area(&g, &vec![2f64.ln(); 128]).unwrap();
        assert!((a - 4.0 * PI).abs() < 1e-3);
        assert_eq!(hypersurface_area(&g, &[0.0; 128]).unwrap(), g.base_area());
    }

    #[test]
    fn perturbed_area_converges() {
        // reference from a 16384-cell evaluation of the same quadrature
        let tm = PI / 3.0;
        let area = |j: usize| {
            let g = CapGrid::new(2, tm, j).unwrap();
            hypersurface_area(&g, &g.sample(|t| 0.05 * (PI * t / tm).cos())).unwrap()
        };
        let reference = area(16384);
        let e64 = (area(64) - reference).abs();
        let e128 = (area(128) - reference).abs();
        assert!(e128 < 1e-4 && (e64 / e128).log2() > 1.8, "{e64} {e128}");
    }

    #[test]
    fn gradient_bound_gives_star_shape_bound() {
        let g = CapGrid::new(2, PI / 3.0, 128).unwrap();
        let phi = g.sample(|t| 0.05 * (3.0 * t).cos());
        let f = compute_fields(&g, &WeightSpec::power_exact(1.0), &phi).unwrap();
        let g0 = f.phi_theta.iter().fold(0.0f64, |m, p| m.max(p.abs()));
        assert!(star_shape_ratio(&f) >= 1.0 / (1.0 + g0 * g0).sqrt() - 1e-15);
    }

    #[test]
    fn rejects_nan() {
        let g = CapGrid::new(2, 1.0, 8).unwrap();
        let mut phi = vec![0.0; 8];
        phi[3] = f64::NAN;
        assert!(matches!(
            compute_fields(&g, &WeightSpec::power_exact(1.0), &phi),
            Err(GeometryError::NonFinite { node: 3, .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn spheres_are_exact(r in 0.1f64..10.0, n in 1usize..5, alpha in 0.0f64..3.0) {
                let g = CapGrid::new(n, 1.0, 32).unwrap();
                let phi = vec![r.ln(); 32];
                let f = compute_fields(&g, &WeightSpec::power_exact(alpha), &phi).unwrap();
                for j in 0..32 {
                    prop_assert_eq!(f.denom[j], n as f64);
                    prop_assert!((f.h[j] - n as f64 / r).abs() <= 1e-13 * n as f64 / r);
                }
                let area = hypersurface_area(&g, &phi).unwrap();
                prop_assert!((area - r.powi(n as i32) * g.base_area()).abs() <= 1e-12 * area);
            }

            #[test]
            fn graph_identities(a in -0.1f64..0.1, b in -0.05f64..0.05, j in 16usize..128) {
                let tm = PI / 3.0;
                let g = CapGrid::new(2, tm, j).unwrap();
                let phi = g.sample(|t| a * (PI * t / tm).cos() + b * (2.0 * PI * t / tm).cos());
                let f = compute_fields(&g, &WeightSpec::power_exact(1.0), &phi).unwrap();
                for k in 0..j {
                    prop_assert!((f.h[k] * f.u[k] * f.v[k] - f.denom[k]).abs() <= 1e-12);
                }
            }
        }
    }
}
