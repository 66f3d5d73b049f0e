//! Cell-centred discretisation of the geodesic cap `{theta <= theta_max}` of `S^n`.
//!
//! Fields are axisymmetric, sampled at `theta_j = (j + 1/2) dtheta`. Both ends use
//! mirror ghosts (`field[-1] = field[0]`, `field[J] = field[J-1]`): at `theta_max`
//! this is the homogeneous Neumann condition, at the pole it is axial regularity.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("dimension n must be >= 1, got {0}")]
    Dimension(usize),
    #[error("theta_max = {0} outside (0, pi/2]; the cone would not be convex")]
    NotConvex(f64),
    #[error("need at least 8 cells, got {0}")]
    TooFewCells(usize),
    #[error("field has {got} entries, grid has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
}

/// Slack when comparing a user-supplied `theta_max` against `pi/2`.
const HEMISPHERE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapGrid {
    n: usize,
    theta_max: f64,
    cells: usize,
    dtheta: f64,
    omega: f64,
    nodes: Vec<f64>,
    #[serde(skip)]
    cot: Vec<f64>,
    #[serde(skip)]
    sin_pow: Vec<f64>,
}

/// `|S^{k}|` for `k >= 1`, i.e. `2 pi^{(k+1)/2} / Gamma((k+1)/2)`.
fn sphere_measure(k: usize) -> f64 {
    // Gamma at half-integers/integers by recurrence from Gamma(1/2) or Gamma(1)
    let half = (k + 1) as f64 / 2.0;
    let mut gamma = if (k + 1) % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut x = if (k + 1) % 2 == 0 { 1.0 } else { 0.5 };
    while x < half - 1e-9 {
        gamma *= x;
        x += 1.0;
    }
    2.0 * PI.powf(half) / gamma
}

impl CapGrid {
    pub fn new(n: usize, theta_max: f64, cells: usize) -> Result<Self, GridError> {
        if n < 1 {
            return Err(GridError::Dimension(n));
        }
        if !(theta_max > 0.0 && theta_max <= FRAC_PI_2 + HEMISPHERE_SLACK) {
            return Err(GridError::NotConvex(theta_max));
        }
        if cells < 8 {
            return Err(GridError::TooFewCells(cells));
        }
        let theta_max = theta_max.min(FRAC_PI_2);
        if theta_max == FRAC_PI_2 {
            log::warn!("theta_max = pi/2: the cone boundary is only weakly convex");
        }
        let dtheta = theta_max / cells as f64;
        let nodes: Vec<f64> = (0..cells).map(|j| (j as f64 + 0.5) * dtheta).collect();
        let cot = nodes.iter().map(|t| t.cos() / t.sin()).collect();
        let sin_pow = nodes.iter().map(|t| t.sin().powi(n as i32 - 1)).collect();
        let omega = if n == 1 { 1.0 } else { sphere_measure(n - 1) };
        Ok(Self { n, theta_max, cells, dtheta, omega, nodes, cot, sin_pow })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_max
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn dtheta(&self) -> f64 {
        self.dtheta
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// `cot(theta_j)`
    pub fn cot(&self) -> &[f64] {
        &self.cot
    }

    /// `sin^{n-1}(theta_j)`
    pub fn sin_pow(&self) -> &[f64] {
        &self.sin_pow
    }

    pub fn is_weakly_convex(&self) -> bool {
        self.theta_max == FRAC_PI_2
    }

    fn check_len(&self, len: usize) -> Result<(), GridError> {
        if len != self.cells {
            return Err(GridError::LengthMismatch { expected: self.cells, got: len });
        }
        Ok(())
    }

    /// Centred first derivative with mirror ghosts, written into `out`.
    pub fn d1_into(&self, field: &[f64], out: &mut [f64]) {
        let j_last = self.cells - 1;
        let inv = 0.5 / self.dtheta;
        out[0] = (field[1] - field[0]) * inv;
        for j in 1..j_last {
            out[j] = (field[j + 1] - field[j - 1]) * inv;
        }
        out[j_last] = (field[j_last] - field[j_last - 1]) * inv;
    }

    /// Three-point second derivative with mirror ghosts, written into `out`.
    pub fn d2_into(&self, field: &[f64], out: &mut [f64]) {
        let j_last = self.cells - 1;
        let inv = 1.0 / (self.dtheta * self.dtheta);
        out[0] = (field[1] - field[0]) * inv;
        for j in 1..j_last {
            out[j] = (field[j + 1] - 2.0 * field[j] + field[j - 1]) * inv;
        }
        out[j_last] = (field[j_last - 1] - field[j_last]) * inv;
    }

    pub fn d1(&self, field: &[f64]) -> Result<Vec<f64>, GridError> {
        self.check_len(field.len())?;
        let mut out = vec![0.0; self.cells];
        self.d1_into(field, &mut out);
        Ok(out)
    }

    pub fn d2(&self, field: &[f64]) -> Result<Vec<f64>, GridError> {
        self.check_len(field.len())?;
        let mut out = vec![0.0; self.cells];
        self.d2_into(field, &mut out);
        Ok(out)
    }

    /// Midpoint-rule integral of `density(j) * sin^{n-1}(theta_j)` times `omega`.
    pub fn integrate<F: Fn(usize) -> f64>(&self, density: F) -> f64 {
        let sum: f64 = (0..self.cells).map(|j| density(j) * self.sin_pow[j]).sum();
        self.omega * sum * self.dtheta
    }

    /// Measure of the spherical base `M^n`.
    pub fn base_area(&self) -> f64 {
        self.integrate(|_| 1.0)
    }

    /// Evaluates `profile(theta)` at every node.
    pub fn sample<F: Fn(f64) -> f64>(&self, profile: F) -> Vec<f64> {
        self.nodes.iter().map(|&t| profile(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spacing_and_first_node() {
        let g = CapGrid::new(2, PI / 3.0, 128).unwrap();
        assert!((g.dtheta() - PI / 384.0).abs() < 1e-16);
        assert!((g.nodes()[0] - PI / 768.0).abs() < 1e-16);
        assert!(g.nodes()[127] < g.theta_max());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert_eq!(CapGrid::new(2, 2.0, 64), Err(GridError::NotConvex(2.0)));
        assert!(matches!(CapGrid::new(2, 0.5, 4), Err(GridError::TooFewCells(4))));
        assert!(matches!(CapGrid::new(0, 0.5, 16), Err(GridError::Dimension(0))));
        assert!(CapGrid::new(2, FRAC_PI_2, 16).unwrap().is_weakly_convex());
    }

    #[test]
    fn omega_closed_forms() {
        assert_eq!(CapGrid::new(1, PI / 4.0, 8).unwrap().omega(), 1.0);
        assert!((CapGrid::new(2, 1.0, 8).unwrap().omega() - 2.0 * PI).abs() < 1e-14);
        assert!((CapGrid::new(3, 1.0, 8).unwrap().omega() - 4.0 * PI).abs() < 1e-13);
        // |S^3| = 2 pi^2
        assert!((CapGrid::new(4, 1.0, 8).unwrap().omega() - 2.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn base_area_examples() {
        let cap = CapGrid::new(2, PI / 3.0, 128).unwrap().base_area();
        assert!((cap - PI).abs() < 1e-4);
        let hemi = CapGrid::new(2, FRAC_PI_2, 256).unwrap().base_area();
        assert!((hemi - 2.0 * PI).abs() < 1e-4);
        let s3 = CapGrid::new(3, FRAC_PI_2, 256).unwrap().base_area();
        assert!((s3 - PI * PI).abs() < 1e-4);
    }

    #[test]
    fn base_area_second_order() {
        let exact = PI;
        let errs: Vec<f64> = [32, 64, 128]
            .iter()
            .map(|&j| (CapGrid::new(2, PI / 3.0, j).unwrap().base_area() - exact).abs())
            .collect();
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.9, "{errs:?}");
        }
    }

    #[test]
    fn derivative_of_cosine_converges_at_second_order() {
        let tm = PI / 3.0;
        let k = PI / tm;
        let err = |j: usize, second: bool| {
            let g = CapGrid::new(2, tm, j).unwrap();
            let f = g.sample(|t| (k * t).cos());
            let d = if second { g.d2(&f).unwrap() } else { g.d1(&f).unwrap() };
            g.nodes()
                .iter()
                .zip(&d)
                .map(|(&t, &dv)| {
                    let exact = if second { -k * k * (k * t).cos() } else { -k * (k * t).sin() };
                    (dv - exact).abs()
                })
                .fold(0.0, f64::max)
        };
        for second in [false, true] {
            let ratio = err(64, second) / err(128, second);
            assert!((3.6..4.4).contains(&ratio), "second={second} ratio={ratio}");
        }
    }

    #[test]
    fn quadratic_interior_derivative() {
        let g = CapGrid::new(2, 1.0, 64).unwrap();
        let f = g.sample(|t| t * t);
        let d = g.d1(&f).unwrap();
        // even about the pole, so the mirror stencil is exact at node 0 too
        for j in 0..63 {
            assert!((d[j] - 2.0 * g.nodes()[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_field_second_derivative() {
        let g = CapGrid::new(2, 1.0, 32).unwrap();
        let f = g.sample(|t| 1.0 + 3.0 * t);
        let d = g.d2(&f).unwrap();
        for &v in &d[1..31] {
            assert!(v.abs() < 1e-9);
        }
        assert!(d[0] > 1.0 && d[31] < -1.0);
    }

    #[test]
    fn length_mismatch() {
        let g = CapGrid::new(2, 1.0, 16).unwrap();
        assert_eq!(g.d1(&[0.0; 3]), Err(GridError::LengthMismatch { expected: 16, got: 3 }));
    }

    proptest! {
        #[test]
        fn constant_has_zero_derivatives(c in -10.0f64..10.0, j in 8usize..200) {
            let g = CapGrid::new(3, 1.2, j).unwrap();
            let f = vec![c; j];
            prop_assert!(g.d1(&f).unwrap().iter().all(|v| *v == 0.0));
            prop_assert!(g.d2(&f).unwrap().iter().all(|v| *v == 0.0));
        }

        #[test]
        fn mirror_even_fields_have_small_end_slopes(a in -1.0f64..1.0, j in 16usize..256) {
            // cos(pi theta / theta_max) is even about both ends
            let g = CapGrid::new(2, 1.0, j).unwrap();
            let f = g.sample(|t| a * (PI * t).cos());
            let d = g.d1(&f).unwrap();
            let bound = a.abs() * PI * PI * g.dtheta();
            prop_assert!(d[0].abs() <= bound && d[j - 1].abs() <= bound);
        }
    }
}
