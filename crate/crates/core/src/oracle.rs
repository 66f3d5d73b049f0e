//! Brute-force references kept independent of the main solver path.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::CapGrid;
use crate::weight::{WeightError, WeightKind, WeightSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("embedding oracle supports n = 2 only, got n = {0}")]
    Dimension(usize),
    #[error("non-finite oracle value at theta = {theta}")]
    NonFinite { theta: f64 },
    #[error("invalid oracle input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Weight(#[from] WeightError),
}

/// Radius at time `t` of the round sphere that starts at `r0`.
///
/// Power weights use the closed form; other weights integrate
/// `(ln u)' = 1 / (n f(u))` by step-doubling RK4 at relative tolerance 1e-12.
pub fn sphere_solution(w: &WeightSpec, r0: f64, n: usize, t: f64) -> Result<f64, OracleError> {
    if !(r0 > 0.0) || !(t >= 0.0) || n == 0 {
        return Err(OracleError::Invalid(format!("r0 = {r0}, t = {t}, n = {n}")));
    }
    let nf = n as f64;
    if let WeightKind::Power { alpha } = *w.kind() {
        return Ok(if alpha == 0.0 {
            r0 * (t / nf).exp()
        } else {
            (r0.powf(alpha) + alpha * t / nf).powf(1.0 / alpha)
        });
    }
    let rhs = |y: f64| -> Result<f64, OracleError> { Ok(1.0 / (nf * w.eval(y.exp())?)) };
    let rk4 = |y: f64, h: f64| -> Result<f64, OracleError> {
        let k1 = rhs(y)?;
        let k2 = rhs(y + 0.5 * h * k1)?;
        let k3 = rhs(y + 0.5 * h * k2)?;
        let k4 = rhs(y + h * k3)?;
        Ok(y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
    };
    let (mut time, mut y) = (0.0, r0.ln());
    let mut h = (t / 64.0).max(1e-6);
    while time < t {
        h = h.min(t - time);
        let full = rk4(y, h)?;
        let half = rk4(rk4(y, 0.5 * h)?, 0.5 * h)?;
        let err = (half - full).abs() / 15.0;
        let tol = 1e-12 * half.abs().max(1.0);
        if err <= tol {
            time += h;
            y = half + (half - full) / 15.0;
        }
        h *= (0.9 * (tol / err.max(1e-300)).powf(0.2)).clamp(0.2, 4.0);
        if h < 1e-14 * t.max(1.0) {
            return Err(OracleError::Invalid("sphere oracle step size underflow".into()));
        }
    }
    Ok(y.exp())
}

/// Cosine series through cell-centred samples (a DCT-II interpolant).
///
/// Exact for fields spanned by `cos(k pi theta / theta_max)`, `k < J`, and
/// spectrally accurate for smooth fields that are even about both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineSeries {
    theta_max: f64,
    coeffs: Vec<f64>,
}

impl CosineSeries {
    pub fn from_cells(theta_max: f64, values: &[f64]) -> Self {
        let m = values.len();
        let coeffs = (0..m)
            .map(|k| {
                let s: f64 = values
                    .iter()
                    .enumerate()
                    .map(|(j, v)| v * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / m as f64).cos())
                    .sum();
                if k == 0 { s / m as f64 } else { 2.0 * s / m as f64 }
            })
            .collect();
        Self { theta_max, coeffs }
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let x = std::f64::consts::PI * theta / self.theta_max;
        let c1 = x.cos();
        let (mut prev, mut cur) = (1.0, c1);
        let mut sum = self.coeffs[0];
        for &a in &self.coeffs[1..] {
            sum += a * cur;
            let next = 2.0 * c1 * cur - prev;
            prev = cur;
            cur = next;
        }
        sum
    }
}

fn embed(profile: &dyn Fn(f64) -> f64, theta: f64, psi: f64) -> [f64; 3] {
    let u = profile(theta).exp();
    let s = theta.sin();
    [u * s * psi.cos(), u * s * psi.sin(), u * theta.cos()]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn comb(terms: &[(f64, [f64; 3])]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (c, x) in terms {
        for i in 0..3 {
            out[i] += c * x[i];
        }
    }
    out
}

/// Mean curvature of the surface of revolution `X = e^{profile(theta)} x`
/// from finite-difference fundamental forms with stencil step `h`.
pub fn embedding_mean_curvature_profile(
    profile: &dyn Fn(f64) -> f64,
    thetas: &[f64],
    h: f64,
) -> Result<Vec<f64>, OracleError> {
    let psi0 = 0.3;
    thetas
        .iter()
        .map(|&th| {
            let x = |a: f64, b: f64| embed(profile, th + a * h, psi0 + b * h);
            let c = x(0.0, 0.0);
            let (tp, tm, pp, pm) = (x(1.0, 0.0), x(-1.0, 0.0), x(0.0, 1.0), x(0.0, -1.0));
            let inv2h = 0.5 / h;
            let inv_h2 = 1.0 / (h * h);
            let xt = comb(&[(inv2h, tp), (-inv2h, tm)]);
            let xp = comb(&[(inv2h, pp), (-inv2h, pm)]);
            let xtt = comb(&[(inv_h2, tp), (-2.0 * inv_h2, c), (inv_h2, tm)]);
            let xpp = comb(&[(inv_h2, pp), (-2.0 * inv_h2, c), (inv_h2, pm)]);
            let q = 0.25 * inv_h2;
            let xtp = comb(&[(q, x(1.0, 1.0)), (-q, x(1.0, -1.0)), (-q, x(-1.0, 1.0)), (q, x(-1.0, -1.0))]);
            let (e, f, g) = (dot(xt, xt), dot(xt, xp), dot(xp, xp));
            let cross = [
                xt[1] * xp[2] - xt[2] * xp[1],
                xt[2] * xp[0] - xt[0] * xp[2],
                xt[0] * xp[1] - xt[1] * xp[0],
            ];
            let norm = dot(cross, cross).sqrt();
            let sign = if dot(cross, c) >= 0.0 { 1.0 } else { -1.0 };
            let nu = cross.map(|v| sign * v / norm);
            let (l, m, nn) = (dot(xtt, nu), dot(xtp, nu), dot(xpp, nu));
            let det = e * g - f * f;
            // H = -g^{ij} <X_ij, nu> with the outward normal
            let hm = -(g * l - 2.0 * f * m + e * nn) / det;
            if hm.is_finite() { Ok(hm) } else { Err(OracleError::NonFinite { theta: th }) }
        })
        .collect()
}

/// Embedding-based mean curvature at the nodes of an `n = 2` grid.
///
/// The nodal log-radius is extended by its cosine series and the surface is
/// differenced with step `theta_max / max(1024, 8 J)`.
pub fn embedding_mean_curvature(grid: &CapGrid, phi: &[f64]) -> Result<Vec<f64>, OracleError> {
    if grid.n() != 2 {
        return Err(OracleError::Dimension(grid.n()));
    }
    if phi.len() != grid.cells() || phi.iter().any(|p| !p.is_finite()) {
        return Err(OracleError::Invalid("phi must be finite with one value per node".into()));
    }
    let series = CosineSeries::from_cells(grid.theta_max(), phi);
    let h = grid.theta_max() / (1024usize.max(8 * grid.cells())) as f64;
    embedding_mean_curvature_profile(&|t| series.eval(t), grid.nodes(), h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderEstimate {
    /// Errors at `J`, `2J`, `4J`.
    pub errors: [f64; 3],
    /// `log2(e0 / e1)`, `log2(e1 / e2)`
    pub orders: [f64; 2],
    pub window: (f64, f64),
    pub pass: bool,
}

impl OrderEstimate {
    pub fn diagnostic(&self) -> Option<String> {
        if self.errors.iter().any(|e| !(*e > 0.0)) {
            return Some(format!("errors must be positive: {:?}", self.errors));
        }
        if !(self.errors[0] > self.errors[1] && self.errors[1] > self.errors[2]) {
            return Some(format!("errors are not decreasing: {:?}; not in the asymptotic range", self.errors));
        }
        (!self.pass).then(|| format!("observed orders {:?} outside {:?}", self.orders, self.window))
    }
}

pub const DEFAULT_ORDER_WINDOW: (f64, f64) = (1.7, 2.3);

pub fn convergence_order(errors: [f64; 3], window: (f64, f64)) -> OrderEstimate {
    let orders = [(errors[0] / errors[1]).log2(), (errors[1] / errors[2]).log2()];
    let decreasing = errors.iter().all(|e| *e > 0.0) && errors[0] > errors[1] && errors[1] > errors[2];
    let pass = decreasing && orders.iter().all(|p| (window.0..=window.1).contains(p));
    OrderEstimate { errors, orders, window, pass }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RichardsonEstimate {
    /// Max-norm differences `|u_J - u_2J|`, `|u_2J - u_4J|`.
    pub differences: [f64; 2],
    pub order: f64,
    pub window: (f64, f64),
    pub pass: bool,
}

/// Richardson order from solutions at `J`, `2J`, `4J` cells: differences of
/// successive levels are compared at the coarse nodes in the max norm, with
/// finer levels evaluated through their cosine series.
pub fn richardson_order(
    theta_max: f64,
    coarse: &[f64],
    medium: &[f64],
    fine: &[f64],
    window: (f64, f64),
) -> Result<RichardsonEstimate, OracleError> {
    let j = coarse.len();
    if medium.len() != 2 * j || fine.len() != 4 * j {
        return Err(OracleError::Invalid("levels must have J, 2J and 4J cells".into()));
    }
    let dtheta = theta_max / j as f64;
    let nodes: Vec<f64> = (0..j).map(|i| (i as f64 + 0.5) * dtheta).collect();
    let med = CosineSeries::from_cells(theta_max, medium);
    let fin = CosineSeries::from_cells(theta_max, fine);
    let mut d01: f64 = 0.0;
    let mut d12: f64 = 0.0;
    for (i, &t) in nodes.iter().enumerate() {
        let (a, b, c) = (coarse[i], med.eval(t), fin.eval(t));
        d01 = d01.max((a - b).abs());
        d12 = d12.max((b - c).abs());
    }
    let p = (d01 / d12).log2();
    let pass = d01 > d12 && d12 > 0.0 && (window.0..=window.1).contains(&p);
    Ok(RichardsonEstimate { differences: [d01, d12], order: p, window, pass })
}
