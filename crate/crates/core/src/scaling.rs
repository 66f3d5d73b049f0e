//! Spatially homogeneous comparison solutions and the rescaling time map.
//!
//! `phibar_c` solves `dphibar/dt = 1 / (n f(e^phibar))`, `phibar(0) = c`, and
//! `Theta(t, c) = e^{phibar_c(t)}` is the radius of the comparison sphere.
//! The rescaled time is `s(t) = int_0^t dt' / f(Theta(t'))`, i.e. `dt/ds = f(Theta)`.

use serde::Serialize;
use thiserror::Error;

use crate::weight::{WeightError, WeightSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScalingError {
    #[error("f(e^phibar) = {value} is not positive at t = {t}")]
    Degenerate { t: f64, value: f64 },
    #[error("{what} = {value} outside solved range [{lo}, {hi}]")]
    OutOfRange { what: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("invalid scaling request: {0}")]
    Invalid(String),
    #[error("step size underflow at t = {0}")]
    StepUnderflow(f64),
    #[error(transparent)]
    Weight(#[from] WeightError),
}

/// How far to integrate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    /// Up to physical time `t`.
    Time(f64),
    /// Until the rescaled time reaches `s`.
    Rescaled(f64),
    /// Whichever of the two comes first.
    Earliest { t: f64, s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingSolution {
    pub c: f64,
    pub n: usize,
    pub t_knots: Vec<f64>,
    pub phibar_knots: Vec<f64>,
    pub s_knots: Vec<f64>,
    #[serde(skip)]
    dphibar: Vec<f64>,
    #[serde(skip)]
    ds: Vec<f64>,
    #[serde(skip)]
    ddphibar: Vec<f64>,
    #[serde(skip)]
    dds: Vec<f64>,
}

/// Value, first and second derivative at a knot.
#[derive(Clone, Copy)]
struct Jet {
    y: f64,
    d: f64,
    dd: f64,
}

// Dormand–Prince 5(4) tableau
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

const MAX_STEPS: usize = 2_000_000;

struct Rhs<'a> {
    w: &'a WeightSpec,
    n: f64,
}

impl Rhs<'_> {
    /// Returns `(dphibar/dt, ds/dt)`.
    fn eval(&self, t: f64, phibar: f64) -> Result<(f64, f64), ScalingError> {
        let f = self.w.eval(phibar.exp())?;
        if !(f > 0.0) || !f.is_finite() {
            return Err(ScalingError::Degenerate { t, value: f });
        }
        Ok((1.0 / (self.n * f), 1.0 / f))
    }

    /// Second derivatives `(phibar'', s'')` along the solution:
    /// both equal `-(Theta f'/f) phibar'` times the first derivative.
    fn second(&self, phibar: f64, dphibar: f64, ds: f64) -> Result<(f64, f64), ScalingError> {
        let r = self.w.dlog_ratio(phibar.exp())?.value;
        Ok((-r * dphibar * dphibar, -r * dphibar * ds))
    }
}

/// Integrates the comparison ODE from `phibar(0) = c` to `t_max`.
pub fn solve_scaling_ode(
    w: &WeightSpec,
    c: f64,
    n: usize,
    t_max: f64,
    rtol: f64,
) -> Result<ScalingSolution, ScalingError> {
    solve_scaling(w, c, n, Horizon::Time(t_max), rtol)
}

pub fn solve_scaling(
    w: &WeightSpec,
    c: f64,
    n: usize,
    horizon: Horizon,
    rtol: f64,
) -> Result<ScalingSolution, ScalingError> {
    if !(rtol > 1e-14 && rtol < 1e-3) {
        return Err(ScalingError::Invalid(format!("rtol = {rtol} outside (1e-14, 1e-3)")));
    }
    if !c.is_finite() || n == 0 {
        return Err(ScalingError::Invalid(format!("need finite c and n >= 1 (c = {c}, n = {n})")));
    }
    let (t_end, s_end) = match horizon {
        Horizon::Time(t) => (t, f64::INFINITY),
        Horizon::Rescaled(s) => (f64::INFINITY, s),
        Horizon::Earliest { t, s } => (t, s),
    };
    if !(t_end > 0.0) || !(s_end > 0.0) {
        return Err(ScalingError::Invalid("horizon must be positive".into()));
    }
    let rhs = Rhs { w, n: n as f64 };
    let atol = rtol;

    let (dp0, ds0) = rhs.eval(0.0, c)?;
    let (ddp0, dds0) = rhs.second(c, dp0, ds0)?;
    let mut sol = ScalingSolution {
        c,
        n,
        t_knots: vec![0.0],
        phibar_knots: vec![c],
        s_knots: vec![0.0],
        dphibar: vec![dp0],
        ds: vec![ds0],
        ddphibar: vec![ddp0],
        dds: vec![dds0],
    };
    let (mut t, mut y) = (0.0, [c, 0.0]);
    let mut k0 = [dp0, ds0];
    // initial step from the local time scale of phibar
    let mut h = (rtol.powf(0.2) / dp0.abs().max(1e-300)).min(t_end).min(s_end / ds0);
    let mut steps = 0;
    while t < t_end && y[1] < s_end {
        steps += 1;
        if steps > MAX_STEPS {
            return Err(ScalingError::StepUnderflow(t));
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        let mut k = [[0.0; 2]; 7];
        k[0] = k0;
        for stage in 1..7 {
            let mut ys = y;
            for (i, ki) in k.iter().enumerate().take(stage) {
                ys[0] += h * A[stage][i] * ki[0];
                ys[1] += h * A[stage][i] * ki[1];
            }
            let (a, b) = rhs.eval(t + C[stage] * h, ys[0])?;
            k[stage] = [a, b];
        }
        let mut y5 = y;
        let mut err = 0.0f64;
        for comp in 0..2 {
            let mut e = 0.0;
            for stage in 0..7 {
                y5[comp] += h * B5[stage] * k[stage][comp];
                e += h * (B5[stage] - B4[stage]) * k[stage][comp];
            }
            let scale = atol + rtol * y[comp].abs().max(y5[comp].abs());
            err = err.max((e / scale).abs());
        }
        if err <= 1.0 {
            t = if last { t_end } else { t + h };
            y = y5;
            k0 = k[6];
            sol.t_knots.push(t);
            sol.phibar_knots.push(y[0]);
            sol.s_knots.push(y[1]);
            sol.dphibar.push(k0[0]);
            sol.ds.push(k0[1]);
            let (a, b) = rhs.second(y[0], k0[0], k0[1])?;
            sol.ddphibar.push(a);
            sol.dds.push(b);
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h < 1e-14 * t.max(1.0) {
            return Err(ScalingError::StepUnderflow(t));
        }
    }
    Ok(sol)
}

/// Quintic Hermite interpolant on `[t0, t1]` and its first derivative.
fn hermite5(t0: f64, t1: f64, a: Jet, b: Jet, t: f64) -> (f64, f64) {
    let h = t1 - t0;
    let x = (t - t0) / h;
    let (x2, x3) = (x * x, x * x * x);
    let (x4, x5) = (x3 * x, x3 * x2);
    let h00 = 1.0 - 10.0 * x3 + 15.0 * x4 - 6.0 * x5;
    let h10 = x - 6.0 * x3 + 8.0 * x4 - 3.0 * x5;
    let h20 = 0.5 * (x2 - 3.0 * x3 + 3.0 * x4 - x5);
    let h01 = 10.0 * x3 - 15.0 * x4 + 6.0 * x5;
    let h11 = -4.0 * x3 + 7.0 * x4 - 3.0 * x5;
    let h21 = 0.5 * (x3 - 2.0 * x4 + x5);
    let value = h00 * a.y + h * h10 * a.d + h * h * h20 * a.dd + h01 * b.y + h * h11 * b.d + h * h * h21 * b.dd;
    let d00 = -30.0 * x2 + 60.0 * x3 - 30.0 * x4;
    let d10 = 1.0 - 18.0 * x2 + 32.0 * x3 - 15.0 * x4;
    let d20 = 0.5 * (2.0 * x - 9.0 * x2 + 12.0 * x3 - 5.0 * x4);
    let d11 = -12.0 * x2 + 28.0 * x3 - 15.0 * x4;
    let d21 = 0.5 * (3.0 * x2 - 8.0 * x3 + 5.0 * x4);
    let slope = (d00 * a.y - d00 * b.y) / h + d10 * a.d + h * d20 * a.dd + d11 * b.d + h * d21 * b.dd;
    (value, slope)
}

impl ScalingSolution {
    pub fn t_max(&self) -> f64 {
        *self.t_knots.last().expect("non-empty knots")
    }

    pub fn s_max(&self) -> f64 {
        *self.s_knots.last().expect("non-empty knots")
    }

    fn interval(&self, knots: &[f64], x: f64, what: &'static str) -> Result<usize, ScalingError> {
        let (lo, hi) = (knots[0], knots[knots.len() - 1]);
        let slack = 1e-12 * hi.abs().max(1.0);
        if !(x >= lo - slack && x <= hi + slack) {
            return Err(ScalingError::OutOfRange { what, value: x, lo, hi });
        }
        if knots.len() == 1 {
            return Ok(0);
        }
        let i = knots.partition_point(|&k| k <= x);
        Ok(i.saturating_sub(1).min(knots.len() - 2))
    }

    fn phibar_jet(&self, i: usize, t: f64) -> (f64, f64) {
        let a = Jet { y: self.phibar_knots[i], d: self.dphibar[i], dd: self.ddphibar[i] };
        let b = Jet { y: self.phibar_knots[i + 1], d: self.dphibar[i + 1], dd: self.ddphibar[i + 1] };
        hermite5(self.t_knots[i], self.t_knots[i + 1], a, b, t)
    }

    fn s_jet(&self, i: usize, t: f64) -> (f64, f64) {
        let a = Jet { y: self.s_knots[i], d: self.ds[i], dd: self.dds[i] };
        let b = Jet { y: self.s_knots[i + 1], d: self.ds[i + 1], dd: self.dds[i + 1] };
        hermite5(self.t_knots[i], self.t_knots[i + 1], a, b, t)
    }

    /// Dense-output `phibar_c(t)`.
    pub fn phibar_at(&self, t: f64) -> Result<f64, ScalingError> {
        let i = self.interval(&self.t_knots, t, "t")?;
        if self.t_knots.len() == 1 {
            return Ok(self.phibar_knots[0]);
        }
        Ok(self.phibar_jet(i, t).0)
    }

    /// `Theta(t, c) = e^{phibar_c(t)}`.
    pub fn theta_at(&self, t: f64) -> Result<f64, ScalingError> {
        Ok(self.phibar_at(t)?.exp())
    }

    pub fn s_of_t(&self, t: f64) -> Result<f64, ScalingError> {
        let i = self.interval(&self.t_knots, t, "t")?;
        if self.t_knots.len() == 1 {
            return Ok(0.0);
        }
        Ok(self.s_jet(i, t).0)
    }

    /// Inverse of [`Self::s_of_t`] by safeguarded Newton on the dense output.
    pub fn t_of_s(&self, s: f64) -> Result<f64, ScalingError> {
        let i = self.interval(&self.s_knots, s, "s")?;
        if self.t_knots.len() == 1 {
            return Ok(0.0);
        }
        let (mut lo, mut hi) = (self.t_knots[i], self.t_knots[i + 1]);
        let (s_lo, s_hi) = (self.s_knots[i], self.s_knots[i + 1]);
        let mut t = lo + (hi - lo) * ((s - s_lo) / (s_hi - s_lo)).clamp(0.0, 1.0);
        for _ in 0..100 {
            let (value, slope) = self.s_jet(i, t);
            let r = value - s;
            if r.abs() <= 4.0 * f64::EPSILON * s.abs().max(1e-300) {
                break;
            }
            if r > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let newton = t - r / slope;
            t = if slope > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo <= 2.0 * f64::EPSILON * hi.abs() {
                break;
            }
        }
        Ok(t)
    }
}
