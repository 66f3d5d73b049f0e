//! Runtime checks of the a priori estimates over a recorded trajectory.
//!
//! Every check is two-sided: an observed quantity against a lower and upper
//! bound, failing when the worst excursion exceeds the tolerance. Bounds are
//! built only from the initial snapshot, the weight's declared constants and
//! realized sandwich constants; the checked quantities are recomputed from the
//! stored profiles.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{min_max, FlowError, RunStatus, SnapshotView, Trajectory};
use crate::grid::CapGrid;
use crate::scaling::{self, Horizon, ScalingError, ScalingSolution};
use crate::weight::{WeightError, WeightSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonitorError {
    #[error("psi identity needs an interior snapshot, got index {idx} of {len}")]
    NotInterior { idx: usize, len: usize },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Scaling(#[from] ScalingError),
    #[error(transparent)]
    Weight(#[from] WeightError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    C0,
    Gradient,
    GradientRescaled,
    Phidot,
    HTheta,
    AreaIdentity,
    AreaSandwich,
    PsiIdentity,
    Omega,
    RInf,
}

impl CheckName {
    pub const ALL: [CheckName; 10] = [
        CheckName::C0,
        CheckName::Gradient,
        CheckName::GradientRescaled,
        CheckName::Phidot,
        CheckName::HTheta,
        CheckName::AreaIdentity,
        CheckName::AreaSandwich,
        CheckName::PsiIdentity,
        CheckName::Omega,
        CheckName::RInf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckName::C0 => "c0",
            CheckName::Gradient => "gradient",
            CheckName::GradientRescaled => "gradient_rescaled",
            CheckName::Phidot => "phidot",
            CheckName::HTheta => "h_theta",
            CheckName::AreaIdentity => "area_identity",
            CheckName::AreaSandwich => "area_sandwich",
            CheckName::PsiIdentity => "psi_identity",
            CheckName::Omega => "omega",
            CheckName::RInf => "r_inf",
        }
    }
}

impl std::fmt::Display for CheckName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    /// Absolute, on `phi` against the comparison solutions.
    pub c0_tol: f64,
    /// Absolute, on `sup |D phi|`; `dtheta^2` is added on top.
    pub gradient_tol: f64,
    pub phidot_tol: f64,
    pub h_theta_tol: f64,
    /// Relative discrepancy between `P'` and the area integral.
    pub area_rel_tol: f64,
    /// Absolute, on the rescaled area.
    pub area_sandwich_tol: f64,
    /// Residual of the `Psi` evolution relative to the size of its terms.
    pub psi_rel_tol: f64,
    pub omega_tol: f64,
    pub r_inf_tol: f64,
    /// Checks that abort the run as soon as they fail.
    pub fatal: Vec<CheckName>,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            c0_tol: 1e-6,
            gradient_tol: 1e-8,
            phidot_tol: 1e-6,
            h_theta_tol: 1e-6,
            area_rel_tol: 1e-3,
            area_sandwich_tol: 1e-6,
            psi_rel_tol: 1e-2,
            omega_tol: 1e-6,
            r_inf_tol: 1e-3,
            fatal: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: CheckName,
    /// Bounds at the worst location (they may vary with time).
    pub lower: f64,
    pub upper: f64,
    pub observed_min: f64,
    pub observed_max: f64,
    /// Largest excursion outside `[lower, upper]`; negative when strictly inside.
    pub worst_violation: f64,
    /// `(snapshot, node)` of the worst excursion.
    pub worst_at: Option<(usize, usize)>,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

/// Accumulates the worst excursion of a quantity outside moving bounds.
struct Tracker {
    name: CheckName,
    tolerance: f64,
    lower: f64,
    upper: f64,
    observed: (f64, f64),
    worst: f64,
    at: Option<(usize, usize)>,
}

impl Tracker {
    fn new(name: CheckName, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            lower: f64::NAN,
            upper: f64::NAN,
            observed: (f64::INFINITY, f64::NEG_INFINITY),
            worst: f64::NEG_INFINITY,
            at: None,
        }
    }

    fn push(&mut self, value: f64, lower: f64, upper: f64, at: (usize, usize)) {
        self.observed = (self.observed.0.min(value), self.observed.1.max(value));
        let excursion = (lower - value).max(value - upper);
        let excursion = if excursion.is_nan() { f64::INFINITY } else { excursion };
        if self.at.is_none() || excursion > self.worst {
            self.worst = excursion;
            self.lower = lower;
            self.upper = upper;
            self.at = Some(at);
        }
    }

    fn finish(self, note: Option<String>) -> BoundCheck {
        let pass = self.worst <= self.tolerance || self.at.is_none();
        BoundCheck {
            name: self.name,
            lower: self.lower,
            upper: self.upper,
            observed_min: self.observed.0,
            observed_max: self.observed.1,
            worst_violation: if self.at.is_none() { 0.0 } else { self.worst },
            worst_at: self.at,
            tolerance: self.tolerance,
            pass,
            note,
        }
    }
}

/// Constants realized on a run, as they enter the estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealizedConstants {
    /// `inf phi_0`, `sup phi_0`
    pub phi1: f64,
    pub phi2: f64,
    /// `min u~`, `max u~` over the run
    pub c7: f64,
    pub c8: f64,
    pub c9: f64,
    pub c10: f64,
    pub c12: f64,
    /// Endpoints of the speed interval as stated (with `c1 / (n c2)`).
    pub m_lower: f64,
    pub m_upper: f64,
    /// Realized extremes of `M = phi_t f(Theta)`.
    pub m_min: f64,
    pub m_max: f64,
    /// `sup |D phi(., 0)|` and the matching `sqrt(1 + g0^2)`.
    pub g0: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiResidual {
    pub idx: usize,
    pub t: f64,
    /// Max-norm of `lhs - rhs`.
    pub max_abs: f64,
    /// Max-norm of `|lhs| + sum |rhs terms|`.
    pub scale: f64,
    pub relative: f64,
    /// Residual with the reaction term exactly as printed (no `1 / v^2`).
    pub printed_max_abs: f64,
    /// As printed, and with the raw fixed-node time difference on the left.
    pub fixed_node_max_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub checks: Vec<BoundCheck>,
    pub constants: RealizedConstants,
    pub r_inf_estimate: f64,
    pub r_inf_bounds: (f64, f64),
    /// `r_inf` measured against `Theta(t, phi1)` and `Theta(t, phi2)`.
    pub r_inf_c_extremes: (f64, f64),
    pub r_inf_c_sensitive: bool,
    pub psi: Option<PsiResidual>,
    pub omega_range: (f64, f64),
    pub pass: bool,
}

impl MonitorReport {
    pub fn check(&self, name: CheckName) -> Option<&BoundCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> Vec<CheckName> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name).collect()
    }
}

/// Per-snapshot derived data shared by all checks.
pub struct Analysis<'a> {
    pub traj: &'a Trajectory,
    pub views: Vec<SnapshotView>,
    pub sol_lo: ScalingSolution,
    pub sol_hi: ScalingSolution,
}

impl<'a> Analysis<'a> {
    pub fn new(traj: &'a Trajectory) -> Result<Self, MonitorError> {
        let views = (0..traj.snapshots.len()).map(|i| traj.view(i)).collect::<Result<Vec<_>, _>>()?;
        let (sol_lo, sol_hi) = comparison_solutions(traj)?;
        Ok(Self { traj, views, sol_lo, sol_hi })
    }
}

/// Comparison solutions started from `inf phi_0` and `sup phi_0`.
pub fn comparison_solutions(traj: &Trajectory) -> Result<(ScalingSolution, ScalingSolution), MonitorError> {
    let (phi1, phi2) = min_max(&traj.initial().phi);
    let horizon = Horizon::Time(traj.last().t.max(traj.scaling.t_max()));
    let rtol = 1e-11;
    let n = traj.grid.n();
    Ok((
        scaling::solve_scaling(&traj.weight, phi1, n, horizon, rtol)?,
        scaling::solve_scaling(&traj.weight, phi2, n, horizon, rtol)?,
    ))
}

fn sup_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `[min(inf M0, c1/(n c2)), max(sup M0, c1/(n c2))]`; the constant weight
/// has no reaction term, so the interval is `[inf M0, sup M0]`.
pub fn speed_interval(w: &WeightSpec, n: usize, m0: &[f64]) -> (f64, f64) {
    let (lo, hi) = min_max(m0);
    if w.is_constant() {
        return (lo, hi);
    }
    let k = w.constants().c1 / (n as f64 * w.constants().c2);
    (lo.min(k), hi.max(k))
}

/// `phi_bar(t, phi1) <= phi <= phi_bar(t, phi2)` at every snapshot and node.
pub fn check_c0(traj: &Trajectory, sol_lo: &ScalingSolution, sol_hi: &ScalingSolution, tol: f64) -> Result<BoundCheck, MonitorError> {
    let mut tr = Tracker::new(CheckName::C0, tol);
    for (k, snap) in traj.snapshots.iter().enumerate() {
        let lo = sol_lo.phibar_at(snap.t)?;
        let hi = sol_hi.phibar_at(snap.t)?;
        for (j, &p) in snap.phi.iter().enumerate() {
            tr.push(p, lo, hi, (k, j));
        }
    }
    Ok(tr.finish(None))
}

/// `sup |D phi(t)| <= sup |D phi(0)|`, and non-increase between consecutive
/// outputs, both with slack `tol + dtheta^2`.
pub fn check_gradient(views: &[SnapshotView], grid: &CapGrid, tol: f64) -> BoundCheck {
    let slack = tol + grid.dtheta() * grid.dtheta();
    let mut tr = Tracker::new(CheckName::Gradient, slack);
    let g0 = sup_abs(&views[0].fields.phi_theta);
    let mut prev = g0;
    for (k, view) in views.iter().enumerate() {
        let g = sup_abs(&view.fields.phi_theta);
        let node = view.fields.phi_theta.iter().position(|p| p.abs() == g).unwrap_or(0);
        tr.push(g, 0.0, prev.min(g0), (k, node));
        prev = g;
    }
    tr.finish(None)
}

/// `|D u~(s)| <= c12 sup |D u~(0)|` with `c12 = c8 / c7`, slack `tol + dtheta^2`.
pub fn check_gradient_rescaled(views: &[SnapshotView], grid: &CapGrid, c12: f64, tol: f64) -> BoundCheck {
    let mut tr = Tracker::new(CheckName::GradientRescaled, tol + grid.dtheta() * grid.dtheta());
    let du = |v: &SnapshotView| -> Vec<f64> {
        v.u_tilde.iter().zip(&v.fields.phi_theta).map(|(u, p)| (u * p).abs()).collect()
    };
    let bound = c12 * sup_abs(&du(&views[0]));
    for (k, view) in views.iter().enumerate() {
        for (j, d) in du(view).into_iter().enumerate() {
            tr.push(d, 0.0, bound, (k, j));
        }
    }
    tr.finish(None)
}

/// `M = phi_t f(Theta)` against the stated speed interval.
pub fn check_phidot(views: &[SnapshotView], interval: (f64, f64), tol: f64) -> BoundCheck {
    let mut tr = Tracker::new(CheckName::Phidot, tol);
    for (k, view) in views.iter().enumerate() {
        for (j, &m) in view.m.iter().enumerate() {
            tr.push(m, interval.0, interval.1, (k, j));
        }
    }
    tr.finish(None)
}

/// `c9 <= H Theta <= c10` and `H Theta > 0`.
pub fn check_h_theta(views: &[SnapshotView], w: &WeightSpec, consts: &RealizedConstants, tol: f64) -> BoundCheck {
    let mut tr = Tracker::new(CheckName::HTheta, tol);
    for (k, view) in views.iter().enumerate() {
        for (j, &ht) in view.h_theta.iter().enumerate() {
            tr.push(ht, consts.c9.max(0.0), consts.c10, (k, j));
            if !(ht > 0.0) {
                tr.push(ht, f64::INFINITY, f64::INFINITY, (k, j));
            }
        }
    }
    let c = w.constants();
    let note = (!w.is_constant() && (consts.c7 < c.c3 || consts.c8 > c.c4)).then(|| {
        format!(
            "realized u~ range [{}, {}] leaves the declared window [{}, {}]; c5/c6 do not apply",
            consts.c7, consts.c8, c.c3, c.c4
        )
    });
    let mut check = tr.finish(note.clone());
    if note.is_some() {
        check.pass = false;
    }
    check
}

/// Nonuniform three-point derivative at the middle of `(t0, t1, t2)`.
fn centered_derivative(t: [f64; 3], f: [f64; 3]) -> f64 {
    let (h1, h2) = (t[1] - t[0], t[2] - t[1]);
    -h2 / (h1 * (h1 + h2)) * f[0] + (h2 - h1) / (h1 * h2) * f[1] + h1 / (h2 * (h1 + h2)) * f[2]
}

fn area_integrand(grid: &CapGrid, w: &WeightSpec, view: &SnapshotView) -> Result<f64, MonitorError> {
    let n = grid.n() as i32;
    let f = &view.fields;
    let inv_f: Vec<f64> = f.u.iter().map(|&u| w.eval(u).map(|x| 1.0 / x)).collect::<Result<_, _>>()?;
    Ok(grid.integrate(|j| f.u[j].powi(n) * f.v[j] * inv_f[j]))
}

/// Centered-difference `P'` against `int f^{-1}(u) dH^n` at interior outputs.
pub fn check_area_identity(traj: &Trajectory, views: &[SnapshotView], rel_tol: f64) -> Result<BoundCheck, MonitorError> {
    let mut tr = Tracker::new(CheckName::AreaIdentity, rel_tol);
    let series = &traj.series;
    for k in 1..series.len().saturating_sub(1) {
        let t = [series[k - 1].t, series[k].t, series[k + 1].t];
        let p = [series[k - 1].area, series[k].area, series[k + 1].area];
        let dp = centered_derivative(t, p);
        let integral = area_integrand(&traj.grid, &traj.weight, &views[k])?;
        tr.push((dp - integral).abs() / integral.abs(), 0.0, 0.0, (k, 0));
    }
    let note = (series.len() < 3).then(|| "fewer than three outputs; nothing to compare".to_string());
    Ok(tr.finish(note))
}

/// `H^n(M0) e^{-n phi2} <= P(t) / Theta^n <= H^n(M0) e^{-n phi1}`.
pub fn check_area_sandwich(traj: &Trajectory, phi1: f64, phi2: f64, tol: f64) -> BoundCheck {
    let mut tr = Tracker::new(CheckName::AreaSandwich, tol);
    let n = traj.grid.n() as f64;
    let p0 = traj.series[0].area;
    let (lo, hi) = (p0 * (-n * phi2).exp(), p0 * (-n * phi1).exp());
    for (k, row) in traj.series.iter().enumerate() {
        tr.push(row.area / row.theta.powf(n), lo, hi, (k, 0));
    }
    tr.finish(None)
}

/// Residual of the `Psi` evolution at an interior snapshot.
///
/// The evolution is written along normal trajectories, so the fixed-node time
/// difference is corrected by the tangential transport `<grad Psi, T>`, where
/// `<X_theta, T> = u_theta u_t`. Along those trajectories `u_t = Phi w / u`,
/// which puts a factor `1 / v^2` on the `-f' (u / f) Psi^2` reaction term; the
/// primary residual uses that factor and `printed_max_abs` omits it.
pub fn check_psi_identity(traj: &Trajectory, idx: usize) -> Result<PsiResidual, MonitorError> {
    let len = traj.snapshots.len();
    if idx == 0 || idx + 1 >= len {
        return Err(MonitorError::NotInterior { idx, len });
    }
    let grid = &traj.grid;
    let w = &traj.weight;
    let views: Vec<SnapshotView> = (idx - 1..=idx + 1).map(|i| traj.view(i)).collect::<Result<_, _>>()?;
    let times = [traj.snapshots[idx - 1].t, traj.snapshots[idx].t, traj.snapshots[idx + 1].t];
    let mid = &views[1];
    let f = &mid.fields;
    let phi = &traj.snapshots[idx].phi;
    let n = grid.n() as f64;
    let cells = grid.cells();

    let mut k = vec![0.0; cells];
    let mut g_inv = vec![0.0; cells];
    let mut fu = vec![0.0; cells];
    let mut dfu = vec![0.0; cells];
    for j in 0..cells {
        fu[j] = w.eval(f.u[j])?;
        dfu[j] = w.derivative(f.u[j])?;
        g_inv[j] = (-2.0 * phi[j]).exp() / (f.v[j] * f.v[j]);
        // g^{theta theta} f^{-1} H^{-2}
        k[j] = g_inv[j] / (fu[j] * f.h[j] * f.h[j]);
    }
    let psi = &f.psi;
    let psi_t = grid.d1(psi).map_err(FlowError::from)?;
    let psi_tt = grid.d2(psi).map_err(FlowError::from)?;
    let k_t = grid.d1(&k).map_err(FlowError::from)?;
    let v_t = grid.d1(&f.v).map_err(FlowError::from)?;

    let mut res = PsiResidual {
        idx,
        t: times[1],
        max_abs: 0.0,
        scale: 0.0,
        relative: 0.0,
        printed_max_abs: 0.0,
        fixed_node_max_abs: 0.0,
    };
    for j in 0..cells {
        let u = f.u[j];
        let u_th = u * f.phi_theta[j];
        let log_density_t = n * f.phi_theta[j] + v_t[j] / f.v[j] + (n - 1.0) * grid.cot()[j];
        let div = k[j] * psi_tt[j] + (k_t[j] + k[j] * log_density_t) * psi_t[j];
        let grad_sq = g_inv[j] * psi_t[j] * psi_t[j];
        let h2 = f.h[j] * f.h[j];
        let reaction = -dfu[j] * u / fu[j] * psi[j] * psi[j];
        let terms = [
            div,
            -2.0 / (h2 * fu[j] * psi[j]) * grad_sq,
            reaction / (f.v[j] * f.v[j]),
            -dfu[j] / fu[j] * psi[j] * psi[j] * g_inv[j] * u_th * u * u_th,
            -dfu[j] / (fu[j] * fu[j] * h2) * g_inv[j] * u_th * psi_t[j],
        ];
        let rhs: f64 = terms.iter().sum();
        let printed = rhs - terms[2] + reaction;
        let fixed = centered_derivative(times, [views[0].fields.psi[j], psi[j], views[2].fields.psi[j]]);
        let transport = g_inv[j] * psi_t[j] * u_th * (u * mid.phidot[j]);
        let lhs = fixed - transport;
        res.max_abs = res.max_abs.max((lhs - rhs).abs());
        res.printed_max_abs = res.printed_max_abs.max((lhs - printed).abs());
        res.fixed_node_max_abs = res.fixed_node_max_abs.max((fixed - printed).abs());
        res.scale = res.scale.max(lhs.abs() + terms.iter().map(|x| x.abs()).sum::<f64>());
    }
    res.relative = if res.scale > 0.0 { res.max_abs / res.scale } else { res.max_abs };
    Ok(res)
}

/// Derives sandwich constants and the curvature bounds from a full analysis.
pub fn realized_constants(a: &Analysis) -> RealizedConstants {
    let traj = a.traj;
    let (phi1, phi2) = min_max(&traj.initial().phi);
    let (mut c7, mut c8) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut m_min, mut m_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for view in &a.views {
        let (lo, hi) = min_max(&view.u_tilde);
        c7 = c7.min(lo);
        c8 = c8.max(hi);
        let (lo, hi) = min_max(&view.m);
        m_min = m_min.min(lo);
        m_max = m_max.max(hi);
    }
    let (m_lower, m_upper) = speed_interval(&traj.weight, traj.grid.n(), &a.views[0].m);
    let g0 = sup_abs(&a.views[0].fields.phi_theta);
    let v_max = (1.0 + g0 * g0).sqrt();
    let c = traj.weight.constants();
    let (c5, c6) = if traj.weight.is_constant() { (1.0, 1.0) } else { (c.c5, c.c6) };
    RealizedConstants {
        phi1,
        phi2,
        c7,
        c8,
        c9: 1.0 / (c8 * c6 * m_upper),
        c10: v_max / (c7 * c5 * m_lower),
        c12: c8 / c7,
        m_lower,
        m_upper,
        m_min,
        m_max,
        g0,
        v_max,
    }
}

/// `Omega = Psi f(Theta)` inside `[1/(c8 c10 c6), v_max/(c7 c9 c5)]`.
pub fn check_omega(views: &[SnapshotView], w: &WeightSpec, consts: &RealizedConstants, tol: f64) -> BoundCheck {
    let c = w.constants();
    let (c5, c6) = if w.is_constant() { (1.0, 1.0) } else { (c.c5, c.c6) };
    let lo = 1.0 / (consts.c8 * consts.c10 * c6);
    let hi = consts.v_max / (consts.c7 * consts.c9 * c5);
    let mut tr = Tracker::new(CheckName::Omega, tol);
    for (k, view) in views.iter().enumerate() {
        for (j, &om) in view.omega.iter().enumerate() {
            tr.push(om, lo, hi, (k, j));
        }
    }
    tr.finish(None)
}

/// `(1/sup u0, 1/inf u0) * (H^n(M0) / H^n(M))^{1/n}`
pub fn r_inf_bounds(traj: &Trajectory) -> (f64, f64) {
    let (phi1, phi2) = min_max(&traj.initial().phi);
    let n = traj.grid.n() as f64;
    let ratio = (traj.series[0].area / traj.grid.base_area()).powf(1.0 / n);
    ((-phi2).exp() * ratio, (-phi1).exp() * ratio)
}

/// Runs every check and assembles the report.
pub fn convergence_report(traj: &Trajectory, cfg: &MonitorConfig) -> Result<MonitorReport, MonitorError> {
    let a = Analysis::new(traj)?;
    let consts = realized_constants(&a);
    let views = &a.views;
    let mut checks = vec![
        check_c0(traj, &a.sol_lo, &a.sol_hi, cfg.c0_tol)?,
        check_gradient(views, &traj.grid, cfg.gradient_tol),
        check_gradient_rescaled(views, &traj.grid, consts.c12, cfg.gradient_tol),
        check_phidot(views, (consts.m_lower, consts.m_upper), cfg.phidot_tol),
        check_h_theta(views, &traj.weight, &consts, cfg.h_theta_tol),
        check_area_identity(traj, views, cfg.area_rel_tol)?,
        check_area_sandwich(traj, consts.phi1, consts.phi2, cfg.area_sandwich_tol),
    ];

    let len = traj.snapshots.len();
    let psi = if len >= 3 { Some(check_psi_identity(traj, len / 2)?) } else { None };
    checks.push(match psi {
        Some(p) => BoundCheck {
            name: CheckName::PsiIdentity,
            lower: 0.0,
            upper: 0.0,
            observed_min: p.relative,
            observed_max: p.relative,
            worst_violation: p.relative,
            worst_at: Some((p.idx, 0)),
            tolerance: cfg.psi_rel_tol,
            pass: p.relative <= cfg.psi_rel_tol,
            note: None,
        },
        None => Tracker::new(CheckName::PsiIdentity, cfg.psi_rel_tol)
            .finish(Some("fewer than three outputs; nothing to compare".into())),
    });
    checks.push(check_omega(views, &traj.weight, &consts, cfg.omega_tol));

    let last = views.last().expect("non-empty trajectory");
    let r_inf_estimate = last.u_tilde.iter().sum::<f64>() / last.u_tilde.len() as f64;
    let bounds = r_inf_bounds(traj);
    let t_last = traj.last().t;
    let mean_u = last.fields.u.iter().sum::<f64>() / last.fields.u.len() as f64;
    let r_c = (mean_u / a.sol_lo.theta_at(t_last)?, mean_u / a.sol_hi.theta_at(t_last)?);
    let r_inf_c_sensitive = (r_c.0 - r_c.1).abs() > cfg.r_inf_tol;

    let mut tr = Tracker::new(CheckName::RInf, cfg.r_inf_tol);
    let note = if traj.status == RunStatus::Converged {
        tr.push(r_inf_estimate, bounds.0, bounds.1, (len - 1, 0));
        None
    } else {
        Some(format!("run ended with status {:?}; limit not reached", traj.status))
    };
    let mut r_check = tr.finish(note);
    (r_check.lower, r_check.upper) = bounds;
    checks.push(r_check);

    let omega_range = views.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, v| {
        let (lo, hi) = min_max(&v.omega);
        (acc.0.min(lo), acc.1.max(hi))
    });
    let pass = checks.iter().all(|c| c.pass);
    Ok(MonitorReport {
        checks,
        constants: consts,
        r_inf_estimate,
        r_inf_bounds: bounds,
        r_inf_c_extremes: r_c,
        r_inf_c_sensitive,
        psi,
        omega_range,
        pass,
    })
}

/// Checks selected as fatal, evaluated on each new output during a run.
pub struct OnlineMonitor {
    cfg: MonitorConfig,
    state: Option<OnlineState>,
}

struct OnlineState {
    sol_lo: ScalingSolution,
    sol_hi: ScalingSolution,
    interval: (f64, f64),
    g0: f64,
    prev_grad: f64,
    phi: (f64, f64),
}

impl OnlineMonitor {
    pub fn new(cfg: MonitorConfig) -> Self {
        Self { cfg, state: None }
    }

    pub fn is_active(&self) -> bool {
        !self.cfg.fatal.is_empty()
    }

    /// Returns a reason to abort, if a fatal check fails on the newest output.
    pub fn observe(&mut self, traj: &Trajectory) -> Option<String> {
        if !self.is_active() {
            return None;
        }
        match self.observe_inner(traj) {
            Ok(reason) => reason,
            Err(e) => Some(format!("monitor evaluation failed: {e}")),
        }
    }

    fn observe_inner(&mut self, traj: &Trajectory) -> Result<Option<String>, MonitorError> {
        let k = traj.snapshots.len() - 1;
        let view = traj.view(k)?;
        if self.state.is_none() {
            let (sol_lo, sol_hi) = comparison_solutions(traj)?;
            let g0 = sup_abs(&view.fields.phi_theta);
            self.state = Some(OnlineState {
                sol_lo,
                sol_hi,
                interval: speed_interval(&traj.weight, traj.grid.n(), &view.m),
                g0,
                prev_grad: g0,
                phi: min_max(&traj.initial().phi),
            });
        }
        let st = self.state.as_mut().expect("initialized above");
        let cfg = &self.cfg;
        let snap = traj.last();
        let row = traj.series.last().expect("aligned with snapshots");
        for &name in &cfg.fatal {
            let failure = match name {
                CheckName::C0 => {
                    let (lo, hi) = (st.sol_lo.phibar_at(snap.t)?, st.sol_hi.phibar_at(snap.t)?);
                    let (a, b) = min_max(&snap.phi);
                    (lo - a).max(b - hi) > cfg.c0_tol
                }
                CheckName::Gradient => {
                    let slack = cfg.gradient_tol + traj.grid.dtheta().powi(2);
                    let g = row.sup_grad;
                    let bad = g > st.g0.min(st.prev_grad) + slack;
                    st.prev_grad = g;
                    bad
                }
                CheckName::Phidot => {
                    row.min_m < st.interval.0 - cfg.phidot_tol || row.max_m > st.interval.1 + cfg.phidot_tol
                }
                CheckName::AreaSandwich => {
                    let n = traj.grid.n() as f64;
                    let p0 = traj.series[0].area;
                    let scaled = row.area / row.theta.powf(n);
                    scaled < p0 * (-n * st.phi.1).exp() - cfg.area_sandwich_tol
                        || scaled > p0 * (-n * st.phi.0).exp() + cfg.area_sandwich_tol
                }
                CheckName::HTheta => !(row.min_h_theta > 0.0),
                // the remaining checks need the whole run
                _ => false,
            };
            if failure {
                return Ok(Some(format!("fatal monitor {name} failed at t = {}", snap.t)));
            }
        }
        Ok(None)
    }
}
