//! Method-of-lines integration of the scalar Neumann problem
//! `phi_t = Q(phi) = v^2 / (f(e^phi) D)` on the cap, in physical time.
//!
//! Time stepping is classical RK4 with a parabolic step bound
//! `dt = cfl dtheta^2 min_j f(e^phi_j) D_j^2`. The rescaled profile
//! `u~ = e^phi / Theta(t, c)` is recovered from the scaling ODE.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, denominator, GeometryError, GeometryFields};
use crate::grid::{CapGrid, GridError};
use crate::scaling::{self, Horizon, ScalingError, ScalingSolution};
use crate::weight::{MonotoneCubic, WeightError, WeightSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("operator denominator {min_denom:e} <= floor {floor:e} at node {node}")]
    Singularity { min_denom: f64, node: usize, floor: f64 },
    #[error("initial profile is not strictly mean convex: denominator {denom:e} at node {node} (theta = {theta})")]
    NotMeanConvex { node: usize, theta: f64, denom: f64 },
    #[error("non-finite value after step at t = {t}")]
    NonFinite { t: f64 },
    #[error("invalid flow configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Scaling(#[from] ScalingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialProfile {
    Constant { r0: f64 },
    /// `phi0 = ln r0 + eps cos(pi theta / theta_max)`
    Cosine { r0: f64, eps: f64 },
    /// Radius samples `r(theta)`, interpolated onto the nodes.
    Tabulated { theta: Vec<f64>, r: Vec<f64> },
}

/// Samples the initial log-radius and checks it is admissible.
pub fn initial_profile(grid: &CapGrid, spec: &InitialProfile) -> Result<Vec<f64>, FlowError> {
    let phi = match spec {
        InitialProfile::Constant { r0 } | InitialProfile::Cosine { r0, .. } if !(*r0 > 0.0) || !r0.is_finite() => {
            return Err(FlowError::Config(format!("r0 must be positive, got {r0}")));
        }
        InitialProfile::Constant { r0 } => vec![r0.ln(); grid.cells()],
        InitialProfile::Cosine { r0, eps } => {
            let k = std::f64::consts::PI / grid.theta_max();
            grid.sample(|t| r0.ln() + eps * (k * t).cos())
        }
        InitialProfile::Tabulated { theta, r } => {
            if r.iter().any(|x| !(*x > 0.0)) {
                return Err(FlowError::Config("tabulated radii must be positive".into()));
            }
            let table = MonotoneCubic::new(theta.clone(), r.clone())
                .map_err(|e| FlowError::Config(format!("tabulated profile: {e}")))?;
            let mut out = Vec::with_capacity(grid.cells());
            for &t in grid.nodes() {
                let value = table.value(t).map_err(|e| FlowError::Config(format!("tabulated profile: {e}")))?;
                out.push(value.ln());
            }
            let (xs, _) = table.knots();
            let end_slopes = [table.derivative(xs[0]).unwrap_or(0.0), table.derivative(grid.theta_max().min(xs[xs.len() - 1])).unwrap_or(0.0)];
            if end_slopes.iter().any(|s| s.abs() > 1e-8) {
                log::warn!("tabulated profile is not Neumann compatible (end slopes {end_slopes:?})");
            }
            out
        }
    };
    geometry::check_finite(&phi)?;
    let p1 = grid.d1(&phi)?;
    let p2 = grid.d2(&phi)?;
    let n = grid.n() as f64;
    for j in 0..grid.cells() {
        let denom = denominator(n, grid.cot()[j], p1[j], p2[j]);
        if !(denom > 0.0) {
            return Err(FlowError::NotMeanConvex { node: j, theta: grid.nodes()[j], denom });
        }
    }
    Ok(phi)
}

/// Right-hand side `Q`, step bound and RK4 step on a fixed grid and weight.
#[derive(Debug, Clone)]
pub struct FlowOperator {
    grid: CapGrid,
    weight: WeightSpec,
    denom_floor: f64,
    p1: Vec<f64>,
    p2: Vec<f64>,
}

impl FlowOperator {
    pub fn new(grid: CapGrid, weight: WeightSpec, denom_floor: f64) -> Self {
        let cells = grid.cells();
        Self { grid, weight, denom_floor, p1: vec![0.0; cells], p2: vec![0.0; cells] }
    }

    pub fn grid(&self) -> &CapGrid {
        &self.grid
    }

    pub fn weight(&self) -> &WeightSpec {
        &self.weight
    }

    /// Evaluates `Q(phi)` into `out`; fails if `D <= denom_floor` anywhere.
    pub fn q_into(&mut self, phi: &[f64], out: &mut [f64]) -> Result<(), FlowError> {
        self.grid.d1_into(phi, &mut self.p1);
        self.grid.d2_into(phi, &mut self.p2);
        let n = self.grid.n() as f64;
        let cot = self.grid.cot();
        let mut worst = (f64::INFINITY, 0);
        for j in 0..phi.len() {
            let (a, b) = (self.p1[j], self.p2[j]);
            let denom = denominator(n, cot[j], a, b);
            if !(denom > self.denom_floor) {
                if !(denom >= worst.0) {
                    worst = (denom, j);
                }
                continue;
            }
            let f = self.weight.eval(phi[j].exp())?;
            out[j] = (1.0 + a * a) / (f * denom);
        }
        if worst.0.is_finite() || worst.0.is_nan() {
            return Err(FlowError::Singularity { min_denom: worst.0, node: worst.1, floor: self.denom_floor });
        }
        Ok(())
    }

    pub fn q_operator(&mut self, phi: &[f64]) -> Result<Vec<f64>, FlowError> {
        self.grid.d1(phi)?;
        let mut out = vec![0.0; phi.len()];
        self.q_into(phi, &mut out)?;
        Ok(out)
    }

    /// `cfl dtheta^2 / max_j [1 / (f(e^phi_j) D_j^2)]`.
    pub fn stable_dt(&mut self, phi: &[f64], cfl: f64) -> Result<f64, FlowError> {
        self.grid.d1_into(phi, &mut self.p1);
        self.grid.d2_into(phi, &mut self.p2);
        let n = self.grid.n() as f64;
        let cot = self.grid.cot();
        let mut min_fd2 = f64::INFINITY;
        for j in 0..phi.len() {
            let denom = denominator(n, cot[j], self.p1[j], self.p2[j]);
            if !(denom > self.denom_floor) {
                return Err(FlowError::Singularity { min_denom: denom, node: j, floor: self.denom_floor });
            }
            let f = self.weight.eval(phi[j].exp())?;
            min_fd2 = min_fd2.min(f * denom * denom);
        }
        let h = self.grid.dtheta();
        Ok(cfl * h * h * min_fd2)
    }

    /// One classical RK4 step of size `dt`.
    pub fn step(&mut self, state: &FlowState, dt: f64) -> Result<FlowState, FlowError> {
        let len = state.phi.len();
        let mut next = state.clone();
        next.step_count += 1;
        next.last_dt = dt;
        if dt == 0.0 {
            return Ok(next);
        }
        let mut k = vec![0.0; len];
        let mut stage = vec![0.0; len];
        let mut acc = vec![0.0; len];
        self.q_into(&state.phi, &mut k)?;
        for (weight, frac) in [(1.0, 0.5), (2.0, 0.5), (2.0, 1.0)] {
            for j in 0..len {
                acc[j] += weight * k[j];
                stage[j] = state.phi[j] + frac * dt * k[j];
            }
            self.q_into(&stage, &mut k)?;
        }
        for j in 0..len {
            next.phi[j] = state.phi[j] + dt / 6.0 * (acc[j] + k[j]);
        }
        if next.phi.iter().any(|p| !p.is_finite()) {
            return Err(FlowError::NonFinite { t: state.t + dt });
        }
        next.t = state.t + dt;
        Ok(next)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub t: f64,
    /// Rescaled time `s(t)`; filled in when the state is recorded.
    pub s: f64,
    pub phi: Vec<f64>,
    pub step_count: u64,
    pub last_dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescaleChoice {
    Midpoint,
    Inf,
    Sup,
    #[serde(untagged)]
    Value(f64),
}

impl RescaleChoice {
    pub fn resolve(self, phi0: &[f64]) -> f64 {
        let (lo, hi) = min_max(phi0);
        match self {
            RescaleChoice::Midpoint => 0.5 * (lo + hi),
            RescaleChoice::Inf => lo,
            RescaleChoice::Sup => hi,
            RescaleChoice::Value(c) => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputCadence {
    /// Record every `ds` of rescaled time.
    Rescaled(f64),
    /// Record every `dt` of physical time.
    Physical(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub n: usize,
    pub theta_max: f64,
    pub cells: usize,
    pub weight: WeightSpec,
    pub initial: InitialProfile,
    pub cfl: f64,
    pub t_max: Option<f64>,
    pub s_max: Option<f64>,
    pub denom_floor: f64,
    /// Stop once `osc(u~) < conv_tol`; zero disables the test.
    pub conv_tol: f64,
    pub rescale: RescaleChoice,
    pub cadence: OutputCadence,
    pub scaling_rtol: f64,
    pub max_steps: u64,
}

impl FlowConfig {
    /// Defaults for everything but grid, weight, profile and horizon.
    pub fn new(n: usize, theta_max: f64, cells: usize, weight: WeightSpec, initial: InitialProfile) -> Self {
        Self {
            n,
            theta_max,
            cells,
            weight,
            initial,
            cfl: 0.25,
            t_max: None,
            s_max: None,
            denom_floor: 1e-6,
            conv_tol: 1e-6,
            rescale: RescaleChoice::Midpoint,
            cadence: OutputCadence::Rescaled(0.05),
            scaling_rtol: 1e-11,
            max_steps: 200_000_000,
        }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(FlowError::Config(format!("cfl must lie in (0, 1], got {}", self.cfl)));
        }
        match (self.t_max, self.s_max) {
            (None, None) => return Err(FlowError::Config("one of t_max / s_max is required".into())),
            (t, s) => {
                if t.is_some_and(|t| !(t > 0.0)) || s.is_some_and(|s| !(s > 0.0)) {
                    return Err(FlowError::Config("termination bounds must be positive".into()));
                }
            }
        }
        if !(self.denom_floor > 0.0) {
            return Err(FlowError::Config("denom_floor must be positive".into()));
        }
        if !(self.conv_tol >= 0.0) {
            return Err(FlowError::Config("conv_tol must be non-negative".into()));
        }
        match self.cadence {
            OutputCadence::Rescaled(x) | OutputCadence::Physical(x) if !(x > 0.0) => {
                Err(FlowError::Config("output cadence must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    fn horizon(&self) -> Horizon {
        match (self.t_max, self.s_max) {
            (Some(t), Some(s)) => Horizon::Earliest { t, s },
            (Some(t), None) => Horizon::Time(t),
            (None, Some(s)) => Horizon::Rescaled(s),
            (None, None) => unreachable!("validated"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    TMaxReached,
    Singularity,
    MonitorAbort,
}

/// Scalar diagnostics at one output time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t: f64,
    pub s: f64,
    #[serde(rename = "Theta")]
    pub theta: f64,
    #[serde(rename = "P")]
    pub area: f64,
    pub sup_grad: f64,
    pub min_denom: f64,
    #[serde(rename = "min_HTheta")]
    pub min_h_theta: f64,
    #[serde(rename = "max_HTheta")]
    pub max_h_theta: f64,
    #[serde(rename = "min_M")]
    pub min_m: f64,
    #[serde(rename = "max_M")]
    pub max_m: f64,
    pub osc_u_tilde: f64,
    pub star_ratio: f64,
    #[serde(rename = "min_Omega")]
    pub min_omega: f64,
    #[serde(rename = "max_Omega")]
    pub max_omega: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub steps: u64,
    pub min_dt: f64,
    pub max_dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: CapGrid,
    pub weight: WeightSpec,
    /// Rescaling constant `c` of `Theta(t, c)`.
    pub rescale_c: f64,
    pub scaling: ScalingSolution,
    pub snapshots: Vec<FlowState>,
    pub series: Vec<SeriesRow>,
    pub status: RunStatus,
    pub message: Option<String>,
    pub stats: SolverStats,
}

/// Everything the monitors need about one recorded state.
#[derive(Debug, Clone)]
pub struct SnapshotView {
    pub fields: GeometryFields,
    /// `phi_t = v^2 / (f D)` recomputed from the operator (no floor check).
    pub phidot: Vec<f64>,
    pub theta: f64,
    pub f_theta: f64,
    pub u_tilde: Vec<f64>,
    /// `M = phi_t f(Theta)`
    pub m: Vec<f64>,
    pub h_theta: Vec<f64>,
    /// `Omega = Psi f(Theta)`
    pub omega: Vec<f64>,
}

pub fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

impl SnapshotView {
    pub fn new(grid: &CapGrid, weight: &WeightSpec, theta: f64, phi: &[f64]) -> Result<Self, FlowError> {
        let fields = geometry::compute_fields(grid, weight, phi)?;
        let f_theta = weight.eval(theta)?;
        let len = phi.len();
        let mut view = SnapshotView {
            phidot: Vec::with_capacity(len),
            theta,
            f_theta,
            u_tilde: Vec::with_capacity(len),
            m: Vec::with_capacity(len),
            h_theta: Vec::with_capacity(len),
            omega: Vec::with_capacity(len),
            fields,
        };
        for j in 0..len {
            let f = &view.fields;
            let fu = weight.eval(f.u[j])?;
            let phidot = f.v[j] * f.v[j] / (fu * f.denom[j]);
            view.phidot.push(phidot);
            view.u_tilde.push(f.u[j] / theta);
            view.m.push(phidot * f_theta);
            view.h_theta.push(f.h[j] * theta);
            view.omega.push(f.psi[j] * f_theta);
        }
        Ok(view)
    }

    pub fn series_row(&self, grid: &CapGrid, t: f64, s: f64) -> SeriesRow {
        let f = &self.fields;
        let (ut_lo, ut_hi) = min_max(&self.u_tilde);
        let (m_lo, m_hi) = min_max(&self.m);
        let (ht_lo, ht_hi) = min_max(&self.h_theta);
        let (om_lo, om_hi) = min_max(&self.omega);
        let n = grid.n() as i32;
        let area = grid.integrate(|j| f.u[j].powi(n) * f.v[j]);
        SeriesRow {
            t,
            s,
            theta: self.theta,
            area,
            sup_grad: f.phi_theta.iter().fold(0.0, |m, p| m.max(p.abs())),
            min_denom: min_max(&f.denom).0,
            min_h_theta: ht_lo,
            max_h_theta: ht_hi,
            min_m: m_lo,
            max_m: m_hi,
            osc_u_tilde: ut_hi - ut_lo,
            star_ratio: geometry::star_shape_ratio(f),
            min_omega: om_lo,
            max_omega: om_hi,
        }
    }
}

impl Trajectory {
    pub fn view(&self, idx: usize) -> Result<SnapshotView, FlowError> {
        let snap = &self.snapshots[idx];
        let theta = self.scaling.theta_at(snap.t)?;
        SnapshotView::new(&self.grid, &self.weight, theta, &snap.phi)
    }

    pub fn initial(&self) -> &FlowState {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &FlowState {
        self.snapshots.last().expect("trajectory has an initial snapshot")
    }

    /// Overwrites the profile of snapshot `idx` and refreshes its series row.
    pub fn replace_phi(&mut self, idx: usize, phi: Vec<f64>) -> Result<(), FlowError> {
        if phi.len() != self.grid.cells() {
            return Err(FlowError::Config(format!(
                "profile has {} values, grid has {} cells",
                phi.len(),
                self.grid.cells()
            )));
        }
        self.snapshots[idx].phi = phi;
        let view = self.view(idx)?;
        let snap = &self.snapshots[idx];
        self.series[idx] = view.series_row(&self.grid, snap.t, snap.s);
        Ok(())
    }

    fn record(&mut self, mut state: FlowState) -> Result<(), FlowError> {
        state.s = self.scaling.s_of_t(state.t)?;
        let theta = self.scaling.theta_at(state.t)?;
        let view = SnapshotView::new(&self.grid, &self.weight, theta, &state.phi)?;
        self.series.push(view.series_row(&self.grid, state.t, state.s));
        self.snapshots.push(state);
        Ok(())
    }
}

/// Runs the flow to termination without online monitoring.
pub fn run(config: &FlowConfig) -> Result<Trajectory, FlowError> {
    run_observed(config, &mut |_| None)
}

/// Runs the flow; `observer` sees the trajectory after every recorded output
/// and may stop the run by returning a reason (status `MonitorAbort`).
pub fn run_observed(
    config: &FlowConfig,
    observer: &mut dyn FnMut(&Trajectory) -> Option<String>,
) -> Result<Trajectory, FlowError> {
    config.validate()?;
    let grid = CapGrid::new(config.n, config.theta_max, config.cells)?;
    let phi0 = initial_profile(&grid, &config.initial)?;
    let c = config.rescale.resolve(&phi0);
    let scaling = scaling::solve_scaling(&config.weight, c, config.n, config.horizon(), config.scaling_rtol)?;
    let t_end = match config.s_max {
        Some(s) if scaling.s_max() >= s => scaling.t_of_s(s)?.min(scaling.t_max()),
        _ => scaling.t_max(),
    };

    let mut op = FlowOperator::new(grid.clone(), config.weight.clone(), config.denom_floor);
    let mut traj = Trajectory {
        grid,
        weight: config.weight.clone(),
        rescale_c: c,
        scaling,
        snapshots: Vec::new(),
        series: Vec::new(),
        status: RunStatus::TMaxReached,
        message: None,
        stats: SolverStats { steps: 0, min_dt: f64::INFINITY, max_dt: 0.0 },
    };
    let mut state = FlowState { t: 0.0, s: 0.0, phi: phi0, step_count: 0, last_dt: 0.0 };
    traj.record(state.clone())?;
    if let Some(reason) = observer(&traj) {
        traj.status = RunStatus::MonitorAbort;
        traj.message = Some(reason);
        return Ok(traj);
    }

    let mut k = 1u64;
    while state.t < t_end {
        let t_out = match config.cadence {
            OutputCadence::Physical(dt) => k as f64 * dt,
            OutputCadence::Rescaled(ds) => {
                let s = k as f64 * ds;
                if s >= traj.scaling.s_max() { t_end } else { traj.scaling.t_of_s(s)? }
            }
        };
        // a cadence point within rounding of the end is the end
        let t_out = if t_out >= t_end * (1.0 - 1e-12) { t_end } else { t_out };
        k += 1;
        while state.t < t_out {
            let bound = match op.stable_dt(&state.phi, config.cfl) {
                Ok(dt) => dt,
                Err(FlowError::Singularity { min_denom, node, .. }) => {
                    return finish_singular(traj, state, min_denom, node);
                }
                Err(e) => return Err(e),
            };
            let remaining = t_out - state.t;
            let dt = if remaining <= bound * 1.000_001 { remaining } else { bound };
            match op.step(&state, dt) {
                Ok(mut next) => {
                    if dt == remaining {
                        next.t = t_out;
                    }
                    state = next;
                    traj.stats.steps += 1;
                    traj.stats.min_dt = traj.stats.min_dt.min(dt);
                    traj.stats.max_dt = traj.stats.max_dt.max(dt);
                }
                Err(FlowError::Singularity { min_denom, node, .. }) => {
                    return finish_singular(traj, state, min_denom, node);
                }
                Err(e) => return Err(e),
            }
            if traj.stats.steps >= config.max_steps {
                return Err(FlowError::Config(format!("exceeded max_steps = {}", config.max_steps)));
            }
        }
        traj.record(state.clone())?;
        if let Some(reason) = observer(&traj) {
            traj.status = RunStatus::MonitorAbort;
            traj.message = Some(reason);
            return Ok(traj);
        }
        if config.conv_tol > 0.0 && traj.series.last().is_some_and(|r| r.osc_u_tilde < config.conv_tol) {
            traj.status = RunStatus::Converged;
            return Ok(traj);
        }
    }
    Ok(traj)
}

fn finish_singular(mut traj: Trajectory, state: FlowState, min_denom: f64, node: usize) -> Result<Trajectory, FlowError> {
    let message = format!(
        "lost strict mean convexity at t = {}: denominator {min_denom:e} at node {node}",
        state.t
    );
    log::warn!("{message}");
    if traj.last().t < state.t {
        traj.record(state)?;
    }
    traj.status = RunStatus::Singularity;
    traj.message = Some(message);
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sphere_config(alpha: f64, t_max: f64) -> FlowConfig {
        let mut cfg = FlowConfig::new(2, PI / 3.0, 64, WeightSpec::power_exact(alpha), InitialProfile::Constant { r0: 1.0 });
        cfg.t_max = Some(t_max);
        cfg.conv_tol = 0.0;
        cfg.cadence = OutputCadence::Physical(t_max / 4.0);
        cfg
    }

    #[test]
    fn sphere_operator_is_exact() {
        let g = CapGrid::new(2, PI / 3.0, 32).unwrap();
        let mut op = FlowOperator::new(g, WeightSpec::power_exact(1.0), 1e-6);
        // f(u) = u, u = 2: phi_t = 1 / (n u) = 1/4
        let q = op.q_operator(&[2f64.ln(); 32]).unwrap();
        assert!(q.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn stable_dt_for_unit_sphere() {
        let g = CapGrid::new(2, PI / 3.0, 128).unwrap();
        let h = g.dtheta();
        let mut op = FlowOperator::new(g, WeightSpec::power_exact(0.0), 1e-6);
        let dt = op.stable_dt(&[0.0; 128], 0.25).unwrap();
        assert!((dt - 0.25 * h * h * 4.0).abs() < 1e-18);
        assert!((dt - 6.69e-5).abs() < 1e-7);
    }

    #[test]
    fn rk4_step_on_sphere() {
        let g = CapGrid::new(2, PI / 3.0, 16).unwrap();
        let mut op = FlowOperator::new(g, WeightSpec::power_exact(1.0), 1e-6);
        let state = FlowState { t: 0.0, s: 0.0, phi: vec![0.0; 16], step_count: 0, last_dt: 0.0 };
        let next = op.step(&state, 1e-3).unwrap();
        // exact: u = 1 + t / 2
        let exact = (1.0005f64).ln();
        assert!(next.phi.iter().all(|p| (p - exact).abs() < 1e-14));
        assert_eq!(next.step_count, 1);
        assert_eq!(next.t, 1e-3);
    }

    #[test]
    fn sphere_radius_follows_closed_form() {
        let traj = run(&sphere_config(1.0, 3.0)).unwrap();
        assert_eq!(traj.status, RunStatus::TMaxReached);
        assert_eq!(traj.last().t, 3.0);
        // alpha = 1, n = 2: u = 1 + t / 2
        let u = traj.last().phi[0].exp();
        assert!((u - 2.5).abs() < 1e-10, "{u}");
        assert_eq!(traj.snapshots.len(), 5);

        let traj = run(&sphere_config(0.0, 1.0)).unwrap();
        let u = traj.last().phi[10].exp();
        assert!((u - 0.5f64.exp()).abs() < 1e-10, "{u}");
        assert!(traj.series.iter().all(|r| r.osc_u_tilde < 1e-12));
    }

    #[test]
    fn sphere_series_is_scale_invariant() {
        let traj = run(&sphere_config(0.5, 2.0)).unwrap();
        for row in &traj.series {
            assert!((row.min_h_theta - 2.0).abs() < 1e-8, "{row:?}");
            assert!((row.max_m - 0.5).abs() < 1e-8);
            assert!((row.min_omega - row.min_m).abs() < 1e-12);
            assert_eq!(row.star_ratio, 1.0);
        }
    }

    #[test]
    fn cosine_converges_towards_sphere() {
        let mut cfg = FlowConfig::new(2, PI / 3.0, 48, WeightSpec::power_exact(1.0), InitialProfile::Cosine { r0: 1.0, eps: 0.05 });
        cfg.s_max = Some(20.0);
        cfg.conv_tol = 1e-4;
        cfg.cadence = OutputCadence::Rescaled(0.1);
        let traj = run(&cfg).unwrap();
        assert_eq!(traj.status, RunStatus::Converged);
        let osc: Vec<f64> = traj.series.iter().map(|r| r.osc_u_tilde).collect();
        assert!(osc.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)), "{osc:?}");
        assert!(traj.series.last().unwrap().s > 0.0);
    }

    #[test]
    fn rejects_non_mean_convex_profile() {
        let g = CapGrid::new(2, PI / 3.0, 128).unwrap();
        let err = initial_profile(&g, &InitialProfile::Cosine { r0: 1.0, eps: 5.0 }).unwrap_err();
        assert!(matches!(err, FlowError::NotMeanConvex { .. }), "{err}");
        assert!(initial_profile(&g, &InitialProfile::Constant { r0: -1.0 }).is_err());
    }

    #[test]
    fn observer_can_abort() {
        let mut seen = 0;
        let traj = run_observed(&sphere_config(1.0, 1.0), &mut |t| {
            seen += 1;
            (t.snapshots.len() == 2).then(|| "stop".to_string())
        })
        .unwrap();
        assert_eq!(seen, 2);
        assert_eq!(traj.status, RunStatus::MonitorAbort);
        assert_eq!(traj.message.as_deref(), Some("stop"));
    }

    #[test]
    fn tabulated_constant_matches_constant() {
        let g = CapGrid::new(2, 1.0, 32).unwrap();
        let tab = InitialProfile::Tabulated { theta: vec![0.0, 0.5, 1.0], r: vec![1.5, 1.5, 1.5] };
        assert_eq!(initial_profile(&g, &tab).unwrap(), vec![1.5f64.ln(); 32]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = sphere_config(1.0, 1.0);
        cfg.cfl = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = sphere_config(1.0, 1.0);
        cfg.t_max = None;
        assert!(run(&cfg).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(12))]

            #[test]
            fn admissible_profiles_expand(eps in -0.08f64..0.08, r0 in 0.5f64..2.0, alpha in 0.0f64..2.0) {
                let g = CapGrid::new(2, PI / 3.0, 48).unwrap();
                let phi = initial_profile(&g, &InitialProfile::Cosine { r0, eps }).unwrap();
                let mut op = FlowOperator::new(g, WeightSpec::power_exact(alpha), 1e-6);
                prop_assert!(op.q_operator(&phi).unwrap().iter().all(|q| *q > 0.0));
            }

            #[test]
            fn runs_stay_sandwiched_and_flatten(eps in -0.08f64..0.08, alpha in 0.0f64..2.0) {
                let mut cfg = FlowConfig::new(2, PI / 3.0, 32, WeightSpec::power_exact(alpha), InitialProfile::Cosine { r0: 1.0, eps });
                cfg.t_max = Some(0.5);
                cfg.conv_tol = 0.0;
                cfg.cadence = OutputCadence::Physical(0.05);
                let traj = run(&cfg).unwrap();
                prop_assert_eq!(traj.status, RunStatus::TMaxReached);
                let phi0 = &traj.snapshots[0].phi;
                let lo = phi0.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = phi0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sol_lo = scaling::solve_scaling_ode(&cfg.weight, lo, 2, 0.5, 1e-10).unwrap();
                let sol_hi = scaling::solve_scaling_ode(&cfg.weight, hi, 2, 0.5, 1e-10).unwrap();
                let slack = g_slack(&traj);
                for (k, snap) in traj.snapshots.iter().enumerate() {
                    let (a, b) = (sol_lo.theta_at(snap.t).unwrap().ln(), sol_hi.theta_at(snap.t).unwrap().ln());
                    prop_assert!(snap.phi.iter().all(|p| *p >= a - 1e-6 && *p <= b + 1e-6));
                    prop_assert!(traj.series[k].min_denom > 0.0);
                    if k > 0 {
                        prop_assert!(traj.series[k].sup_grad <= traj.series[k - 1].sup_grad + slack);
                    }
                }
            }
        }

        fn g_slack(traj: &Trajectory) -> f64 {
            1e-10 + traj.grid.dtheta().powi(2)
        }
    }
}
