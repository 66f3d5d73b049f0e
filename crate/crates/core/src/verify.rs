//! Reference experiments: sphere regressions, oracle cross-checks,
//! refinement studies and corrupted-trajectory controls.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controls::{first_failure, Shape};
use crate::flow::{run, FlowConfig, FlowError, InitialProfile, OutputCadence, Trajectory};
use crate::geometry::{compute_fields, denominator, GeometryError};
use crate::grid::{CapGrid, GridError};
use crate::monitors::{check_area_identity, check_psi_identity, Analysis, CheckName, MonitorConfig, MonitorError};
use crate::oracle::{
    convergence_order, embedding_mean_curvature, richardson_order, sphere_solution, OracleError, OrderEstimate,
    RichardsonEstimate, DEFAULT_ORDER_WINDOW,
};
use crate::scaling::{solve_scaling_ode, ScalingError};
use crate::weight::WeightSpec;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Scaling(#[from] ScalingError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Cap angle and dimension shared by the reference experiments.
pub const THETA_MAX: f64 = PI / 3.0;
pub const N: usize = 2;

/// Order window for identity residuals: at least 1.8, no upper limit.
pub const IDENTITY_ORDER_WINDOW: (f64, f64) = (1.8, f64::INFINITY);

fn cosine_config(alpha: f64, eps: f64, cells: usize) -> FlowConfig {
    FlowConfig::new(N, THETA_MAX, cells, WeightSpec::power_exact(alpha), InitialProfile::Cosine { r0: 1.0, eps })
}

fn cosine_profile(grid: &CapGrid, eps: f64) -> Vec<f64> {
    grid.sample(|t| eps * (PI * t / THETA_MAX).cos())
}

/// Max node-wise relative error of `u(t_end)` against the round-sphere radius.
pub fn sphere_regression(w: &WeightSpec, cells: usize, t_end: f64) -> Result<f64, VerifyError> {
    let mut cfg = FlowConfig::new(N, THETA_MAX, cells, w.clone(), InitialProfile::Constant { r0: 1.0 });
    cfg.t_max = Some(t_end);
    cfg.conv_tol = 0.0;
    cfg.cadence = OutputCadence::Physical(t_end);
    let traj = run(&cfg)?;
    let exact = sphere_solution(w, 1.0, N, traj.last().t)?;
    Ok(traj.last().phi.iter().map(|p| ((p.exp() - exact) / exact).abs()).fold(0.0, f64::max))
}

/// Max relative error of `Theta(t, 0)` against the power closed forms for
/// `alpha` in {0, 1, 2}, `t` in {0.5, 1, 2}, and `|s(2) - 2 ln 2|` for `alpha = 1`.
pub fn scaling_exactness() -> Result<(f64, f64), VerifyError> {
    let mut worst: f64 = 0.0;
    let mut s_err = 0.0;
    for alpha in [0.0, 1.0, 2.0] {
        let w = WeightSpec::power_exact(alpha);
        let sol = solve_scaling_ode(&w, 0.0, N, 2.0, 1e-12)?;
        for t in [0.5, 1.0, 2.0] {
            let exact: f64 = if alpha == 0.0 { (t / N as f64).exp() } else { (1.0 + alpha * t / N as f64).powf(1.0 / alpha) };
            worst = worst.max((sol.theta_at(t)? - exact).abs() / exact);
        }
        if alpha == 1.0 {
            s_err = (sol.s_of_t(2.0)? - 2.0 * 2f64.ln()).abs();
        }
    }
    Ok((worst, s_err))
}

/// Max relative gap between the sphere oracle and the scaling solver with
/// `c = ln r0`, over all weights given.
pub fn sphere_vs_scaling(weights: &[WeightSpec]) -> Result<f64, VerifyError> {
    let mut worst: f64 = 0.0;
    for w in weights {
        let r0: f64 = 1.3;
        let sol = solve_scaling_ode(w, r0.ln(), N, 2.0, 1e-12)?;
        for t in [0.25, 1.0, 2.0] {
            let a = sphere_solution(w, r0, N, t)?;
            worst = worst.max((sol.theta_at(t)? - a).abs() / a);
        }
    }
    Ok(worst)
}

/// Max relative deviation of `h` from the embedding oracle on the same profile.
pub fn h_deviation(grid: &CapGrid, phi: &[f64], h: &[f64]) -> Result<f64, VerifyError> {
    let emb = embedding_mean_curvature(grid, phi)?;
    Ok(h.iter().zip(&emb).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max))
}

/// Graph-formula `H` against the embedding oracle for the cosine profile.
pub fn h_oracle_deviation(eps: f64, cells: usize) -> Result<f64, VerifyError> {
    let grid = CapGrid::new(N, THETA_MAX, cells)?;
    let phi = cosine_profile(&grid, eps);
    let h = compute_fields(&grid, &WeightSpec::power_exact(1.0), &phi)?.h;
    h_deviation(&grid, &phi, &h)
}

/// Same comparison with the sign of the `cot` term in the denominator flipped.
pub fn h_oracle_deviation_flipped(eps: f64, cells: usize) -> Result<f64, VerifyError> {
    let grid = CapGrid::new(N, THETA_MAX, cells)?;
    let phi = cosine_profile(&grid, eps);
    let f = compute_fields(&grid, &WeightSpec::power_exact(1.0), &phi)?;
    let p2 = grid.d2(&phi)?;
    let h: Vec<f64> = (0..cells)
        .map(|j| denominator(N as f64, -grid.cot()[j], f.phi_theta[j], p2[j]) / (f.u[j] * f.v[j]))
        .collect();
    h_deviation(&grid, &phi, &h)
}

pub fn h_oracle_refinement(eps: f64, base: usize) -> Result<OrderEstimate, VerifyError> {
    let e = [h_oracle_deviation(eps, base)?, h_oracle_deviation(eps, 2 * base)?, h_oracle_deviation(eps, 4 * base)?];
    Ok(convergence_order(e, DEFAULT_ORDER_WINDOW))
}

/// Richardson order of `u(t_end)` on the cosine run over `J, 2J, 4J`.
pub fn solver_richardson(alpha: f64, eps: f64, base: usize, t_end: f64) -> Result<RichardsonEstimate, VerifyError> {
    let mut levels = Vec::new();
    for cells in [base, 2 * base, 4 * base] {
        let mut cfg = cosine_config(alpha, eps, cells);
        cfg.t_max = Some(t_end);
        cfg.conv_tol = 0.0;
        cfg.cadence = OutputCadence::Physical(t_end);
        let traj = run(&cfg)?;
        levels.push(traj.last().phi.iter().map(|p| p.exp()).collect::<Vec<f64>>());
    }
    Ok(richardson_order(THETA_MAX, &levels[0], &levels[1], &levels[2], DEFAULT_ORDER_WINDOW)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementStudy {
    /// Max-norm Psi residual at `t_probe`.
    pub psi: OrderEstimate,
    /// Same, with the reaction term lacking the `1/v^2` factor.
    pub psi_printed: [f64; 3],
    /// Relative area-identity discrepancy at `t_probe`.
    pub area: OrderEstimate,
}

/// Halves `dtheta` and the output spacing together: `J = base 2^k`,
/// `dt_out = dt0 / 2^k`, on the cosine run up to `t_probe`.
pub fn identity_refinement(alpha: f64, eps: f64, base: usize, dt0: f64, t_probe: f64) -> Result<RefinementStudy, VerifyError> {
    let mut psi = [0.0; 3];
    let mut printed = [0.0; 3];
    let mut area = [0.0; 3];
    for k in 0..3 {
        let dt = dt0 / (1 << k) as f64;
        let mut cfg = cosine_config(alpha, eps, base << k);
        cfg.t_max = Some(t_probe + dt);
        cfg.conv_tol = 0.0;
        cfg.cadence = OutputCadence::Physical(dt);
        let traj = run(&cfg)?;
        let idx = (t_probe / dt).round() as usize;
        let res = check_psi_identity(&traj, idx)?;
        psi[k] = res.max_abs;
        printed[k] = res.printed_max_abs;
        area[k] = area_discrepancy_at(&traj, idx)?;
    }
    Ok(RefinementStudy {
        psi: convergence_order(psi, IDENTITY_ORDER_WINDOW),
        psi_printed: printed,
        area: convergence_order(area, IDENTITY_ORDER_WINDOW),
    })
}

/// Relative gap between the centered `P'` and `int f^{-1}(u) dH^n` at output `idx`.
pub fn area_discrepancy_at(traj: &Trajectory, idx: usize) -> Result<f64, VerifyError> {
    let mut window = traj.clone();
    window.snapshots = traj.snapshots[idx - 1..=idx + 1].to_vec();
    window.series = traj.series[idx - 1..=idx + 1].to_vec();
    let a = Analysis::new(&window)?;
    Ok(check_area_identity(&window, &a.views, f64::INFINITY)?.worst_violation)
}

/// Psi residual (max norm) on the sphere with fine output spacing.
pub fn sphere_psi_residual(alpha: f64, cells: usize) -> Result<f64, VerifyError> {
    let mut cfg = FlowConfig::new(N, THETA_MAX, cells, WeightSpec::power_exact(alpha), InitialProfile::Constant { r0: 1.0 });
    cfg.t_max = Some(1e-3);
    cfg.conv_tol = 0.0;
    cfg.cadence = OutputCadence::Physical(1e-4);
    let traj = run(&cfg)?;
    Ok(check_psi_identity(&traj, traj.snapshots.len() / 2)?.max_abs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlOutcome {
    pub target: CheckName,
    pub amplitude: Option<f64>,
    pub failed: Vec<CheckName>,
}

impl ControlOutcome {
    pub fn pass(&self) -> bool {
        self.failed == [self.target]
    }
}

fn control_run(alpha: f64, initial: InitialProfile, cells: usize) -> Result<Trajectory, VerifyError> {
    let mut cfg = FlowConfig::new(N, THETA_MAX, cells, WeightSpec::power_exact(alpha), initial);
    cfg.conv_tol = 0.0;
    match cfg.initial {
        InitialProfile::Constant { .. } => {
            cfg.t_max = Some(1.0);
            cfg.cadence = OutputCadence::Physical(0.05);
        }
        _ => cfg.s_max = Some(3.0),
    }
    Ok(run(&cfg)?)
}

/// Corrupts one snapshot of a clean run per target check and records which
/// checks fail first as the corruption grows.
pub fn negative_controls(cells: usize) -> Result<Vec<ControlOutcome>, VerifyError> {
    let cfg = MonitorConfig::default();
    let sphere = control_run(0.0, InitialProfile::Constant { r0: 1.0 }, cells)?;
    let small = control_run(0.0, InitialProfile::Cosine { r0: 1.0, eps: 1e-4 }, cells)?;
    let wide = control_run(0.0, InitialProfile::Cosine { r0: 1.0, eps: 0.05 }, cells)?;
    let late = wide.snapshots.len() - 5;
    let after_psi = wide.snapshots.len() / 2 + 1;
    let plan: [(CheckName, &Trajectory, usize, Shape, f64); 7] = [
        (CheckName::C0, &small, 1, Shape::Uniform, -1.0),
        (CheckName::Gradient, &wide, late, Shape::LowMode, 1.0),
        (CheckName::Phidot, &wide, late, Shape::Nyquist, 1.0),
        (CheckName::HTheta, &sphere, 5, Shape::Nyquist, 1.0),
        (CheckName::AreaIdentity, &wide, late, Shape::Uniform, 1.0),
        (CheckName::AreaSandwich, &sphere, 5, Shape::Uniform, 1.0),
        (CheckName::PsiIdentity, &wide, after_psi, Shape::Nyquist, 1.0),
    ];
    let mut out = Vec::new();
    for (target, traj, idx, shape, sign) in plan {
        let hit = first_failure(traj, idx, shape, sign, &cfg)?;
        out.push(ControlOutcome {
            target,
            amplitude: hit.as_ref().map(|d| d.amplitude),
            failed: hit.map(|d| d.failed).unwrap_or_default(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Quick,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyItem {
    pub name: String,
    pub value: f64,
    pub threshold: String,
    pub pass: bool,
    pub detail: String,
}

fn item(name: &str, value: f64, limit: f64, detail: String) -> VerifyItem {
    VerifyItem { name: name.into(), value, threshold: format!("<= {limit:e}"), pass: value <= limit, detail }
}

fn order_item(name: &str, est: &OrderEstimate) -> VerifyItem {
    VerifyItem {
        name: name.into(),
        value: est.orders[0].min(est.orders[1]),
        threshold: format!("in [{}, {}]", est.window.0, est.window.1),
        pass: est.pass,
        detail: est.diagnostic().unwrap_or_else(|| format!("errors {:?}", est.errors)),
    }
}

/// Runs the suite; quick takes a few seconds, full well under five minutes.
pub fn run_suite(level: Level) -> Result<Vec<VerifyItem>, VerifyError> {
    let mut items = Vec::new();
    for alpha in [0.0, 1.0, 2.0] {
        let err = sphere_regression(&WeightSpec::power_exact(alpha), 128, 1.0)?;
        items.push(item(&format!("sphere regression alpha={alpha}"), err, 1e-6, "J=128, t=1".into()));
    }
    let (theta_err, s_err) = scaling_exactness()?;
    items.push(item("scaling closed forms", theta_err, 1e-9, "alpha in {0,1,2}, t in {0.5,1,2}".into()));
    items.push(item("s(2) = 2 ln 2", s_err, 1e-8, "alpha=1".into()));
    let gap = sphere_vs_scaling(&[WeightSpec::power_exact(0.0), WeightSpec::power_exact(1.0), WeightSpec::power_exact(2.0)])?;
    items.push(item("sphere oracle vs scaling ODE", gap, 1e-10, "r0=1.3".into()));
    let dev = h_oracle_deviation(0.05, 128)?;
    items.push(item("embedding H vs graph H", dev, 1e-4, "cosine eps=0.05, J=128".into()));
    if level == Level::Quick {
        return Ok(items);
    }

    items.push(order_item("embedding H order", &h_oracle_refinement(0.05, 64)?));
    let flipped = h_oracle_deviation_flipped(0.05, 128)?;
    items.push(VerifyItem {
        name: "flipped denominator detected".into(),
        value: flipped,
        threshold: "> 1e-4".into(),
        pass: flipped > 1e-4,
        detail: "sign of the cot term reversed".into(),
    });
    let rich = solver_richardson(1.0, 0.05, 64, 0.5)?;
    items.push(VerifyItem {
        name: "solver Richardson order".into(),
        value: rich.order,
        threshold: format!("in [{}, {}]", rich.window.0, rich.window.1),
        pass: rich.pass,
        detail: format!("differences {:?}", rich.differences),
    });
    for alpha in [0.0, 1.0] {
        let study = identity_refinement(alpha, 0.05, 32, 0.04, 0.4)?;
        items.push(order_item(&format!("psi residual order alpha={alpha}"), &study.psi));
        items.push(order_item(&format!("area identity order alpha={alpha}"), &study.area));
    }
    for alpha in [0.0, 1.0, 2.0] {
        let r = sphere_psi_residual(alpha, 128)?;
        items.push(item(&format!("sphere psi residual alpha={alpha}"), r, 1e-8, "dt_out=1e-4".into()));
    }
    for c in negative_controls(128)? {
        items.push(VerifyItem {
            name: format!("negative control {}", c.target),
            value: c.amplitude.unwrap_or(f64::NAN),
            threshold: "fails exactly the target".into(),
            pass: c.pass(),
            detail: format!("failed {:?}", c.failed.iter().map(|x| x.as_str()).collect::<Vec<_>>()),
        });
    }
    Ok(items)
}
