//! Acceptance suite: one line per criterion, nonzero exit on any failure.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use coneflow_core::flow::{run, FlowConfig, FlowError, InitialProfile, OutputCadence, RunStatus, Trajectory};
use coneflow_core::monitors::{convergence_report, CheckName, MonitorConfig, MonitorReport};
use coneflow_core::verify::{
    h_oracle_deviation, h_oracle_refinement, identity_refinement, negative_controls, scaling_exactness,
    solver_richardson, sphere_psi_residual, sphere_regression, N, THETA_MAX,
};
use coneflow_core::weight::{AssumptionConstants, WeightKind, WeightSpec};

type Outcome = Result<(bool, String), String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn cosine(weight: WeightSpec, eps: f64) -> FlowConfig {
    FlowConfig::new(N, THETA_MAX, 128, weight, InitialProfile::Cosine { r0: 1.0, eps })
}

fn worst(r: &MonitorReport, name: CheckName) -> Result<f64, String> {
    r.check(name).map(|c| c.worst_violation).ok_or_else(|| format!("no {name} check"))
}

fn passes(r: &MonitorReport, name: CheckName) -> Result<bool, String> {
    r.check(name).map(|c| c.pass).ok_or_else(|| format!("no {name} check"))
}

/// Cosine run (alpha=1, eps=0.05) to t=2 recorded every dt=1e-2.
struct Fixture {
    cosine: Trajectory,
    cosine_report: MonitorReport,
    sphere_report: MonitorReport,
}

fn fixture() -> Result<Fixture, String> {
    let mut cfg = cosine(WeightSpec::power_exact(1.0), 0.05);
    cfg.t_max = Some(2.0);
    cfg.conv_tol = 0.0;
    cfg.cadence = OutputCadence::Physical(1e-2);
    let cosine = run(&cfg).map_err(err)?;
    let cosine_report = convergence_report(&cosine, &MonitorConfig::default()).map_err(err)?;

    let mut cfg = FlowConfig::new(N, THETA_MAX, 128, WeightSpec::power_exact(1.0), InitialProfile::Constant { r0: 1.0 });
    cfg.t_max = Some(1.0);
    cfg.conv_tol = 0.0;
    cfg.cadence = OutputCadence::Physical(0.05);
    let sphere = run(&cfg).map_err(err)?;
    let sphere_report = convergence_report(&sphere, &MonitorConfig::default()).map_err(err)?;
    Ok(Fixture { cosine, cosine_report, sphere_report })
}

fn c1_sphere_regression() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for alpha in [0.0, 1.0, 2.0] {
        let start = Instant::now();
        let e = sphere_regression(&WeightSpec::power_exact(alpha), 128, 1.0).map_err(err)?;
        let dt = start.elapsed();
        ok &= e <= 1e-6 && dt <= Duration::from_secs(10);
        parts.push(format!("alpha={alpha}: {e:.2e} in {:.2}s", dt.as_secs_f64()));
    }
    Ok((ok, parts.join("; ")))
}

fn c2_scaling_exactness() -> Outcome {
    let (theta_err, s_err) = scaling_exactness().map_err(err)?;
    Ok((theta_err <= 1e-9 && s_err <= 1e-8, format!("Theta rel err {theta_err:.2e}, |s(2) - 2 ln 2| {s_err:.2e}")))
}

fn c3_oracle_equivalence() -> Outcome {
    let dev = h_oracle_deviation(0.05, 128).map_err(err)?;
    let order = h_oracle_refinement(0.05, 64).map_err(err)?;
    let in_window = order.orders.iter().all(|&p| (1.7..=2.3).contains(&p));
    Ok((dev <= 1e-4 && in_window, format!("deviation {dev:.2e} at J=128, orders {:.3?}", order.orders)))
}

fn c4_c0_sandwich(f: &Fixture) -> Outcome {
    let w = worst(&f.cosine_report, CheckName::C0)?;
    Ok((w <= 1e-6, format!("worst excursion {w:.2e} over {} snapshots", f.cosine.snapshots.len())))
}

fn c5_gradient(f: &Fixture) -> Outcome {
    let plain = passes(&f.cosine_report, CheckName::Gradient)?;
    let rescaled = passes(&f.cosine_report, CheckName::GradientRescaled)?;
    Ok((
        plain && rescaled,
        format!(
            "monotone {:.2e}, rescaled {:.2e} (c12 = {:.4})",
            worst(&f.cosine_report, CheckName::Gradient)?,
            worst(&f.cosine_report, CheckName::GradientRescaled)?,
            f.cosine_report.constants.c12
        ),
    ))
}

fn c6_speed(f: &Fixture) -> Outcome {
    let w = worst(&f.cosine_report, CheckName::Phidot)?;
    let c = f.sphere_report.check(CheckName::Phidot).ok_or("no phidot check")?;
    let target = 1.0 / N as f64;
    let sphere_dev = (c.observed_min - target).abs().max((c.observed_max - target).abs());
    Ok((w <= 1e-6 && sphere_dev <= 1e-8, format!("cosine excursion {w:.2e}; sphere |M - 1/n| {sphere_dev:.2e}")))
}

fn c7_curvature(f: &Fixture) -> Outcome {
    let c = f.cosine_report.check(CheckName::HTheta).ok_or("no h_theta check")?;
    let s = f.sphere_report.check(CheckName::HTheta).ok_or("no h_theta check")?;
    let target = N as f64;
    let sphere_dev = (s.observed_min - target).abs().max((s.observed_max - target).abs());
    Ok((
        c.observed_min > 0.0 && c.worst_violation <= 1e-6 && sphere_dev <= 1e-8,
        format!(
            "HTheta in [{:.4}, {:.4}] vs [{:.4}, {:.4}]; sphere |HTheta - n| {sphere_dev:.2e}",
            c.observed_min, c.observed_max, c.lower, c.upper
        ),
    ))
}

fn c8_area(f: &Fixture) -> Outcome {
    let id = worst(&f.cosine_report, CheckName::AreaIdentity)?;
    let sandwich = worst(&f.cosine_report, CheckName::AreaSandwich)?;
    Ok((id <= 1e-3 && sandwich <= 1e-6, format!("identity rel discrepancy {id:.2e}, sandwich excursion {sandwich:.2e}")))
}

fn c9_convergence() -> Outcome {
    let log1p = WeightSpec::new(
        WeightKind::Log1p,
        AssumptionConstants { c1: 0.85, c2: 1.0, c3: 0.5, c4: 2.0, c5: 0.5, c6: 2.0 },
    )
    .map_err(err)?;
    let sigmoid = WeightSpec::new(
        WeightKind::SigmoidExp,
        AssumptionConstants { c1: 1.0, c2: 1.28, c3: 0.5, c4: 2.0, c5: 0.414, c6: 2.415 },
    )
    .map_err(err)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, w) in [("power alpha=1", WeightSpec::power_exact(1.0)), ("log1p", log1p), ("sigmoid_exp", sigmoid)] {
        let start = Instant::now();
        let mut cfg = cosine(w, 0.05);
        cfg.s_max = Some(10.0);
        cfg.conv_tol = 1e-4;
        let traj = run(&cfg).map_err(err)?;
        let report = convergence_report(&traj, &MonitorConfig::default()).map_err(err)?;
        let dt = start.elapsed();
        let (lo, hi) = report.r_inf_bounds;
        let r = report.r_inf_estimate;
        let last = traj.last();
        let this = traj.status == RunStatus::Converged
            && last.s <= 10.0
            && r >= lo - 1e-3
            && r <= hi + 1e-3
            && dt <= Duration::from_secs(120);
        ok &= this;
        parts.push(format!(
            "{name}: {:?} at s={:.2}, r_inf {r:.6} in [{lo:.6}, {hi:.6}], {:.1}s",
            traj.status,
            last.s,
            dt.as_secs_f64()
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn c10_psi_identity() -> Outcome {
    let mut sphere = 0.0f64;
    for alpha in [0.0, 1.0, 2.0] {
        sphere = sphere.max(sphere_psi_residual(alpha, 128).map_err(err)?);
    }
    let study = identity_refinement(1.0, 0.05, 32, 0.04, 0.4).map_err(err)?;
    let decay = study.psi.orders.iter().all(|&p| p >= 1.8);
    Ok((sphere <= 1e-8 && decay, format!("sphere residual {sphere:.2e}; cosine orders {:.3?}", study.psi.orders)))
}

fn c11_solver_order() -> Outcome {
    let r = solver_richardson(1.0, 0.05, 64, 0.5).map_err(err)?;
    Ok(((1.7..=2.3).contains(&r.order), format!("order {:.3}, differences {:.2e} {:.2e}", r.order, r.differences[0], r.differences[1])))
}

fn c12_negative_controls() -> Outcome {
    let controls = negative_controls(128).map_err(err)?;
    let exact = controls.iter().all(|c| c.pass());
    let misses: Vec<String> = controls
        .iter()
        .filter(|c| !c.pass())
        .map(|c| format!("{} -> {:?}", c.target, c.failed.iter().map(|x| x.as_str()).collect::<Vec<_>>()))
        .collect();

    let mut cfg = cosine(WeightSpec::power_exact(1.0), 5.0);
    cfg.t_max = Some(1.0);
    let eps_rejected = matches!(run(&cfg), Err(FlowError::NotMeanConvex { .. }));

    let mut cfg = cosine(WeightSpec::power_exact(1.0), 0.05);
    cfg.theta_max = 0.6 * PI;
    cfg.t_max = Some(1.0);
    let cone_rejected = run(&cfg).is_err();

    Ok((
        exact && eps_rejected && cone_rejected,
        format!(
            "{}/{} corruptions isolated{}; eps=5 rejected: {eps_rejected}; theta_max=0.6pi rejected: {cone_rejected}",
            controls.len() - misses.len(),
            controls.len(),
            if misses.is_empty() { String::new() } else { format!(" (misses: {})", misses.join(", ")) }
        ),
    ))
}

fn main() -> ExitCode {
    let fixture = fixture();
    let shared = |f: fn(&Fixture) -> Outcome| -> Outcome {
        match &fixture {
            Ok(fx) => f(fx),
            Err(e) => Err(format!("fixture run failed: {e}")),
        }
    };
    let results: Vec<(&str, Outcome)> = vec![
        ("1 sphere regression", c1_sphere_regression()),
        ("2 scaling ODE exactness", c2_scaling_exactness()),
        ("3 oracle equivalence", c3_oracle_equivalence()),
        ("4 C0 sandwich", shared(c4_c0_sandwich)),
        ("5 gradient estimate", shared(c5_gradient)),
        ("6 speed estimate", shared(c6_speed)),
        ("7 curvature bound", shared(c7_curvature)),
        ("8 area identity", shared(c8_area)),
        ("9 convergence", c9_convergence()),
        ("10 psi identity", c10_psi_identity()),
        ("11 solver order", c11_solver_order()),
        ("12 negative controls", c12_negative_controls()),
    ];
    let mut failed = 0;
    for (name, outcome) in &results {
        let (pass, detail) = match outcome {
            Ok((p, d)) => (*p, d.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} of {} criteria pass", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
