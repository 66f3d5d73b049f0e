//! Subcommands. Each returns the process exit code.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use coneflow_core::flow::{run_observed, FlowError, InitialProfile, RunStatus, SeriesRow};
use coneflow_core::monitors::{convergence_report, CheckName, MonitorReport, OnlineMonitor};
use coneflow_core::scaling::solve_scaling_ode;
use coneflow_core::verify::{run_suite, Level};

use crate::bundle::{self, SnapshotRow, Summary};
use crate::config::{ConfigError, RunConfigFile, WeightKindName};

pub const EXIT_OK: i32 = 0;
pub const EXIT_MONITOR: i32 = 2;
pub const EXIT_SINGULAR: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

/// Result of one configured run, after its bundle is written.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: i32,
    pub status: String,
    pub message: Option<String>,
    pub report: Option<MonitorReport>,
}

impl Outcome {
    fn rejected(message: String) -> Self {
        Outcome { exit_code: EXIT_CONFIG, status: "config_rejected".into(), message: Some(message), report: None }
    }
}

fn flow_error_code(e: &FlowError) -> i32 {
    match e {
        FlowError::Singularity { .. } | FlowError::NonFinite { .. } | FlowError::Geometry(_) => EXIT_SINGULAR,
        _ => EXIT_CONFIG,
    }
}

fn status_name(status: RunStatus) -> String {
    serde_json::to_value(status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

/// Runs one configuration, monitors it and writes its bundle to `dir`.
pub fn execute(config: &RunConfigFile, dir: &Path) -> Outcome {
    let reject = |message: String| {
        if let Err(e) = bundle::write_rejected(dir, config, &message, EXIT_CONFIG) {
            log::error!("cannot write {}: {e}", dir.display());
        }
        Outcome::rejected(message)
    };
    let plan = match config.plan() {
        Ok(p) => p,
        Err(e) => return reject(e.to_string()),
    };
    let mut online = OnlineMonitor::new(plan.monitors.clone());
    let traj = match run_observed(&plan.flow, &mut |t| online.observe(t)) {
        Ok(t) => t,
        Err(e) if flow_error_code(&e) == EXIT_CONFIG => return reject(e.to_string()),
        Err(e) => {
            return Outcome { exit_code: EXIT_SINGULAR, status: "singularity".into(), message: Some(e.to_string()), report: None }
        }
    };
    let report = match convergence_report(&traj, &plan.monitors) {
        Ok(r) => r,
        Err(e) => {
            let message = format!("monitor evaluation failed: {e}");
            log::error!("{message}");
            let code = if traj.status == RunStatus::Singularity { EXIT_SINGULAR } else { EXIT_MONITOR };
            return Outcome { exit_code: code, status: status_name(traj.status), message: Some(message), report: None };
        }
    };
    let exit_code = match traj.status {
        RunStatus::Singularity => EXIT_SINGULAR,
        RunStatus::MonitorAbort => EXIT_MONITOR,
        _ if !report.pass => EXIT_MONITOR,
        RunStatus::TMaxReached => {
            log::warn!("termination bound reached before osc(u~) < conv_tol; all checks passed");
            EXIT_OK
        }
        _ => EXIT_OK,
    };
    for check in report.checks.iter().filter(|c| !c.pass) {
        log::warn!("check {} failed: worst violation {:e} > tolerance {:e}", check.name, check.worst_violation, check.tolerance);
    }
    let summary = Summary::new(&traj, report.clone(), exit_code);
    if let Err(e) = bundle::write_bundle(dir, config, &traj, &summary, plan.snapshot_every) {
        log::error!("cannot write bundle to {}: {e}", dir.display());
        return Outcome { exit_code: EXIT_CONFIG, status: status_name(traj.status), message: Some(e.to_string()), report: Some(report) };
    }
    Outcome { exit_code, status: status_name(traj.status), message: traj.message.clone(), report: Some(report) }
}

fn load(path: &Path) -> Result<RunConfigFile, ConfigError> {
    RunConfigFile::load(path)
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn cmd_run(path: &Path, out: Option<&Path>) -> i32 {
    let config = match load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| config.output_dir(&base_dir(path)));
    let outcome = execute(&config, &dir);
    match (&outcome.message, outcome.exit_code) {
        (Some(m), EXIT_OK) => eprintln!("note: {m}"),
        (Some(m), _) => eprintln!("error: {m}"),
        _ => {}
    }
    if let Some(r) = &outcome.report {
        eprintln!(
            "{}: r_inf = {} in [{}, {}]; failed checks: {:?}",
            outcome.status,
            r.r_inf_estimate,
            r.r_inf_bounds.0,
            r.r_inf_bounds.1,
            r.failed().iter().map(|c| c.as_str()).collect::<Vec<_>>()
        );
    }
    outcome.exit_code
}

/// One point of the sweep grid; unset axes keep the base value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepPoint {
    pub alpha: Option<f64>,
    pub eps: Option<f64>,
    pub r0: Option<f64>,
    pub cells: Option<usize>,
    pub theta_max: Option<f64>,
}

fn axis<T: Copy>(values: &[T]) -> Vec<Option<T>> {
    if values.is_empty() {
        vec![None]
    } else {
        values.iter().map(|v| Some(*v)).collect()
    }
}

/// Cartesian product in axis order alpha, eps, r0, cells, theta_max.
pub fn sweep_points(config: &RunConfigFile) -> Vec<SweepPoint> {
    let axes = config.sweep.clone().unwrap_or_default();
    let mut out = Vec::new();
    for alpha in axis(&axes.alpha) {
        for eps in axis(&axes.eps) {
            for r0 in axis(&axes.r0) {
                for cells in axis(&axes.cells) {
                    for theta_max in axis(&axes.theta_max) {
                        out.push(SweepPoint { alpha, eps, r0, cells, theta_max });
                    }
                }
            }
        }
    }
    out
}

/// The base configuration with one sweep point applied and the sweep removed.
pub fn apply_point(base: &RunConfigFile, p: &SweepPoint) -> Result<RunConfigFile, ConfigError> {
    let mut c = base.clone();
    c.sweep = None;
    if let Some(a) = p.alpha {
        if c.weight.kind != WeightKindName::Power {
            return Err(ConfigError::Invalid("alpha axis needs a power weight".into()));
        }
        if !c.weight.derives_constants() {
            log::warn!("alpha sweep with declared constants: c1..c6 are kept as declared");
        }
        c.weight.alpha = Some(a);
    }
    if let Some(e) = p.eps {
        match &mut c.initial {
            InitialProfile::Cosine { eps, .. } => *eps = e,
            _ => return Err(ConfigError::Invalid("eps axis needs a cosine initial profile".into())),
        }
    }
    if let Some(r) = p.r0 {
        match &mut c.initial {
            InitialProfile::Cosine { r0, .. } | InitialProfile::Constant { r0 } => *r0 = r,
            _ => return Err(ConfigError::Invalid("r0 axis needs a constant or cosine profile".into())),
        }
    }
    if let Some(j) = p.cells {
        c.cells = j;
    }
    if let Some(t) = p.theta_max {
        c.theta_max = t;
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run: String,
    pub alpha: Option<f64>,
    pub eps: Option<f64>,
    pub r0: Option<f64>,
    pub cells: Option<usize>,
    pub theta_max: Option<f64>,
    pub status: String,
    pub exit_code: i32,
    pub pass: bool,
    pub r_inf: Option<f64>,
    pub r_inf_lower: Option<f64>,
    pub r_inf_upper: Option<f64>,
    pub worst_c0: Option<f64>,
    pub worst_gradient: Option<f64>,
    pub worst_gradient_rescaled: Option<f64>,
    pub worst_phidot: Option<f64>,
    pub worst_h_theta: Option<f64>,
    pub worst_area_identity: Option<f64>,
    pub worst_area_sandwich: Option<f64>,
    pub worst_psi_identity: Option<f64>,
    pub worst_omega: Option<f64>,
    pub worst_r_inf: Option<f64>,
    pub message: String,
}

fn sweep_row(name: String, p: &SweepPoint, o: &Outcome) -> SweepRow {
    let r = o.report.as_ref();
    let worst = |c: CheckName| r.and_then(|r| r.check(c)).map(|c| c.worst_violation);
    SweepRow {
        run: name,
        alpha: p.alpha,
        eps: p.eps,
        r0: p.r0,
        cells: p.cells,
        theta_max: p.theta_max,
        status: o.status.clone(),
        exit_code: o.exit_code,
        pass: o.exit_code == EXIT_OK,
        r_inf: r.map(|r| r.r_inf_estimate),
        r_inf_lower: r.map(|r| r.r_inf_bounds.0),
        r_inf_upper: r.map(|r| r.r_inf_bounds.1),
        worst_c0: worst(CheckName::C0),
        worst_gradient: worst(CheckName::Gradient),
        worst_gradient_rescaled: worst(CheckName::GradientRescaled),
        worst_phidot: worst(CheckName::Phidot),
        worst_h_theta: worst(CheckName::HTheta),
        worst_area_identity: worst(CheckName::AreaIdentity),
        worst_area_sandwich: worst(CheckName::AreaSandwich),
        worst_psi_identity: worst(CheckName::PsiIdentity),
        worst_omega: worst(CheckName::Omega),
        worst_r_inf: worst(CheckName::RInf),
        message: o.message.clone().unwrap_or_default(),
    }
}

pub const SWEEP_FILE: &str = "sweep.csv";

pub fn cmd_sweep(path: &Path, out: Option<&Path>) -> i32 {
    let config = match load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if config.sweep.is_none() {
        eprintln!("error: config has no sweep section");
        return EXIT_CONFIG;
    }
    let root = out.map(Path::to_path_buf).unwrap_or_else(|| config.output_dir(&base_dir(path)));
    let points = sweep_points(&config);
    let rows: Vec<SweepRow> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let name = format!("run-{i:03}");
            let dir = root.join(&name);
            let outcome = match apply_point(&config, p) {
                Ok(c) => execute(&c, &dir),
                Err(e) => {
                    let message = e.to_string();
                    let mut echo = config.clone();
                    echo.sweep = None;
                    if let Err(e) = bundle::write_rejected(&dir, &echo, &message, EXIT_CONFIG) {
                        log::error!("cannot write {}: {e}", dir.display());
                    }
                    Outcome::rejected(message)
                }
            };
            sweep_row(name, p, &outcome)
        })
        .collect();
    if let Err(e) = write_sweep(&root.join(SWEEP_FILE), &rows) {
        eprintln!("error: cannot write {}: {e}", root.join(SWEEP_FILE).display());
        return EXIT_CONFIG;
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    eprintln!("{} runs, {} not passing; aggregate in {}", rows.len(), failed, root.join(SWEEP_FILE).display());
    if failed == 0 {
        EXIT_OK
    } else {
        rows.iter().map(|r| r.exit_code).find(|&c| c != EXIT_OK).unwrap_or(EXIT_MONITOR)
    }
}

fn write_sweep(path: &Path, rows: &[SweepRow]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| io::Error::other(e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io::Error::other(e))?;
    }
    w.flush()
}

pub fn cmd_verify(level: Level, out: &mut dyn Write) -> i32 {
    let items = match run_suite(level) {
        Ok(items) => items,
        Err(e) => {
            let _ = writeln!(out, "verification could not run: {e}");
            return EXIT_MONITOR;
        }
    };
    let width = items.iter().map(|i| i.name.len()).max().unwrap_or(0);
    for i in &items {
        let _ = writeln!(
            out,
            "{}  {:width$}  {:>12.4e}  {:<24}  {}",
            if i.pass { "PASS" } else { "FAIL" },
            i.name,
            i.value,
            i.threshold,
            i.detail
        );
    }
    let failed = items.iter().filter(|i| !i.pass).count();
    let _ = writeln!(out, "{} checks, {} failed", items.len(), failed);
    if failed == 0 {
        EXIT_OK
    } else {
        EXIT_MONITOR
    }
}

pub const REPORT_DIR: &str = "report";

#[derive(Debug, Serialize)]
struct ProfileRow {
    output: usize,
    t: f64,
    s: f64,
    theta: f64,
    u_tilde: f64,
}

#[derive(Debug, Serialize)]
#[allow(non_snake_case)]
struct DiagnosticRow {
    t: f64,
    s: f64,
    osc_u_tilde: f64,
    sup_grad: f64,
    min_M: f64,
    max_M: f64,
    min_HTheta: f64,
    max_HTheta: f64,
    min_Omega: f64,
    max_Omega: f64,
    star_ratio: f64,
    rescaled_area: f64,
    note: String,
}

#[derive(Debug, Serialize)]
struct BoundRow {
    output: usize,
    t: f64,
    s: f64,
    phibar_lower: f64,
    phi_min: f64,
    phi_max: f64,
    phibar_upper: f64,
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| format!("{}: {e}", path.display()))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), String> {
    let mut w = csv::Writer::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    for r in rows {
        w.serialize(r).map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| e.to_string())
}

fn fmt_num(v: &serde_json::Value) -> String {
    v.as_f64().map(|x| format!("{x:.6e}")).unwrap_or_else(|| "n/a".into())
}

/// Writes plot-ready extracts and `summary.txt` under `<bundle>/report`.
pub fn cmd_report(dir: &Path) -> i32 {
    match build_report(dir) {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: bundle {} is missing or corrupt: {e}", dir.display());
            EXIT_CONFIG
        }
    }
}

fn build_report(dir: &Path) -> Result<String, String> {
    let summary_text = fs::read_to_string(dir.join(bundle::SUMMARY_FILE)).map_err(|e| format!("summary.json: {e}"))?;
    let summary: serde_json::Value = serde_json::from_str(&summary_text).map_err(|e| format!("summary.json: {e}"))?;
    let status = summary["status"].as_str().ok_or("summary.json: no status")?.to_string();
    let config = RunConfigFile::load(&dir.join(bundle::CONFIG_FILE)).map_err(|e| e.to_string())?;
    let series: Vec<SeriesRow> = read_csv(&dir.join(bundle::SERIES_FILE))?;
    if series.is_empty() {
        return Err("series.csv has no rows".into());
    }
    let mut snaps: Vec<(usize, Vec<SnapshotRow>)> = Vec::new();
    let snap_dir = dir.join(bundle::SNAPSHOT_DIR);
    let entries = fs::read_dir(&snap_dir).map_err(|e| format!("{}: {e}", snap_dir.display()))?;
    for entry in entries {
        let path = entry.map_err(|e| e.to_string())?.path();
        let idx: usize = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("unexpected snapshot file {}", path.display()))?;
        if idx >= series.len() {
            return Err(format!("snapshot {idx} has no series row"));
        }
        snaps.push((idx, read_csv(&path)?));
    }
    snaps.sort_by_key(|(k, _)| *k);
    let first = snaps.first().filter(|(k, _)| *k == 0).ok_or("snapshot 0000.csv missing")?;

    let out = dir.join(REPORT_DIR);
    fs::create_dir_all(&out).map_err(|e| e.to_string())?;

    let mut profiles = Vec::new();
    for (k, rows) in &snaps {
        for r in rows {
            profiles.push(ProfileRow { output: *k, t: series[*k].t, s: series[*k].s, theta: r.theta, u_tilde: r.u_tilde });
        }
    }
    write_rows(&out.join("u_tilde_profiles.csv"), &profiles)?;

    let truncated = matches!(status.as_str(), "singularity" | "monitor_abort");
    let n = config.n as f64;
    let diagnostics: Vec<DiagnosticRow> = series
        .iter()
        .enumerate()
        .map(|(k, r)| DiagnosticRow {
            t: r.t,
            s: r.s,
            osc_u_tilde: r.osc_u_tilde,
            sup_grad: r.sup_grad,
            min_M: r.min_m,
            max_M: r.max_m,
            min_HTheta: r.min_h_theta,
            max_HTheta: r.max_h_theta,
            min_Omega: r.min_omega,
            max_Omega: r.max_omega,
            star_ratio: r.star_ratio,
            rescaled_area: r.area / r.theta.powf(n),
            note: if truncated && k + 1 == series.len() { format!("TRUNCATED: {status}") } else { String::new() },
        })
        .collect();
    write_rows(&out.join("diagnostics.csv"), &diagnostics)?;

    let weight = config.weight.build().map_err(|e| e.to_string())?;
    let (phi1, phi2) = first.1.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.phi), b.max(r.phi)));
    let t_end = series.last().map(|r| r.t).unwrap_or(0.0).max(1e-12);
    let lo = solve_scaling_ode(&weight, phi1, config.n, t_end, 1e-11).map_err(|e| e.to_string())?;
    let hi = solve_scaling_ode(&weight, phi2, config.n, t_end, 1e-11).map_err(|e| e.to_string())?;
    let mut bounds = Vec::new();
    for (k, rows) in &snaps {
        let t = series[*k].t;
        let (pmin, pmax) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.phi), b.max(r.phi)));
        bounds.push(BoundRow {
            output: *k,
            t,
            s: series[*k].s,
            phibar_lower: lo.phibar_at(t).map_err(|e| e.to_string())?,
            phi_min: pmin,
            phi_max: pmax,
            phibar_upper: hi.phibar_at(t).map_err(|e| e.to_string())?,
        });
    }
    write_rows(&out.join("bounds.csv"), &bounds)?;

    let mut text = String::new();
    let last = series.last().expect("non-empty");
    let _ = writeln!(text, "status: {status}");
    if truncated {
        let _ = writeln!(text, "SERIES TRUNCATED at t = {}, s = {} ({status})", last.t, last.s);
    }
    if let Some(m) = summary["message"].as_str() {
        let _ = writeln!(text, "message: {m}");
    }
    let _ = writeln!(text, "exit code: {}", summary["exit_code"]);
    let _ = writeln!(text, "outputs: {} (last t = {}, s = {})", series.len(), last.t, last.s);
    let _ = writeln!(text, "osc(u~): {:.3e} -> {:.3e}", series[0].osc_u_tilde, last.osc_u_tilde);
    let r = &summary["r_inf"];
    let _ = writeln!(
        text,
        "r_inf: {} in [{}, {}]",
        fmt_num(&r["estimate"]),
        fmt_num(&r["bounds"][0]),
        fmt_num(&r["bounds"][1])
    );
    let c = &summary["constants"];
    let _ = writeln!(
        text,
        "constants: phi1 {} phi2 {} c7 {} c8 {} c9 {} c10 {} c12 {}",
        fmt_num(&c["phi1"]),
        fmt_num(&c["phi2"]),
        fmt_num(&c["c7"]),
        fmt_num(&c["c8"]),
        fmt_num(&c["c9"]),
        fmt_num(&c["c10"]),
        fmt_num(&c["c12"])
    );
    let _ = writeln!(text, "checks:");
    for check in summary["report"]["checks"].as_array().ok_or("summary.json: no checks")? {
        let _ = writeln!(
            text,
            "  {:4}  {:18}  worst {:>14}  tol {:>12}",
            if check["pass"].as_bool() == Some(true) { "pass" } else { "FAIL" },
            check["name"].as_str().unwrap_or("?"),
            fmt_num(&check["worst_violation"]),
            fmt_num(&check["tolerance"])
        );
    }
    fs::write(out.join("summary.txt"), &text).map_err(|e| e.to_string())?;
    Ok(text)
}
