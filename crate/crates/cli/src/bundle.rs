//! Output bundle: `series.csv`, `snapshots/NNNN.csv`, `summary.json`, `config.json`.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use coneflow_core::flow::{RunStatus, SolverStats, Trajectory};
use coneflow_core::monitors::{MonitorReport, RealizedConstants};
use coneflow_core::weight::{verify_assumptions, AssumptionReport, WeightSpec};

use crate::config::RunConfigFile;

pub const SERIES_FILE: &str = "series.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";
pub const SNAPSHOT_DIR: &str = "snapshots";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub theta: f64,
    pub phi: f64,
    pub u: f64,
    pub u_tilde: f64,
    pub v: f64,
    #[serde(rename = "H")]
    pub h: f64,
    pub denom: f64,
    pub w: f64,
    #[serde(rename = "Psi")]
    pub psi: f64,
}

/// Sampled audit of the declared weight constants.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionAudit {
    /// `(lo, hi)` windows for both `y` and `g`.
    pub windows: Vec<(f64, f64)>,
    pub pass: bool,
    pub reports: Vec<AssumptionReport>,
}

const AUDIT_WINDOWS: [(f64, f64); 3] = [(1e-3, 1.0), (1.0, 30.0), (30.0, 1e3)];

pub fn audit_weight(w: &WeightSpec) -> AssumptionAudit {
    let reports: Vec<AssumptionReport> =
        AUDIT_WINDOWS.iter().map(|&(lo, hi)| verify_assumptions(w, lo, hi, lo, hi, 200)).collect();
    AssumptionAudit { windows: AUDIT_WINDOWS.to_vec(), pass: reports.iter().all(|r| r.all_pass()), reports }
}

#[derive(Debug, Clone, Serialize)]
pub struct RInfSummary {
    pub estimate: f64,
    pub bounds: (f64, f64),
    /// Estimate recomputed with `Theta(t, phi1)` and `Theta(t, phi2)`.
    pub c_extremes: (f64, f64),
    pub c_sensitive: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub status: RunStatus,
    pub message: Option<String>,
    pub exit_code: i32,
    pub pass: bool,
    pub outputs: usize,
    pub final_t: f64,
    pub final_s: f64,
    pub rescale_c: f64,
    pub r_inf: RInfSummary,
    pub constants: RealizedConstants,
    pub stats: SolverStats,
    pub assumptions: AssumptionAudit,
    pub report: MonitorReport,
}

impl Summary {
    pub fn new(traj: &Trajectory, report: MonitorReport, exit_code: i32) -> Self {
        let last = traj.last();
        Summary {
            status: traj.status,
            message: traj.message.clone(),
            exit_code,
            pass: report.pass,
            outputs: traj.snapshots.len(),
            final_t: last.t,
            final_s: last.s,
            rescale_c: traj.rescale_c,
            r_inf: RInfSummary {
                estimate: report.r_inf_estimate,
                bounds: report.r_inf_bounds,
                c_extremes: report.r_inf_c_extremes,
                c_sensitive: report.r_inf_c_sensitive,
            },
            constants: report.constants,
            stats: traj.stats.clone(),
            assumptions: audit_weight(&traj.weight),
            report,
        }
    }
}

/// Summary for a run that never started.
#[derive(Debug, Clone, Serialize)]
pub struct RejectedSummary {
    pub status: &'static str,
    pub message: String,
    pub exit_code: i32,
    pub pass: bool,
}

fn to_io(e: impl std::error::Error + Send + Sync + 'static) -> io::Error {
    io::Error::other(e)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(to_io)?;
    text.push('\n');
    fs::write(path, text)
}

pub fn write_config(dir: &Path, config: &RunConfigFile) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join(CONFIG_FILE), config)
}

pub fn write_rejected(dir: &Path, config: &RunConfigFile, message: &str, exit_code: i32) -> io::Result<()> {
    write_config(dir, config)?;
    let summary = RejectedSummary { status: "config_rejected", message: message.into(), exit_code, pass: false };
    write_json(&dir.join(SUMMARY_FILE), &summary)
}

pub fn snapshot_rows(traj: &Trajectory, idx: usize) -> Result<Vec<SnapshotRow>, coneflow_core::flow::FlowError> {
    let view = traj.view(idx)?;
    let f = &view.fields;
    Ok((0..traj.grid.cells())
        .map(|j| SnapshotRow {
            theta: traj.grid.nodes()[j],
            phi: traj.snapshots[idx].phi[j],
            u: f.u[j],
            u_tilde: view.u_tilde[j],
            v: f.v[j],
            h: f.h[j],
            denom: f.denom[j],
            w: f.w[j],
            psi: f.psi[j],
        })
        .collect())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(to_io)?;
    for row in rows {
        w.serialize(row).map_err(to_io)?;
    }
    w.flush()
}

/// Writes the full bundle; stale snapshot files from earlier runs are removed.
pub fn write_bundle(
    dir: &Path,
    config: &RunConfigFile,
    traj: &Trajectory,
    summary: &Summary,
    snapshot_every: usize,
) -> io::Result<()> {
    write_config(dir, config)?;
    write_csv(&dir.join(SERIES_FILE), &traj.series)?;
    let snaps = dir.join(SNAPSHOT_DIR);
    if snaps.exists() {
        fs::remove_dir_all(&snaps)?;
    }
    fs::create_dir_all(&snaps)?;
    let last = traj.snapshots.len() - 1;
    for k in 0..=last {
        if k % snapshot_every == 0 || k == last {
            let rows = snapshot_rows(traj, k).map_err(to_io)?;
            write_csv(&snaps.join(format!("{k:04}.csv")), &rows)?;
        }
    }
    write_json(&dir.join(SUMMARY_FILE), summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use coneflow_core::flow::{run, FlowConfig, InitialProfile, OutputCadence};
    use coneflow_core::monitors::{convergence_report, MonitorConfig};
    use std::f64::consts::PI;

    #[test]
    fn honest_constants_pass_the_audit() {
        assert!(audit_weight(&WeightSpec::power_exact(1.0)).pass);
        let liar = WeightSpec::power(
            2.0,
            coneflow_core::weight::AssumptionConstants { c1: 1.0, c2: 1.0, c3: 0.5, c4: 2.0, c5: 0.5, c6: 2.0 },
        )
        .unwrap();
        assert!(!audit_weight(&liar).pass);
    }

    #[test]
    fn bundle_layout() {
        let mut cfg = FlowConfig::new(2, PI / 3.0, 16, WeightSpec::power_exact(1.0), InitialProfile::Constant { r0: 1.0 });
        cfg.t_max = Some(0.5);
        cfg.conv_tol = 0.0;
        cfg.cadence = OutputCadence::Physical(0.1);
        let traj = run(&cfg).unwrap();
        let report = convergence_report(&traj, &MonitorConfig::default()).unwrap();
        let summary = Summary::new(&traj, report, 0);
        let file: RunConfigFile = serde_json::from_value(serde_json::json!({
            "n": 2, "theta_max": PI / 3.0, "cells": 16,
            "weight": {"kind": "power", "alpha": 1.0},
            "initial": {"kind": "constant", "r0": 1.0},
            "solver": {"t_max": 0.5, "conv_tol": 0.0},
            "output": {"cadence_t": 0.1, "snapshot_every": 2}
        }))
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), &file, &traj, &summary, 2).unwrap();
        let series = fs::read_to_string(dir.path().join(SERIES_FILE)).unwrap();
        assert_eq!(
            series.lines().next().unwrap(),
            "t,s,Theta,P,sup_grad,min_denom,min_HTheta,max_HTheta,min_M,max_M,osc_u_tilde,star_ratio,min_Omega,max_Omega"
        );
        assert_eq!(series.lines().count(), 7);
        let mut names: Vec<String> = fs::read_dir(dir.path().join(SNAPSHOT_DIR))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names, ["0000.csv", "0002.csv", "0004.csv", "0005.csv"]);
        let snap = fs::read_to_string(dir.path().join(SNAPSHOT_DIR).join("0000.csv")).unwrap();
        assert_eq!(snap.lines().next().unwrap(), "theta,phi,u,u_tilde,v,H,denom,w,Psi");
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap()).unwrap();
        assert_eq!(summary["status"], "t_max_reached");
        assert!(summary["report"]["checks"].as_array().unwrap().len() >= 10);
        assert!(summary["constants"]["c12"].is_number());
    }
}
