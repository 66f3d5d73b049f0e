//! Deliberately corrupted trajectories for exercising the monitors.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::flow::{FlowError, Trajectory};
use crate::monitors::{convergence_report, CheckName, MonitorConfig, MonitorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// Constant shift of `phi`.
    Uniform,
    /// `cos(pi theta / theta_max)` minus its area mean.
    LowMode,
    /// Node-to-node alternation tapered by `sin^2(pi theta / theta_max)`.
    Nyquist,
}

pub fn shape_values(traj: &Trajectory, shape: Shape) -> Vec<f64> {
    let g = &traj.grid;
    let tm = g.theta_max();
    match shape {
        Shape::Uniform => vec![1.0; g.cells()],
        Shape::LowMode => {
            let m = g.sample(|t| (PI * t / tm).cos());
            let mean = g.integrate(|j| m[j]) / g.base_area();
            m.iter().map(|x| x - mean).collect()
        }
        Shape::Nyquist => g
            .nodes()
            .iter()
            .enumerate()
            .map(|(j, t)| if j % 2 == 0 { 1.0 } else { -1.0 } * (PI * t / tm).sin().powi(2))
            .collect(),
    }
}

/// Copy of `traj` with `amplitude * shape` added to snapshot `idx`.
pub fn perturb(traj: &Trajectory, idx: usize, shape: Shape, amplitude: f64) -> Result<Trajectory, FlowError> {
    let d = shape_values(traj, shape);
    let phi = traj.snapshots[idx].phi.iter().zip(&d).map(|(p, x)| p + amplitude * x).collect();
    let mut out = traj.clone();
    out.replace_phi(idx, phi)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub amplitude: f64,
    pub failed: Vec<CheckName>,
}

/// Grows the corruption geometrically (factor 1.25 from 1e-13) and returns the
/// first amplitude at which the report fails, with the failing checks.
///
/// `sign` picks the direction of the perturbation. Returns `None` if nothing
/// fails below amplitude 1.
pub fn first_failure(
    traj: &Trajectory,
    idx: usize,
    shape: Shape,
    sign: f64,
    cfg: &MonitorConfig,
) -> Result<Option<Detection>, MonitorError> {
    let mut a = 1e-13;
    while a < 1.0 {
        let bad = perturb(traj, idx, shape, sign * a)?;
        let rep = convergence_report(&bad, cfg)?;
        if !rep.pass {
            return Ok(Some(Detection { amplitude: a, failed: rep.failed() }));
        }
        a *= 1.25;
    }
    Ok(None)
}
