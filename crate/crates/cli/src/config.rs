//! Run configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use coneflow_core::flow::{FlowConfig, InitialProfile, OutputCadence, RescaleChoice};
use coneflow_core::grid::CapGrid;
use coneflow_core::monitors::{CheckName, MonitorConfig};
use coneflow_core::weight::{AssumptionConstants, MonotoneCubic, WeightError, WeightKind, WeightSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Weight(#[from] WeightError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKindName {
    Power,
    Log1p,
    SigmoidExp,
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightTable {
    pub y: Vec<f64>,
    pub f: Vec<f64>,
}

/// Weight section. Power weights may omit `c1..c6`; they then get the exact
/// constants of `y^alpha` on `[c3, c4]` (default `[1/2, 2]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    pub kind: WeightKindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c4: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c5: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c6: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<WeightTable>,
}

impl WeightConfig {
    pub fn build(&self) -> Result<WeightSpec, ConfigError> {
        let kind = match self.kind {
            WeightKindName::Power => {
                let alpha = self.alpha.ok_or_else(|| ConfigError::Invalid("power weight needs alpha".into()))?;
                WeightKind::Power { alpha }
            }
            WeightKindName::Log1p => WeightKind::Log1p,
            WeightKindName::SigmoidExp => WeightKind::SigmoidExp,
            WeightKindName::Tabulated => {
                let t = self.table.as_ref().ok_or_else(|| ConfigError::Invalid("tabulated weight needs table".into()))?;
                WeightKind::Tabulated(MonotoneCubic::new(t.y.clone(), t.f.clone())?)
            }
        };
        if self.kind != WeightKindName::Power && self.alpha.is_some() {
            return Err(ConfigError::Invalid("alpha only applies to power weights".into()));
        }
        if self.kind != WeightKindName::Tabulated && self.table.is_some() {
            return Err(ConfigError::Invalid("table only applies to tabulated weights".into()));
        }
        let declared = [self.c1, self.c2, self.c3, self.c4, self.c5, self.c6];
        let constants = match (declared, &kind) {
            ([Some(c1), Some(c2), Some(c3), Some(c4), Some(c5), Some(c6)], _) => {
                AssumptionConstants { c1, c2, c3, c4, c5, c6 }
            }
            ([None, None, c3, c4, None, None], WeightKind::Power { alpha }) => {
                AssumptionConstants::for_power(*alpha, c3.unwrap_or(0.5), c4.unwrap_or(2.0))
            }
            _ => {
                return Err(ConfigError::Invalid(
                    "declare all of c1..c6 (power weights may omit c1, c2, c5, c6)".into(),
                ))
            }
        };
        Ok(WeightSpec::new(kind, constants)?)
    }

    /// Whether the constants are derived from `alpha` rather than declared.
    pub fn derives_constants(&self) -> bool {
        self.kind == WeightKindName::Power && self.c1.is_none()
    }
}

fn default_cfl() -> f64 {
    0.25
}
fn default_floor() -> f64 {
    1e-6
}
fn default_conv() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_max: Option<f64>,
    #[serde(default = "default_floor")]
    pub denom_floor: f64,
    /// Stop once `osc(u~)` drops below this; 0 disables.
    #[serde(default = "default_conv")]
    pub conv_tol: f64,
    #[serde(default = "default_rescale")]
    pub rescale_c: RescaleChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
}

fn default_rescale() -> RescaleChoice {
    RescaleChoice::Midpoint
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative paths are resolved against the config file's directory.
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cadence_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cadence_t: Option<f64>,
    /// Write every k-th output as a snapshot CSV (the first and last always).
    #[serde(default = "default_every")]
    pub snapshot_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir(), cadence_s: None, cadence_t: None, snapshot_every: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub c0: f64,
    pub gradient: f64,
    pub phidot: f64,
    pub h_theta: f64,
    pub area_rel: f64,
    pub area_sandwich: f64,
    pub psi_rel: f64,
    pub omega: f64,
    pub r_inf: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let m = MonitorConfig::default();
        Self {
            c0: m.c0_tol,
            gradient: m.gradient_tol,
            phidot: m.phidot_tol,
            h_theta: m.h_theta_tol,
            area_rel: m.area_rel_tol,
            area_sandwich: m.area_sandwich_tol,
            psi_rel: m.psi_rel_tol,
            omega: m.omega_tol,
            r_inf: m.r_inf_tol,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorSection {
    pub tolerances: Tolerances,
    /// Checks evaluated during the run; a failure stops it.
    pub fatal: Vec<CheckName>,
}

impl MonitorSection {
    pub fn build(&self) -> MonitorConfig {
        let t = &self.tolerances;
        MonitorConfig {
            c0_tol: t.c0,
            gradient_tol: t.gradient,
            phidot_tol: t.phidot,
            h_theta_tol: t.h_theta,
            area_rel_tol: t.area_rel,
            area_sandwich_tol: t.area_sandwich,
            psi_rel_tol: t.psi_rel,
            omega_tol: t.omega,
            r_inf_tol: t.r_inf,
            fatal: self.fatal.clone(),
        }
    }
}

/// Parameter lists for `sweep`; runs cover the Cartesian product.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub alpha: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub eps: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub r0: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub cells: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub theta_max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub n: usize,
    pub theta_max: f64,
    pub cells: usize,
    pub weight: WeightConfig,
    pub initial: InitialProfile,
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub monitors: MonitorSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepAxes>,
}

/// Everything a single run needs, checked for consistency.
#[derive(Debug, Clone)]
pub struct Plan {
    pub flow: FlowConfig,
    pub monitors: MonitorConfig,
    pub snapshot_every: usize,
}

impl RunConfigFile {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_json(&text)
    }

    /// Output directory, relative paths taken from `base` (the config's folder).
    pub fn output_dir(&self, base: &Path) -> PathBuf {
        if self.output.dir.is_absolute() {
            self.output.dir.clone()
        } else {
            base.join(&self.output.dir)
        }
    }

    pub fn plan(&self) -> Result<Plan, ConfigError> {
        CapGrid::new(self.n, self.theta_max, self.cells).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let weight = self.weight.build()?;
        let s = &self.solver;
        if s.t_max.is_none() && s.s_max.is_none() {
            return Err(ConfigError::Invalid("solver needs t_max, s_max or both".into()));
        }
        let cadence = match (self.output.cadence_s, self.output.cadence_t) {
            (Some(_), Some(_)) => return Err(ConfigError::Invalid("give cadence_s or cadence_t, not both".into())),
            (Some(ds), None) => OutputCadence::Rescaled(ds),
            (None, Some(dt)) => OutputCadence::Physical(dt),
            (None, None) => OutputCadence::Rescaled(0.05),
        };
        if self.output.snapshot_every == 0 {
            return Err(ConfigError::Invalid("snapshot_every must be at least 1".into()));
        }
        let mut flow = FlowConfig::new(self.n, self.theta_max, self.cells, weight, self.initial.clone());
        flow.cfl = s.cfl;
        flow.t_max = s.t_max;
        flow.s_max = s.s_max;
        flow.denom_floor = s.denom_floor;
        flow.conv_tol = s.conv_tol;
        flow.rescale = s.rescale_c;
        flow.cadence = cadence;
        if let Some(m) = s.max_steps {
            flow.max_steps = m;
        }
        flow.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(Plan { flow, monitors: self.monitors.build(), snapshot_every: self.output.snapshot_every })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "n": 2, "theta_max": 1.0471975511965976, "cells": 64,
        "weight": {"kind": "power", "alpha": 1.0},
        "initial": {"kind": "cosine", "r0": 1.0, "eps": 0.05},
        "solver": {"s_max": 2.0}
    }"#;

    fn with(edit: impl Fn(&mut serde_json::Value)) -> Result<RunConfigFile, ConfigError> {
        let mut v: serde_json::Value = serde_json::from_str(BASE).unwrap();
        edit(&mut v);
        RunConfigFile::from_json(&v.to_string())
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfigFile::from_json(BASE).unwrap();
        let plan = cfg.plan().unwrap();
        assert_eq!(plan.flow.cfl, 0.25);
        assert_eq!(plan.flow.cadence, OutputCadence::Rescaled(0.05));
        assert_eq!(plan.flow.rescale, RescaleChoice::Midpoint);
        assert_eq!(plan.flow.weight.constants(), &AssumptionConstants::for_power(1.0, 0.5, 2.0));
        assert_eq!(plan.monitors, MonitorConfig::default());
    }

    #[test]
    fn rescale_choice_forms() {
        for (text, want) in [
            (serde_json::json!("inf"), RescaleChoice::Inf),
            (serde_json::json!("sup"), RescaleChoice::Sup),
            (serde_json::json!(0.25), RescaleChoice::Value(0.25)),
        ] {
            let cfg = with(|v| v["solver"]["rescale_c"] = text.clone()).unwrap();
            assert_eq!(cfg.solver.rescale_c, want);
        }
        assert!(with(|v| v["solver"]["rescale_c"] = serde_json::json!("middle")).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(with(|v| v["extra"] = 1.into()), Err(ConfigError::Parse(_))));
        assert!(matches!(with(|v| v["solver"]["cfll"] = 1.into()), Err(ConfigError::Parse(_))));
        assert!(matches!(with(|v| v["weight"]["beta"] = 1.into()), Err(ConfigError::Parse(_))));
        assert!(matches!(with(|v| v["monitors"] = serde_json::json!({"tolerances": {"c9": 1}})), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        let wide = with(|v| v["theta_max"] = 1.6.into()).unwrap();
        assert!(matches!(wide.plan(), Err(ConfigError::Invalid(m)) if m.contains("convex")));
        let open = with(|v| v["solver"] = serde_json::json!({})).unwrap();
        assert!(open.plan().is_err());
        let both = with(|v| {
            v["output"] = serde_json::json!({"cadence_s": 0.1, "cadence_t": 0.1});
        })
        .unwrap();
        assert!(both.plan().is_err());
        let partial = with(|v| v["weight"] = serde_json::json!({"kind": "log1p", "c1": 0.85})).unwrap();
        assert!(partial.plan().is_err());
    }

    #[test]
    fn declared_constants_are_kept() {
        let cfg = with(|v| {
            v["weight"] = serde_json::json!({"kind": "sigmoid_exp", "c1": 1.0, "c2": 1.28, "c3": 0.5, "c4": 2.0, "c5": 0.414, "c6": 2.415});
        })
        .unwrap();
        let w = cfg.plan().unwrap().flow.weight;
        assert_eq!(w.constants().c6, 2.415);
        assert!(!cfg.weight.derives_constants());
    }

    #[test]
    fn echo_round_trips() {
        let cfg = with(|v| v["sweep"] = serde_json::json!({"alpha": [0.0, 1.0]})).unwrap();
        let again = RunConfigFile::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again);
    }
}
