//! Run configuration read from JSON.
//!
//! ```json
//! {
//!   "instance": { "n": 2, "b_true": 1.5, "seed": 7 },
//!   "solver": "alm",
//!   "schedule": "auto",
//!   "k": 10000
//! }
//! ```
//!
//! `instance` is either an inline market config or the path of an instance
//! file written by `mvi generate`. `schedule` is `"auto"` or explicit step
//! sizes for the chosen solver.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use mvi::cournot::{generate, CournotConfig, CournotInstance};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SolverTag {
    Alm,
    Tikhonov,
    Eg,
}

impl SolverTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Alm => "alm",
            Self::Tikhonov => "tikhonov",
            Self::Eg => "eg",
        }
    }
}

/// Explicit step sizes. Fields a solver does not use must be left out.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitSchedule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleSpec {
    Auto,
    Explicit(ExplicitSchedule),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InstanceSpec {
    Inline(CournotConfig),
    File(PathBuf),
}

/// Overrides for the gap oracle used in trace rows.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_bound_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub instance: InstanceSpec,
    pub solver: SolverTag,
    pub schedule: ScheduleSpec,
    /// Penalty requested before clipping (`auto` ALM schedules only).
    pub rho: f64,
    pub k: usize,
    pub trace_every: Option<usize>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub x0: Option<Vec<f64>>,
    pub theta0: Option<Vec<f64>>,
    pub gap: GapSettings,
    pub timing: bool,
    /// Directory relative paths in the config are resolved against.
    pub base_dir: PathBuf,
}

pub const DEFAULT_K: usize = 100_000;
pub const DEFAULT_RHO: f64 = 1.0;

const KNOWN_KEYS: &[&str] = &[
    "instance",
    "solver",
    "schedule",
    "rho",
    "k",
    "trace_every",
    "output_dir",
    "seed",
    "x0",
    "theta0",
    "gap",
    "timing",
];

fn field<T: serde::de::DeserializeOwned>(name: &str, v: &Value) -> Result<T, CliError> {
    serde_json::from_value(v.clone()).map_err(|e| CliError::Config(format!("{name}: {e}")))
}

impl RunConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let root: Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
        let Value::Object(map) = &root else {
            return Err(CliError::Config("run config must be a JSON object".into()));
        };
        if let Some(key) = map.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(CliError::Config(format!("{key}: unknown field")));
        }

        let instance = match map.get("instance") {
            None => return Err(CliError::Config("instance: missing field".into())),
            Some(Value::String(p)) => InstanceSpec::File(PathBuf::from(p)),
            Some(v @ Value::Object(_)) => {
                let cfg: CournotConfig = field("instance", v)?;
                InstanceSpec::Inline(cfg)
            }
            Some(_) => {
                return Err(CliError::Config(
                    "instance: expected an object or a file path".into(),
                ))
            }
        };
        let solver = match map.get("solver") {
            None => SolverTag::Alm,
            Some(v) => field("solver", v)?,
        };
        let schedule = match map.get("schedule") {
            None => ScheduleSpec::Auto,
            Some(Value::String(s)) if s == "auto" => ScheduleSpec::Auto,
            Some(v @ Value::Object(_)) => ScheduleSpec::Explicit(field("schedule", v)?),
            Some(_) => {
                return Err(CliError::Config(
                    "schedule: expected \"auto\" or an object of step sizes".into(),
                ))
            }
        };
        let opt = |name: &str| map.get(name).filter(|v| !v.is_null());
        let cfg = Self {
            instance,
            solver,
            schedule,
            rho: opt("rho").map(|v| field("rho", v)).transpose()?.unwrap_or(DEFAULT_RHO),
            k: opt("k").map(|v| field("k", v)).transpose()?.unwrap_or(DEFAULT_K),
            trace_every: opt("trace_every").map(|v| field("trace_every", v)).transpose()?,
            output_dir: opt("output_dir")
                .map(|v| field::<PathBuf>("output_dir", v))
                .transpose()?
                .unwrap_or_else(|| PathBuf::from(".")),
            seed: opt("seed").map(|v| field("seed", v)).transpose()?.unwrap_or(0),
            x0: opt("x0").map(|v| field("x0", v)).transpose()?,
            theta0: opt("theta0").map(|v| field("theta0", v)).transpose()?,
            gap: opt("gap").map(|v| field("gap", v)).transpose()?.unwrap_or_default(),
            timing: opt("timing").map(|v| field("timing", v)).transpose()?.unwrap_or(false),
            base_dir: base_dir.to_path_buf(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.k == 0 {
            return Err(CliError::Config("k: must be at least 1".into()));
        }
        if self.trace_every == Some(0) {
            return Err(CliError::Config("trace_every: must be at least 1".into()));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(CliError::Config("rho: must be positive".into()));
        }
        if let ScheduleSpec::Explicit(s) = &self.schedule {
            let (needed, forbidden): (&[&str], &[&str]) = match self.solver {
                SolverTag::Alm => (&["gamma", "rho", "eta"], &["eps0", "decay"]),
                SolverTag::Eg => (&["gamma", "eta"], &["rho", "eps0", "decay"]),
                SolverTag::Tikhonov => (&["gamma", "eta"], &["rho"]),
            };
            let get = |name: &str| match name {
                "gamma" => s.gamma,
                "rho" => s.rho,
                "eta" => s.eta,
                "eps0" => s.eps0,
                _ => s.decay,
            };
            for name in needed {
                if get(name).is_none() {
                    return Err(CliError::Config(format!(
                        "schedule.{name}: required for solver {}",
                        self.solver.as_str()
                    )));
                }
            }
            for name in forbidden {
                if get(name).is_some() {
                    return Err(CliError::Config(format!(
                        "schedule.{name}: not used by solver {}",
                        self.solver.as_str()
                    )));
                }
            }
        }
        if let InstanceSpec::Inline(c) = &self.instance {
            c.validate().map_err(CliError::instance)?;
        }
        Ok(())
    }

    /// `trace_every` or its default `max(1, k / 1000)`.
    pub fn trace_every(&self) -> usize {
        self.trace_every.unwrap_or((self.k / 1000).max(1))
    }

    pub fn resolve_instance(&self) -> Result<CournotInstance, CliError> {
        match &self.instance {
            InstanceSpec::Inline(c) => {
                generate(c).map_err(CliError::instance)
            }
            InstanceSpec::File(p) => {
                let path = if p.is_absolute() { p.clone() } else { self.base_dir.join(p) };
                load_instance(&path)
            }
        }
    }
}

/// Reads an instance file; a bare market config is generated on the fly.
pub fn load_instance(path: &Path) -> Result<CournotInstance, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: invalid JSON: {e}", path.display())))?;
    if v.get("version").is_some() {
        let inst: CournotInstance = field("instance", &v)?;
        inst.check_loaded()
            .map_err(CliError::instance)?;
        Ok(inst)
    } else {
        let cfg: CournotConfig = field("instance", &v)?;
        generate(&cfg).map_err(CliError::instance)
    }
}
