//! Run configuration: a TOML file, dotted `--set` overrides, and
//! field-level validation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use cglblow_core::shooting::SweepConfig;
use cglblow_core::simulator::{MeshConfig, SolverConfig, StopRule};
use cglblow_core::Parameters;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Sweep,
    VerifySpectral,
    VerifySemigroup,
    VerifyRhs,
    VerifyModulation,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Simulate => "simulate",
            Mode::Sweep => "sweep",
            Mode::VerifySpectral => "verify-spectral",
            Mode::VerifySemigroup => "verify-semigroup",
            Mode::VerifyRhs => "verify-rhs",
            Mode::VerifyModulation => "verify-modulation",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsSection {
    pub p: f64,
    pub delta: f64,
    pub k: u32,
    pub b0: f64,
    pub theta0: f64,
    pub gamma: f64,
    pub big_a: f64,
}

impl Default for ParamsSection {
    fn default() -> Self {
        let d = Parameters::default();
        Self { p: d.p, delta: d.delta, k: d.k, b0: d.b0, theta0: d.theta0, gamma: d.gamma, big_a: d.big_a }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    /// Half-width `Y`; the solver picks one from `p` and `b0` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    pub nodes: usize,
    pub focus: f64,
}

impl Default for MeshSection {
    fn default() -> Self {
        let d = MeshConfig::default();
        Self { half_width: d.half_width, nodes: d.nodes, focus: d.focus }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub s0: f64,
    pub s_max: f64,
    pub ds_init: f64,
    pub ds_min: f64,
}

impl Default for TimeSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self { s0: d.s0, s_max: d.s_max, ds_init: d.ds_init, ds_min: d.ds_min }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Unstable coefficients of the initial data; empty means all zero.
    pub dhat: Vec<f64>,
    /// Correct `dhat` toward a trajectory that stays in the set.
    pub refine: bool,
    pub stop: StopRule,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { dhat: Vec::new(), refine: true, stop: StopRule::AtExit }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub points_per_axis: usize,
    pub range: f64,
    pub refine: bool,
    pub refine_max_iter: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        let d = SweepConfig::default();
        Self { points_per_axis: d.points_per_axis, range: d.range, refine: d.refine, refine_max_iter: d.refine_max_iter }
    }
}

/// Names accepted in the `[tolerances]` table with their defaults.
pub const TOLERANCES: [(&str, f64); 4] = [
    ("constraint", 1e-10),
    ("defect", 1e-3),
    ("refine_eval_margin", 0.25),
    ("refine_final_margin", 1e-3),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub params: ParamsSection,
    pub mesh: MeshSection,
    pub time: TimeSection,
    pub tolerances: BTreeMap<String, f64>,
    pub simulate: SimulateSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: None,
            seed: 7,
            output_dir: None,
            params: ParamsSection::default(),
            mesh: MeshSection::default(),
            time: TimeSection::default(),
            tolerances: BTreeMap::new(),
            simulate: SimulateSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

/// One rejected field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn field_err(field: impl Into<String>, message: impl Into<String>) -> FieldError {
    FieldError { field: field.into(), message: message.into() }
}

/// Reads `path`, applies `key=value` overrides and deserializes.
pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig, Vec<FieldError>> {
    let text = std::fs::read_to_string(path).map_err(|e| vec![field_err("config", format!("{}: {e}", path.display()))])?;
    parse(&text, overrides)
}

pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig, Vec<FieldError>> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| vec![field_err("config", e.message().to_string())])?;
    let mut errors = Vec::new();
    for o in overrides {
        if let Err(e) = apply_override(&mut table, o) {
            errors.push(e);
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    toml::Value::Table(table).try_into::<RunConfig>().map_err(|e| vec![field_err("config", e.message().trim().to_string())])
}

/// `a.b.c=value`; the value is read as a TOML literal and falls back to a
/// bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), FieldError> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| field_err(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let path: Vec<&str> = key.split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(field_err(key, "empty path segment"));
    }
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let mut cur = table;
    for seg in &path[..path.len() - 1] {
        let entry = cur.entry(seg.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| field_err(key, format!("`{seg}` is not a table")))?;
    }
    cur.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn tolerance(&self, name: &str) -> f64 {
        self.tolerances
            .get(name)
            .copied()
            .or_else(|| TOLERANCES.iter().find(|t| t.0 == name).map(|t| t.1))
            .unwrap_or_else(|| panic!("unknown tolerance {name}"))
    }

    pub fn parameters(&self) -> Parameters {
        let p = &self.params;
        Parameters { p: p.p, delta: p.delta, k: p.k, b0: p.b0, theta0: p.theta0, gamma: p.gamma, big_a: p.big_a }
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            mesh: MeshConfig { half_width: self.mesh.half_width, nodes: self.mesh.nodes, focus: self.mesh.focus },
            s0: self.time.s0,
            s_max: self.time.s_max,
            ds_init: self.time.ds_init,
            ds_min: self.time.ds_min,
            tol_constraint: self.tolerance("constraint"),
            defect_tol: self.tolerance("defect"),
            ..SolverConfig::default()
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            points_per_axis: self.sweep.points_per_axis,
            range: self.sweep.range,
            refine: self.sweep.refine,
            refine_max_iter: self.sweep.refine_max_iter,
            refine_eval_margin: self.tolerance("refine_eval_margin"),
            refine_final_margin: self.tolerance("refine_final_margin"),
        }
    }

    /// `dhat` of the simulate section, zero-filled when empty.
    pub fn dhat(&self) -> Vec<f64> {
        if self.simulate.dhat.is_empty() {
            vec![0.0; 2 * self.params.k as usize]
        } else {
            self.simulate.dhat.clone()
        }
    }

    /// Every violated invariant, one entry per field.
    pub fn validate(&self) -> Vec<FieldError> {
        let mut errs = Vec::new();
        match &self.output_dir {
            None => errs.push(field_err("output_dir", "missing; set it in the file or with --set output_dir=<path>")),
            Some(d) if d.as_os_str().is_empty() => errs.push(field_err("output_dir", "must not be empty")),
            Some(_) => {}
        }
        if self.mode.is_none() {
            errs.push(field_err("mode", "missing"));
        }
        if let Err(cglblow_core::Error::InvalidParameter { name, reason }) = self.parameters().validate() {
            errs.push(field_err(format!("params.{name}"), reason));
        }
        if self.mesh.nodes < 256 {
            errs.push(field_err("mesh.nodes", format!("need at least 256, got {}", self.mesh.nodes)));
        }
        if !(self.mesh.focus > 0.0) {
            errs.push(field_err("mesh.focus", "must be positive"));
        }
        if let Some(h) = self.mesh.half_width {
            if !(h > 0.0 && h.is_finite()) {
                errs.push(field_err("mesh.half_width", "must be positive"));
            }
        }
        let t = &self.time;
        if !(t.s0.is_finite() && t.s_max.is_finite() && t.s_max > t.s0) {
            errs.push(field_err("time.s_max", format!("must exceed s0 = {}", t.s0)));
        }
        if !(t.ds_init > 0.0) {
            errs.push(field_err("time.ds_init", "must be positive"));
        }
        if !(t.ds_min > 0.0 && t.ds_min <= t.ds_init) {
            errs.push(field_err("time.ds_min", "need 0 < ds_min <= ds_init"));
        }
        for (name, v) in &self.tolerances {
            if !TOLERANCES.iter().any(|t| t.0 == name) {
                let known: Vec<&str> = TOLERANCES.iter().map(|t| t.0).collect();
                errs.push(field_err(format!("tolerances.{name}"), format!("unknown; expected one of {known:?}")));
            } else if !(*v > 0.0 && v.is_finite()) {
                errs.push(field_err(format!("tolerances.{name}"), format!("must be positive, got {v}")));
            }
        }
        let two_k = 2 * self.params.k as usize;
        if !self.simulate.dhat.is_empty() && self.simulate.dhat.len() != two_k {
            errs.push(field_err("simulate.dhat", format!("expected {two_k} entries, got {}", self.simulate.dhat.len())));
        }
        if self.simulate.dhat.iter().any(|d| !(d.abs() <= 2.0)) {
            errs.push(field_err("simulate.dhat", "entries must lie in [-2, 2]"));
        }
        if self.sweep.points_per_axis == 0 {
            errs.push(field_err("sweep.points_per_axis", "must be positive"));
        }
        if !(self.sweep.range > 0.0 && self.sweep.range <= 2.0) {
            errs.push(field_err("sweep.range", "must lie in (0, 2]"));
        }
        errs
    }
}
