//! Dispatch of one run to its suite and assembly of the summary document.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cglblow_core::shooting::{refine_survivor, shooting_sweep};
use cglblow_core::simulator::{extract_rates, simulate, SimulationTrace};
use cglblow_core::verify::{self, Criterion, SuiteReport};
use serde_json::{json, Map, Value};

use crate::config::{Mode, RunConfig};
use crate::output::{trace_plots, write_json, write_plot, write_trace_csv};

/// Version of the summary layout.
pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub passed: bool,
    pub summary: PathBuf,
    pub criteria: Vec<Criterion>,
}

/// Runs `cfg`, which must already validate.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    let mode = cfg.mode.context("mode is not set")?;
    let dir = cfg.output_dir.clone().context("output_dir is not set")?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let params = cfg.parameters();
    let mut extra = Map::new();
    let report = match mode {
        Mode::VerifySpectral => {
            let r = verify::spectral_suite(&params)?;
            extra.insert("orthogonality_max_error".into(), json!(r.criteria[0].measured));
            r
        }
        Mode::VerifySemigroup => verify::semigroup_suite(&params, cfg.seed)?,
        Mode::VerifyRhs => verify::rhs_suite(&params, cfg.time.s0, cfg.seed)?,
        Mode::VerifyModulation => verify::modulation_suite(&params, cfg.time.s0, cfg.seed)?,
        Mode::Simulate => simulate_mode(cfg, &dir, &mut extra)?,
        Mode::Sweep => sweep_mode(cfg, &dir, &mut extra)?,
    };
    for p in &report.plots {
        write_plot(&dir.join("plots"), p)?;
    }
    let passed = report.passed();
    let summary = summary_json(cfg, mode, &report, extra);
    let path = dir.join("summary.json");
    write_json(&path, &summary)?;
    Ok(RunOutcome { passed, summary: path, criteria: report.all().cloned().collect() })
}

fn summary_json(cfg: &RunConfig, mode: Mode, report: &SuiteReport, extra: Map<String, Value>) -> Value {
    let mut criteria = Map::new();
    let mut details = Map::new();
    for c in report.all() {
        criteria.insert(c.key.clone(), json!(c.pass));
        details.insert(c.key.clone(), json!({ "measured": c.measured, "threshold": c.threshold, "detail": c.detail }));
    }
    let mut out = Map::new();
    out.insert("schema".into(), json!(SCHEMA));
    out.insert("mode".into(), json!(mode.to_string()));
    out.insert("passed".into(), json!(report.passed()));
    out.insert("criteria".into(), Value::Object(criteria));
    out.insert("measurements".into(), Value::Object(details));
    out.extend(extra);
    out.insert("config".into(), serde_json::to_value(cfg).expect("config serializes"));
    Value::Object(out)
}

fn trace_criteria(trace: &SimulationTrace, report: &mut SuiteReport, extra: &mut Map<String, Value>) -> Result<()> {
    if trace.in_set().len() >= 3 {
        report.criteria.extend(verify::run_criteria(trace)?);
    }
    if let Ok(r) = extract_rates(trace, verify::PROFILE_TRANSIENT) {
        extra.insert("rates".into(), serde_json::to_value(r)?);
    }
    extra.insert(
        "trajectory".into(),
        json!({
            "dhat": trace.dhat,
            "survived": trace.survived(),
            "survival_time": trace.survival_time(),
            "exit": trace.exit,
            "steps": trace.records.len(),
        }),
    );
    Ok(())
}

fn simulate_mode(cfg: &RunConfig, dir: &Path, extra: &mut Map<String, Value>) -> Result<SuiteReport> {
    let params = cfg.parameters();
    let solver = cfg.solver();
    let dhat = cfg.dhat();
    let trace = if cfg.simulate.refine {
        let r = refine_survivor(&params, &solver, &dhat, &cfg.sweep_config())?;
        extra.insert("refinement".into(), json!({ "iterations": r.iterations, "converged": r.converged, "history": r.history }));
        r.trace
    } else {
        simulate(&params, &solver, &dhat, cfg.simulate.stop)?
    };
    write_trace_csv(&dir.join("trace.csv"), &trace)?;
    let mut report = SuiteReport { suite: "simulate".into(), plots: trace_plots(&trace), ..SuiteReport::default() };
    trace_criteria(&trace, &mut report, extra)?;
    Ok(report)
}

fn sweep_mode(cfg: &RunConfig, dir: &Path, extra: &mut Map<String, Value>) -> Result<SuiteReport> {
    let params = cfg.parameters();
    let sweep = shooting_sweep(&params, &cfg.solver(), &cfg.sweep_config())?;
    let traces = dir.join("traces");
    fs::create_dir_all(&traces)?;
    let width = sweep.cells.len().saturating_sub(1).to_string().len();
    let mut cells = Vec::new();
    for c in &sweep.cells {
        write_trace_csv(&traces.join(format!("cell_{:0width$}.csv", c.index)), &c.trace)?;
        cells.push(json!({
            "index": c.index,
            "dhat": c.dhat,
            "on_boundary": c.on_boundary,
            "survived": c.trace.survived(),
            "exit_s": c.trace.exit.map(|e| e.s),
            "exit_mode": c.trace.exit.map(|e| e.component.to_string()),
            "exit_sign": c.trace.exit.map(|e| e.sign),
            "outward": c.trace.exit.map(|e| e.outward),
        }));
    }
    extra.insert("cells".into(), Value::Array(cells));
    extra.insert(
        "sweep".into(),
        json!({
            "hat_exit_fraction": sweep.hat_exit_fraction,
            "outward_fraction": sweep.outward_fraction,
            "grid_survivors": sweep.grid_survivors,
            "boundary_exits_at_s0": sweep.boundary_exits_at_s0,
            "longest_cell": sweep.longest_cell,
        }),
    );
    let mut report = SuiteReport { suite: "sweep".into(), ..SuiteReport::default() };
    report.criteria.push(verify::sweep_criterion(&sweep));
    if let Some(r) = &sweep.refined {
        write_trace_csv(&dir.join("refined_trace.csv"), &r.trace)?;
        extra.insert(
            "refinement".into(),
            json!({ "dhat": r.dhat, "iterations": r.iterations, "converged": r.converged, "history": r.history }),
        );
        report.plots.extend(trace_plots(&r.trace));
        trace_criteria(&r.trace, &mut report, extra)?;
    }
    Ok(report)
}
