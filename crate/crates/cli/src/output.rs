//! Artifact writers. Every float is written with 17 significant digits so
//! reruns can be compared byte for byte.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use cglblow_core::simulator::SimulationTrace;
use cglblow_core::verify::PlotSeries;

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn trace_header(trace: &SimulationTrace) -> Vec<String> {
    let first = &trace.records[0];
    let nm = first.hat.len();
    let mut h: Vec<String> = ["s", "b", "theta", "bprime", "thetaprime"].iter().map(|s| s.to_string()).collect();
    h.extend((0..nm).map(|n| format!("qhat{n}")));
    h.extend((0..nm).map(|n| format!("qcheck{n}")));
    h.extend(["norm_minus_hat", "norm_minus_check"].iter().map(|s| s.to_string()));
    h.extend(first.report.components().map(|(c, _)| format!("margin_{}", c.to_string().replace('-', "_"))));
    h.extend(["deviation", "constraint_residual", "ds", "newton_iterations"].iter().map(|s| s.to_string()));
    h
}

/// One row per accepted step.
pub fn write_trace_csv(path: &Path, trace: &SimulationTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(trace_header(trace))?;
    for r in &trace.records {
        let st = &r.state;
        let mut row: Vec<String> = [st.s, st.b, st.theta, st.bprime, st.thetaprime].iter().map(|v| num(*v)).collect();
        row.extend(r.hat.iter().chain(&r.check).map(|v| num(*v)));
        row.push(num(r.norm_minus_hat));
        row.push(num(r.norm_minus_check));
        row.extend(r.report.components().map(|(_, m)| num(m)));
        row.push(num(r.deviation));
        row.push(num(r.constraint_residual));
        row.push(num(r.ds));
        row.push(r.newton_iterations.to_string());
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Two-column CSV for one figure.
pub fn write_plot(dir: &Path, series: &PlotSeries) -> Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.csv", series.name));
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record([series.x_label.as_str(), series.y_label.as_str()])?;
    for (x, y) in &series.points {
        w.write_record([num(*x), num(*y)])?;
    }
    w.flush()?;
    Ok(())
}

/// Deviation from the profile and the largest margin against `s`.
pub fn trace_plots(trace: &SimulationTrace) -> Vec<PlotSeries> {
    let pts = |f: &dyn Fn(&cglblow_core::simulator::StepRecord) -> f64| -> Vec<(f64, f64)> {
        trace.records.iter().map(|r| (r.state.s, f(r))).collect()
    };
    vec![
        PlotSeries { name: "deviation".into(), x_label: "s".into(), y_label: "sup|w - f_b|".into(), points: pts(&|r| r.deviation) },
        PlotSeries {
            name: "max_margin".into(),
            x_label: "s".into(),
            y_label: "largest margin".into(),
            points: pts(&|r| r.report.max_margin()),
        },
    ]
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
