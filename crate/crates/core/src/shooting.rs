//! Shooting over the unstable coefficients `dhat`.
//!
//! A grid sweep classifies how each trajectory leaves the shrinking set.
//! A corrector iteration then tunes `dhat` toward the stable manifold so
//! that one trajectory stays inside up to `s_max`, and one-coordinate
//! bisection around it measures the instability rates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::fit_line;
use crate::model::scaling_factor;
use crate::params::Parameters;
use crate::simulator::{simulate, SetComponent, SimulationTrace, SolverConfig, StopRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub points_per_axis: usize,
    /// Half-width of the cube of `dhat` values.
    pub range: f64,
    pub refine: bool,
    pub refine_max_iter: usize,
    /// Hat margin at which a trajectory is sampled for the corrector.
    pub refine_eval_margin: f64,
    /// Largest unstable hat margin accepted at `s_max`.
    pub refine_final_margin: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { points_per_axis: 3, range: 1.0, refine: true, refine_max_iter: 20, refine_eval_margin: 0.25, refine_final_margin: 1e-3 }
    }
}

/// All points of the tensor grid, first coordinate varying slowest.
pub fn sweep_grid(points: usize, range: f64, dim: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = if points == 1 {
        vec![0.0]
    } else {
        (0..points).map(|i| -range + 2.0 * range * i as f64 / (points - 1) as f64).collect()
    };
    let total = points.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            let mut d = vec![0.0; dim];
            for slot in d.iter_mut().rev() {
                *slot = axis[idx % points];
                idx /= points;
            }
            d
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub index: usize,
    pub dhat: Vec<f64>,
    /// Some coordinate sits on the boundary of the cube `[-range, range]`.
    pub on_boundary: bool,
    pub trace: SimulationTrace,
}

impl CellResult {
    pub fn survival_time(&self) -> f64 {
        self.trace.survival_time()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementResult {
    pub dhat: Vec<f64>,
    pub trace: SimulationTrace,
    pub iterations: usize,
    /// The unstable margins at `s_max` met `refine_final_margin`.
    pub converged: bool,
    /// `(dhat, survival time)` for every trajectory tried.
    pub history: Vec<(Vec<f64>, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<CellResult>,
    pub refined: Option<RefinementResult>,
    /// Fraction of exits through hat modes `0..2k`.
    pub hat_exit_fraction: f64,
    /// Fraction of exits with an outward derivative.
    pub outward_fraction: f64,
    /// Grid cells that stayed inside up to `s_max`.
    pub grid_survivors: usize,
    /// Every boundary cell left the set at `s0`, within one step.
    pub boundary_exits_at_s0: bool,
    /// Index of the cell with the longest survival.
    pub longest_cell: usize,
}

impl SweepReport {
    pub fn survivors(&self) -> usize {
        self.grid_survivors + self.refined.as_ref().map_or(0, |r| usize::from(r.trace.survived()))
    }
}

/// Runs every grid cell, then optionally refines from the longest-lived one.
pub fn shooting_sweep(params: &Parameters, solver: &SolverConfig, cfg: &SweepConfig) -> Result<SweepReport> {
    if cfg.points_per_axis == 0 || !(cfg.range > 0.0 && cfg.range <= 2.0) {
        return Err(Error::InvalidParameter { name: "sweep", reason: "need points_per_axis >= 1 and 0 < range <= 2".into() });
    }
    let two_k = params.two_k();
    let grid = sweep_grid(cfg.points_per_axis, cfg.range, two_k);
    let cells: Vec<CellResult> = grid
        .into_par_iter()
        .enumerate()
        .map(|(index, dhat)| {
            let trace = simulate(params, solver, &dhat, StopRule::AtExit)?;
            let on_boundary = dhat.iter().any(|d| (d.abs() - cfg.range).abs() < 1e-12);
            Ok(CellResult { index, dhat, on_boundary, trace })
        })
        .collect::<Result<_>>()?;

    let exits: Vec<_> = cells.iter().filter_map(|c| c.trace.exit).collect();
    let frac = |f: &dyn Fn(&crate::simulator::ExitEvent) -> bool| {
        if exits.is_empty() {
            1.0
        } else {
            exits.iter().filter(|e| f(e)).count() as f64 / exits.len() as f64
        }
    };
    let hat_exit_fraction = frac(&|e| matches!(e.component, SetComponent::Hat(j) if j < two_k));
    let outward_fraction = frac(&|e| e.outward);
    let grid_survivors = cells.iter().filter(|c| c.trace.survived()).count();
    let boundary_exits_at_s0 = cells.iter().filter(|c| c.on_boundary).all(|c| {
        c.trace.exit.is_some_and(|e| {
            let first = c.trace.records.get(1).map_or(0.0, |r| r.ds);
            e.s - solver.s0 <= first + 1e-12
        })
    });
    let longest_cell = cells
        .iter()
        .max_by(|a, b| a.survival_time().total_cmp(&b.survival_time()))
        .map_or(0, |c| c.index);
    let refined = if cfg.refine && grid_survivors == 0 {
        Some(refine_survivor(params, solver, &cells[longest_cell].dhat, cfg)?)
    } else {
        None
    };
    Ok(SweepReport { cells, refined, hat_exit_fraction, outward_fraction, grid_survivors, boundary_exits_at_s0, longest_cell })
}

/// Corrector toward the stable manifold: each unstable coordinate is
/// reduced by its observed value transported back to `s0` along its linear
/// growth `e^{(1 - j/2k)(s - s0)}`.
pub fn refine_survivor(params: &Parameters, solver: &SolverConfig, start: &[f64], cfg: &SweepConfig) -> Result<RefinementResult> {
    let two_k = params.two_k();
    let amp0 = scaling_factor(solver.s0, params.k).powf(params.gamma);
    let mut dhat = start.to_vec();
    let mut history = Vec::new();
    let mut best: Option<(f64, Vec<f64>, SimulationTrace, usize)> = None;
    for it in 0..=cfg.refine_max_iter {
        let trace = simulate(params, solver, &dhat, StopRule::AtExit)?;
        history.push((dhat.clone(), trace.survival_time()));
        if trace.survived() {
            let final_margin = unstable_margin(&trace, two_k, trace.records.len() - 1);
            if final_margin <= cfg.refine_final_margin {
                return Ok(RefinementResult { dhat, trace, iterations: it, converged: true, history });
            }
            if best.as_ref().map_or(true, |b| final_margin < b.0) {
                best = Some((final_margin, dhat.clone(), trace.clone(), it));
            }
        }
        if it == cfg.refine_max_iter {
            break;
        }
        let recs = &trace.records[..trace.exit.map_or(trace.records.len(), |e| e.record.max(1))];
        let probe = (0..recs.len())
            .find(|&i| unstable_margin(&trace, two_k, i) >= cfg.refine_eval_margin)
            .unwrap_or(recs.len() - 1);
        let rec = &trace.records[probe];
        let elapsed = rec.state.s - solver.s0;
        for (j, d) in dhat.iter_mut().enumerate() {
            let lambda = 1.0 - j as f64 / two_k as f64;
            *d -= rec.hat[j] * (-lambda * elapsed).exp() * amp0;
            *d = d.clamp(-2.0, 2.0);
        }
    }
    if let Some((_, dhat, trace, iterations)) = best {
        return Ok(RefinementResult { dhat, trace, iterations, converged: false, history });
    }
    let longest = history.iter().map(|h| h.1).fold(f64::NEG_INFINITY, f64::max);
    Err(Error::InsufficientData(format!(
        "no surviving trajectory after {} corrections; longest survival to s = {longest}",
        cfg.refine_max_iter
    )))
}

fn unstable_margin(trace: &SimulationTrace, two_k: usize, i: usize) -> f64 {
    trace.records[i].report.hat_margins[..two_k].iter().fold(0.0, |a, &b| a.max(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BisectionReport {
    pub coordinate: usize,
    /// `(dhat_j, exit time, exit sign)` of every trajectory tried.
    pub samples: Vec<(f64, f64, f64)>,
    pub centre: f64,
    pub final_width: f64,
    /// Minus the slope of `ln |dhat_j - centre|` against exit time.
    pub measured_rate: f64,
    pub expected_rate: f64,
}

/// Bisects coordinate `j` of `centre` on `[c - h, c + 0.7 h]`, keeping the
/// two ends on opposite exit signs, and fits the rate at which exit times
/// grow as the interval shrinks.
pub fn bisection_rate(params: &Parameters, solver: &SolverConfig, centre: &[f64], j: usize, h: f64, steps: usize) -> Result<BisectionReport> {
    let run = |x: f64| -> Result<(f64, f64)> {
        let mut d = centre.to_vec();
        d[j] = x;
        let tr = simulate(params, solver, &d, StopRule::AtExit)?;
        Ok(match tr.exit {
            Some(e) if e.component == SetComponent::Hat(j) => (e.s, e.sign),
            Some(e) => (e.s, 0.0),
            None => (tr.survival_time(), 0.0),
        })
    };
    let (mut lo, mut hi) = (centre[j] - h, centre[j] + 0.7 * h);
    let (tl, sl) = run(lo)?;
    let (th, sh) = run(hi)?;
    if sl == 0.0 || sh == 0.0 || sl == sh {
        return Err(Error::InsufficientData(format!("ends of the bracket for coordinate {j} do not exit through it with opposite signs")));
    }
    let mut samples = vec![(lo, tl, sl), (hi, th, sh)];
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        let (t, sg) = run(mid)?;
        samples.push((mid, t, sg));
        if sg == sl {
            lo = mid;
        } else if sg == sh {
            hi = mid;
        } else {
            break;
        }
        if t >= solver.s_max - 1e-9 {
            break;
        }
    }
    let centre_est = 0.5 * (lo + hi);
    let width = hi - lo;
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.2 != 0.0 && (s.0 - centre_est).abs() > 2.0 * width && s.1 < solver.s_max - 1e-9)
        .map(|s| (s.1, (s.0 - centre_est).abs().ln()))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let (slope, _) = fit_line(&xs, &ys)?;
    Ok(BisectionReport {
        coordinate: j,
        samples,
        centre: centre_est,
        final_width: width,
        measured_rate: -slope,
        expected_rate: 1.0 - j as f64 / params.two_k() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_enumeration() {
        let g = sweep_grid(3, 1.0, 4);
        assert_eq!(g.len(), 81);
        assert_eq!(g[0], vec![-1.0; 4]);
        assert_eq!(g[40], vec![0.0; 4]);
        assert_eq!(g[1], vec![-1.0, -1.0, -1.0, 0.0]);
        assert_eq!(sweep_grid(1, 1.0, 2), vec![vec![0.0, 0.0]]);
    }
}
