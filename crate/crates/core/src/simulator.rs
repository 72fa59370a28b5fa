//! Time stepping of the coupled `(q, b, theta)` system with the shrinking
//! set monitor.
//!
//! Each step is first-order IMEX: diffusion, drift, the `q'` part of `D_s`,
//! the linear part of `R_s`, `(1 + i delta) Re q` and `V` are implicit and
//! solved as a block-tridiagonal system in `(Re q, Im q)`; `N`, `B`, `T` and
//! the profile source are explicit with lagged `b'`, `theta'`. The frame is
//! then re-fitted by Newton so both constraints hold at the new time.
//!
//! Diffusion is exponentially fitted (scaled by `P coth P` at cell Peclet
//! number `P`): centered near the origin, upwind-like where the drift
//! dominates the vanishing `I^{-2}` diffusion.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{hermite_poly_eval, norm_minus_split, ModeDecomposition, SpectralBasis, Weight};
use crate::linalg::{complex_block, fit_line, solve_block_tridiagonal, Mat2, Vec2};
use crate::mesh::{stencil, GridFunction, Mesh};
use crate::model::{phi, scaling_factor};
use crate::modulation::{newton_solve, FrameShift, ModulationState};
use crate::params::Parameters;
use crate::rhs::{b_point, ds_coefficient, n_point, rs_parts, t_point, CouplingTable, TermForm};

/// Spatial grid for the evolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshConfig {
    /// Half-width `Y`; `None` selects `8 ((p - 1)/b0)^{1/2k}`.
    pub half_width: Option<f64>,
    pub nodes: usize,
    /// Scale `a` of the map `y = a sinh(xi)`; the mesh is nearly uniform
    /// for `|y| < a`, which keeps discretization errors of polynomial content
    /// polynomial across the weight.
    pub focus: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { half_width: None, nodes: 4096, focus: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub mesh: MeshConfig,
    pub s0: f64,
    pub s_max: f64,
    pub ds_init: f64,
    pub ds_min: f64,
    pub tol_constraint: f64,
    pub newton_max_iter: usize,
    /// Largest accepted Newton correction `|db| + |dtheta|` per step.
    pub defect_tol: f64,
    pub form: TermForm,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mesh: MeshConfig::default(),
            s0: 8.0,
            s_max: 20.0,
            ds_init: 1e-2,
            ds_min: 1e-6,
            tol_constraint: 1e-10,
            newton_max_iter: 25,
            defect_tol: 1e-3,
            form: TermForm::Derived,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: String| Err(Error::InvalidParameter { name, reason });
        if !(self.s_max > self.s0) {
            return bad("s_max", format!("must exceed s0 = {}", self.s0));
        }
        if !(self.ds_init > 0.0 && self.ds_min > 0.0 && self.ds_min <= self.ds_init) {
            return bad("ds_init", "need 0 < ds_min <= ds_init".into());
        }
        if !(self.tol_constraint > 0.0) || !(self.defect_tol > 0.0) {
            return bad("tol_constraint", "tolerances must be positive".into());
        }
        if self.mesh.nodes < 256 {
            return bad("nodes", format!("need at least 256, got {}", self.mesh.nodes));
        }
        if self.newton_max_iter == 0 {
            return bad("newton_max_iter", "must be positive".into());
        }
        Ok(())
    }
}

/// The evolution mesh: a sinh-stretched grid on `[-Y, Y]`.
pub fn pde_mesh(params: &Parameters, cfg: &SolverConfig) -> Result<Arc<Mesh>> {
    let half = cfg
        .mesh
        .half_width
        .unwrap_or_else(|| 8.0 * ((params.p - 1.0) / params.b0).powf(1.0 / params.two_k() as f64));
    let mesh = Mesh::sinh(half, cfg.mesh.nodes, cfg.mesh.focus)?;
    Ok(Arc::new(mesh))
}

/// `psi = I^{-gamma}(s0) sum_{j<2k} dhat_j (1 + i delta) H_j(., s0)`.
pub fn initial_data_psi(dhat: &[f64], s0: f64, params: &Parameters, mesh: Arc<Mesh>) -> Result<GridFunction> {
    let two_k = params.two_k();
    if dhat.len() != two_k {
        return Err(Error::InvalidParameter { name: "dhat", reason: format!("expected {two_k} entries, got {}", dhat.len()) });
    }
    if let Some(d) = dhat.iter().find(|d| !(d.abs() <= 2.0)) {
        return Err(Error::InvalidParameter { name: "dhat", reason: format!("entries must lie in [-2, 2], got {d}") });
    }
    let i = scaling_factor(s0, params.k);
    let amp = i.powf(-params.gamma);
    let a = i.powi(-2);
    let c = Complex64::new(1.0, params.delta);
    Ok(GridFunction::from_fn(mesh, |y| {
        c * dhat.iter().enumerate().map(|(j, d)| amp * d * hermite_poly_eval(j, y, a)).sum::<f64>()
    }))
}

/// Which constraint of the shrinking set a margin refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "index")]
pub enum SetComponent {
    Hat(usize),
    Check(usize),
    MinusHat,
    MinusCheck,
    B,
    Theta,
}

impl std::fmt::Display for SetComponent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Hat(n) => write!(f, "hat{n}"),
            Self::Check(n) => write!(f, "check{n}"),
            Self::MinusHat => write!(f, "minus-hat"),
            Self::MinusCheck => write!(f, "minus-check"),
            Self::B => write!(f, "b"),
            Self::Theta => write!(f, "theta"),
        }
    }
}

/// Ratios of each quantity to its bound; the state is inside iff all are
/// at most one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkingSetReport {
    pub hat_margins: Vec<f64>,
    pub check_margins: Vec<f64>,
    pub minus_hat_margin: f64,
    pub minus_check_margin: f64,
    pub b_margin: f64,
    pub theta_margin: f64,
    pub inside: bool,
}

impl ShrinkingSetReport {
    pub fn components(&self) -> impl Iterator<Item = (SetComponent, f64)> + '_ {
        let hats = self.hat_margins.iter().enumerate().map(|(n, &m)| (SetComponent::Hat(n), m));
        let checks = self.check_margins.iter().enumerate().map(|(n, &m)| (SetComponent::Check(n), m));
        hats.chain(checks).chain([
            (SetComponent::MinusHat, self.minus_hat_margin),
            (SetComponent::MinusCheck, self.minus_check_margin),
            (SetComponent::B, self.b_margin),
            (SetComponent::Theta, self.theta_margin),
        ])
    }

    /// Largest margin and its component.
    pub fn worst(&self) -> (SetComponent, f64) {
        self.components().fold((SetComponent::B, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc })
    }

    pub fn max_margin(&self) -> f64 {
        self.worst().1
    }
}

pub fn check_shrinking_set(d: &ModeDecomposition, state: &ModulationState, params: &Parameters) -> ShrinkingSetReport {
    let env = scaling_factor(d.s, params.k).powf(params.gamma);
    let hat_margins: Vec<f64> = d.hat.iter().map(|v| env * v.abs()).collect();
    let check_margins: Vec<f64> = d.check.iter().map(|v| env * v.abs()).collect();
    let (mh, mc) = norm_minus_split(&d.q_minus, d.s, params);
    let minus_hat_margin = env * mh;
    let minus_check_margin = env * mc / params.big_a;
    let b_margin = (params.b0 / (2.0 * state.b)).max(state.b / (2.0 * params.b0));
    let theta_margin = 4.0 * (state.theta - params.theta0).abs();
    let inside = hat_margins
        .iter()
        .chain(&check_margins)
        .chain([&minus_hat_margin, &minus_check_margin, &b_margin, &theta_margin])
        .all(|m| *m <= 1.0);
    ShrinkingSetReport { hat_margins, check_margins, minus_hat_margin, minus_check_margin, b_margin, theta_margin, inside }
}

/// One accepted time level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: ModulationState,
    pub hat: Vec<f64>,
    pub check: Vec<f64>,
    pub norm_minus_hat: f64,
    pub norm_minus_check: f64,
    pub report: ShrinkingSetReport,
    /// `sup |w - e^{i theta} f_b|`.
    pub deviation: f64,
    /// `max(|q_hat_{2k}|, |q_check_0|)`.
    pub constraint_residual: f64,
    /// Step that produced this level; zero for the initial level.
    pub ds: f64,
    pub newton_iterations: usize,
}

/// First departure from the shrinking set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitEvent {
    /// Time where the largest margin crosses one, by linear interpolation.
    pub s: f64,
    /// Index of the first record outside the set.
    pub record: usize,
    pub component: SetComponent,
    /// Sign of the exiting coordinate.
    pub sign: f64,
    /// Finite-difference derivative of the exiting coordinate.
    pub derivative: f64,
    pub outward: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub params: Parameters,
    pub dhat: Vec<f64>,
    pub records: Vec<StepRecord>,
    pub exit: Option<ExitEvent>,
}

impl SimulationTrace {
    pub fn last(&self) -> &StepRecord {
        self.records.last().expect("traces hold the initial record")
    }

    pub fn survived(&self) -> bool {
        self.exit.is_none()
    }

    /// Time up to which the run stayed in the set.
    pub fn survival_time(&self) -> f64 {
        self.exit.map_or(self.last().state.s, |e| e.s)
    }

    /// Records strictly before the exit.
    pub fn in_set(&self) -> &[StepRecord] {
        let end = self.exit.map_or(self.records.len(), |e| e.record);
        &self.records[..end]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopRule {
    /// Stop at the first record outside the set.
    AtExit,
    /// Continue to `s_max`, recording the exit.
    AtSMax,
}

/// Single-trajectory state machine.
#[derive(Debug, Clone)]
pub struct Simulator {
    params: Parameters,
    cfg: SolverConfig,
    mesh: Arc<Mesh>,
    q: Vec<Complex64>,
    state: ModulationState,
    /// Accepted `(s, b, theta)`, newest last, at most three.
    history: Vec<(f64, f64, f64)>,
    ds: f64,
    calm_steps: usize,
}

impl Simulator {
    /// Starts from `w = e^{i theta0} f_{b0}(1 + e_{b0} psi)`.
    pub fn new(params: Parameters, cfg: SolverConfig, dhat: &[f64]) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        let mesh = pde_mesh(&params, &cfg)?;
        let psi = initial_data_psi(dhat, cfg.s0, &params, mesh.clone())?;
        Self::from_q(params, cfg, mesh, psi.into_values(), ModulationState::initial(cfg.s0, &params))
    }

    pub fn from_q(params: Parameters, cfg: SolverConfig, mesh: Arc<Mesh>, q: Vec<Complex64>, state: ModulationState) -> Result<Self> {
        if q.len() != mesh.len() {
            return Err(Error::MeshMismatch(format!("{} values for {} nodes", q.len(), mesh.len())));
        }
        Weight::new(cfg.s_max, params.k).check_mesh(&mesh)?;
        Ok(Self { params, cfg, mesh, q, state, history: vec![(state.s, state.b, state.theta)], ds: cfg.ds_init, calm_steps: 0 })
    }

    pub fn state(&self) -> &ModulationState {
        &self.state
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn q(&self) -> GridFunction {
        GridFunction::new(self.mesh.clone(), self.q.clone()).expect("same mesh")
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    fn basis(&self, s: f64) -> Result<SpectralBasis> {
        SpectralBasis::new(self.mesh.clone(), s, self.params.k, self.params.m_floor())
    }

    /// Record describing the current level.
    pub fn observe(&self, ds: f64, newton_iterations: usize) -> Result<StepRecord> {
        let basis = self.basis(self.state.s)?;
        Ok(self.observe_with(&basis, ds, newton_iterations))
    }

    fn observe_with(&self, basis: &SpectralBasis, ds: f64, newton_iterations: usize) -> StepRecord {
        let params = &self.params;
        let d = basis.decompose(&self.q, params.delta);
        let report = check_shrinking_set(&d, &self.state, params);
        let (nh, nc) = norm_minus_split(&d.q_minus, d.s, params);
        let expo = params.p / (params.p - 1.0);
        let deviation = self
            .mesh
            .nodes()
            .iter()
            .zip(&self.q)
            .fold(0.0f64, |acc, (&y, v)| acc.max(phi(self.state.b, y, params).powf(-expo) * v.norm()));
        let constraint_residual = d.hat[params.two_k()].abs().max(d.check[0].abs());
        StepRecord {
            state: self.state,
            hat: d.hat,
            check: d.check,
            norm_minus_hat: nh,
            norm_minus_check: nc,
            report,
            deviation,
            constraint_residual,
            ds,
            newton_iterations,
        }
    }

    /// Implicit solve plus explicit update over `[s, s + ds]`, in the frame
    /// `(b, theta)` advanced by the lagged rates.
    fn imex(&self, ds: f64) -> Result<Vec<Complex64>> {
        let params = &self.params;
        let (s, b) = (self.state.s, self.state.b);
        let s1 = s + ds;
        let n = self.mesh.len();
        let i2inv = scaling_factor(s1, params.k).powi(-2);
        let drift = 1.0 / params.two_k() as f64;
        let d = params.delta;
        let two_k = params.two_k() as i32;
        let mut lower: Vec<Mat2> = vec![[[0.0; 2]; 2]; n];
        let mut diag: Vec<Mat2> = vec![[[0.0; 2]; 2]; n];
        let mut upper: Vec<Mat2> = vec![[[0.0; 2]; 2]; n];
        let mut rhs: Vec<Vec2> = vec![[0.0; 2]; n];
        for i in 0..n {
            let y = self.mesh.y(i);
            let qi = self.q[i];
            let (src, _) = rs_parts(y, b, s, params, self.cfg.form);
            let explicit = n_point(y, qi, b, params)
                + b_point(y, qi, b, self.state.bprime, params)
                + t_point(y, qi, b, self.state.thetaprime, params, self.cfg.form)
                + src;
            let r = qi + ds * explicit;
            rhs[i] = [r.re, r.im];

            let a1 = Complex64::new(-drift * y, 0.0) + ds_coefficient(y, b, s1, params);
            let (_, lin) = rs_parts(y, b, s1, params, self.cfg.form);
            let kappa = -b * y.powi(two_k) / phi(b, y, params);
            // (1 + i delta) Re q and V(q) = kappa (i delta Re q - i Im q)
            let react: Mat2 = [[1.0, 0.0], [d + kappa * d, -kappa]];
            let (cl, cc, cu) = if i == 0 {
                let h = self.mesh.y(1) - y;
                (Complex64::new(0.0, 0.0), -a1 / h, a1 / h)
            } else if i == n - 1 {
                let h = y - self.mesh.y(n - 2);
                (-a1 / h, a1 / h, Complex64::new(0.0, 0.0))
            } else {
                let (d1, d2) = stencil(&self.mesh, i);
                let h = 0.5 * (self.mesh.y(i + 1) - self.mesh.y(i - 1));
                let diff = i2inv * fitting_factor(a1.re.abs() * h / (2.0 * i2inv));
                (a1 * d1[0] + diff * d2[0], Complex64::new(diff * d2[1], 0.0), a1 * d1[2] + diff * d2[2])
            };
            let centre = complex_block((cc + lin).re, (cc + lin).im);
            diag[i] = [
                [1.0 - ds * (centre[0][0] + react[0][0]), -ds * (centre[0][1] + react[0][1])],
                [-ds * (centre[1][0] + react[1][0]), 1.0 - ds * (centre[1][1] + react[1][1])],
            ];
            lower[i] = scale_block(complex_block(cl.re, cl.im), -ds);
            upper[i] = scale_block(complex_block(cu.re, cu.im), -ds);
        }
        let x = solve_block_tridiagonal(&lower, &diag, &upper, &rhs)?;
        let out: Vec<Complex64> = x.into_iter().map(|v| Complex64::new(v[0], v[1])).collect();
        if out.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite(format!("implicit solve at s = {s1}")));
        }
        Ok(out)
    }

    /// Attempts one step of size `ds`; on success the state is replaced and
    /// the new record returned.
    fn try_step(&mut self, ds: f64) -> Result<StepRecord> {
        let s1 = self.state.s + ds;
        let qstar = self.imex(ds)?;
        let b_guess = self.state.b + self.state.bprime * ds;
        let th_guess = self.state.theta + self.state.thetaprime * ds;
        if !(b_guess > 0.0) {
            return Err(Error::NonFinite("frame guess left b > 0".into()));
        }
        let basis = self.basis(s1)?;
        let shift = FrameShift::new(&basis, &qstar, b_guess, th_guess, &self.params);
        let out = newton_solve(&shift, b_guess, th_guess, self.cfg.tol_constraint, self.cfg.newton_max_iter)?;
        let defect = (out.b - b_guess).abs() + (out.theta - th_guess).abs();
        if defect > self.cfg.defect_tol {
            return Err(Error::NewtonFailed { residual: defect, iterations: out.iterations });
        }
        let q1 = shift.shifted(out.b, out.theta);
        if q1.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite(format!("shifted field at s = {s1}")));
        }
        self.history.push((s1, out.b, out.theta));
        if self.history.len() > 3 {
            self.history.remove(0);
        }
        let (bp, tp) = backward_rates(&self.history);
        self.q = q1;
        self.state = ModulationState { s: s1, b: out.b, theta: out.theta, bprime: bp, thetaprime: tp };
        Ok(self.observe_with(&basis, ds, out.iterations))
    }

    /// One accepted step, halving the size on rejection. The step never
    /// overshoots `s_max`.
    pub fn step(&mut self) -> Result<StepRecord> {
        let remaining = self.cfg.s_max - self.state.s;
        let mut ds = self.ds.min(remaining);
        loop {
            let saved = (self.q.clone(), self.state, self.history.clone());
            match self.try_step(ds) {
                Ok(rec) => {
                    if ds < self.ds {
                        self.calm_steps += 1;
                        if self.calm_steps >= 10 {
                            self.ds = (2.0 * self.ds).min(self.cfg.ds_init);
                            self.calm_steps = 0;
                        }
                    }
                    return Ok(rec);
                }
                Err(e @ (Error::NewtonFailed { .. } | Error::SingularJacobian { .. } | Error::NonFinite(_) | Error::InvalidParameter { .. })) => {
                    (self.q, self.state, self.history) = saved;
                    ds *= 0.5;
                    self.ds = ds;
                    self.calm_steps = 0;
                    if ds < self.cfg.ds_min {
                        let _ = e;
                        return Err(Error::StepTooSmall { s: self.state.s, ds_min: self.cfg.ds_min });
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Runs from the current level to `s_max` or the exit.
    pub fn run(&mut self, stop: StopRule) -> Result<SimulationTrace> {
        let params = self.params;
        let mut records = vec![self.observe(0.0, 0)?];
        let mut exit = None;
        let eps = 1e-12 * self.cfg.s_max.abs().max(1.0);
        while self.state.s < self.cfg.s_max - eps {
            let rec = self.step()?;
            records.push(rec);
            if exit.is_none() {
                exit = detect_exit(&records, &params);
                if exit.is_some() && stop == StopRule::AtExit {
                    break;
                }
            }
        }
        Ok(SimulationTrace { params, dhat: Vec::new(), records, exit })
    }
}

/// `P coth P`: diffusion scaling of the exponentially fitted scheme at cell
/// Peclet number `P`.
fn fitting_factor(p: f64) -> f64 {
    if p < 1e-4 {
        1.0 + p * p / 3.0
    } else {
        p / p.tanh()
    }
}

fn scale_block(m: Mat2, c: f64) -> Mat2 {
    [[c * m[0][0], c * m[0][1]], [c * m[1][0], c * m[1][1]]]
}

/// Rates from up to three accepted `(s, b, theta)` levels.
fn backward_rates(h: &[(f64, f64, f64)]) -> (f64, f64) {
    match h {
        [.., (s0, b0, t0), (s1, b1, t1), (s2, b2, t2)] if h.len() >= 3 => {
            let (h0, h1) = (s1 - s0, s2 - s1);
            let c2 = (2.0 * h1 + h0) / (h1 * (h1 + h0));
            let c1 = -(h1 + h0) / (h1 * h0);
            let c0 = h1 / (h0 * (h1 + h0));
            (c2 * b2 + c1 * b1 + c0 * b0, c2 * t2 + c1 * t1 + c0 * t0)
        }
        [(s0, b0, t0), (s1, b1, t1)] => ((b1 - b0) / (s1 - s0), (t1 - t0) / (s1 - s0)),
        _ => (0.0, 0.0),
    }
}

fn component_value(rec: &StepRecord, c: SetComponent, params: &Parameters) -> f64 {
    match c {
        SetComponent::Hat(n) => rec.hat[n],
        SetComponent::Check(n) => rec.check[n],
        SetComponent::MinusHat => rec.norm_minus_hat,
        SetComponent::MinusCheck => rec.norm_minus_check,
        SetComponent::B => rec.state.b - params.b0,
        SetComponent::Theta => rec.state.theta - params.theta0,
    }
}

/// Exit at the newest record, if it is the first one outside the set.
/// Records: at least two; a violation at the initial level is reported at
/// `s0` with the derivative taken over the first step.
/// Margins within this of one at `s0` count as sitting on the boundary.
const BOUNDARY_TIE: f64 = 1e-9;

fn detect_exit(records: &[StepRecord], params: &Parameters) -> Option<ExitEvent> {
    let n = records.len();
    if n < 2 {
        return None;
    }
    let first_out = records.iter().position(|r| !r.report.inside)?;
    let idx = first_out.max(1);
    if idx != n - 1 && first_out != 0 {
        return None;
    }
    let (prev, cur) = (&records[idx - 1], &records[idx]);
    let at = if first_out == 0 { &records[0] } else { cur };
    let (component, m1) = if first_out == 0 {
        // Data starting on the boundary ties several margins at one up to
        // rounding; the exit is through the tied component that goes out.
        let margin_of = |r: &StepRecord, c: SetComponent| r.report.components().find(|x| x.0 == c).map_or(0.0, |x| x.1);
        at.report
            .components()
            .filter(|c| c.1 >= 1.0 - BOUNDARY_TIE)
            .max_by(|a, b| margin_of(cur, a.0).total_cmp(&margin_of(cur, b.0)))
            .unwrap_or_else(|| at.report.worst())
    } else {
        at.report.worst()
    };
    let m0 = prev.report.max_margin();
    let s = if first_out == 0 || m1 <= m0 {
        records[first_out].state.s
    } else {
        prev.state.s + (cur.state.s - prev.state.s) * ((1.0 - m0) / (m1 - m0)).clamp(0.0, 1.0)
    };
    let value = component_value(at, component, params);
    let derivative = (component_value(cur, component, params) - component_value(prev, component, params)) / (cur.state.s - prev.state.s);
    let sign = if value >= 0.0 { 1.0 } else { -1.0 };
    Some(ExitEvent { s, record: first_out, component, sign, derivative, outward: sign * derivative > 0.0 })
}

/// Runs from `psi(dhat)` under `stop`.
pub fn simulate(params: &Parameters, cfg: &SolverConfig, dhat: &[f64], stop: StopRule) -> Result<SimulationTrace> {
    let mut sim = Simulator::new(*params, *cfg, dhat)?;
    let mut trace = sim.run(stop)?;
    trace.dhat = dhat.to_vec();
    Ok(trace)
}

/// Fitted rates of an in-set trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// Slope of `ln ||w - e^{i theta} f_b||` against `s` after the transient.
    pub rate_fit: f64,
    /// Reference slope `-gamma (1 - 1/k)/2` of the `I^{-gamma}` envelope.
    pub envelope_slope: f64,
    pub b_star: f64,
    /// `sup_s |b(s) - b_star|`.
    pub b_drift: f64,
    /// Largest ratio of `|b(s) - b_star|` to `C I^{-2 gamma}(s)/(gamma (1 - 1/k))`,
    /// where `C = max I^{2 gamma} |b'|` along the run.
    pub b_envelope_ratio: f64,
    pub theta_star: f64,
    /// Largest relative increase of the deviation between consecutive
    /// records after the transient.
    pub max_relative_increase: f64,
    pub transient: f64,
}

/// Rate extraction over the in-set part of `trace`, skipping `transient`
/// units of `s` at the start.
pub fn extract_rates(trace: &SimulationTrace, transient: f64) -> Result<RateReport> {
    let recs = trace.in_set();
    if recs.len() < 3 || recs.last().unwrap().state.s - recs[0].state.s < 5.0 {
        return Err(Error::InsufficientData("need at least 5 units of s inside the set".into()));
    }
    let params = &trace.params;
    let start = recs[0].state.s + transient;
    let tail: Vec<&StepRecord> = recs.iter().filter(|r| r.state.s >= start).collect();
    if tail.len() < 3 {
        return Err(Error::InsufficientData("transient covers the whole trace".into()));
    }
    let xs: Vec<f64> = tail.iter().map(|r| r.state.s).collect();
    let ys: Vec<f64> = tail.iter().map(|r| r.deviation.max(f64::MIN_POSITIVE).ln()).collect();
    let (rate_fit, _) = fit_line(&xs, &ys)?;
    let max_relative_increase = tail.windows(2).map(|w| (w[1].deviation - w[0].deviation) / w[0].deviation).fold(f64::NEG_INFINITY, f64::max);

    let last = recs.last().unwrap().state;
    // |b'| <= C I^{-2 gamma} integrates to |b - b_star| <= C I^{-2 gamma}/decay,
    // with C measured along the run and b_star extrapolated at that decay.
    let decay = params.gamma * (1.0 - 1.0 / params.kf());
    let i2g = |s: f64| scaling_factor(s, params.k).powf(2.0 * params.gamma);
    let c = recs.iter().map(|r| r.state.bprime.abs() * i2g(r.state.s)).fold(0.0, f64::max);
    let b_star = last.b + last.bprime / decay;
    let mut b_drift = 0.0f64;
    let mut ratio = 0.0f64;
    for r in recs {
        let dev = (r.state.b - b_star).abs();
        b_drift = b_drift.max(dev);
        let env = c / (decay * i2g(r.state.s));
        if env > 0.0 {
            ratio = ratio.max(dev / env);
        } else if dev > 0.0 {
            ratio = f64::INFINITY;
        }
    }
    Ok(RateReport {
        rate_fit,
        envelope_slope: -params.gamma * (1.0 - 1.0 / params.kf()) / 2.0,
        b_star,
        b_drift,
        b_envelope_ratio: ratio,
        theta_star: last.theta,
        max_relative_increase,
        transient,
    })
}

/// Normalized residuals of the finite-mode equations along a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResiduals {
    /// `max_s |q_hat_j' - (1 - j/2k) q_hat_j| I^{2 gamma}`, per `j`.
    pub hat: Vec<f64>,
    /// Same for the check equations including the `V` coupling.
    pub check: Vec<f64>,
    /// `max_s |b'| I^{2 gamma}` and `max_s |theta'| I^{2 gamma}`.
    pub bprime: f64,
    pub thetaprime: f64,
}

impl ModeResiduals {
    /// Run constant over the unstable hat modes `j < 2k` and all check
    /// modes.
    pub fn constant(&self, params: &Parameters) -> f64 {
        self.hat[..params.two_k()].iter().chain(&self.check).fold(0.0, |a, &b| a.max(b))
    }
}

/// Centered differences of the recorded modes over the in-set records.
pub fn mode_residuals(trace: &SimulationTrace) -> Result<ModeResiduals> {
    let params = &trace.params;
    let recs = trace.in_set();
    if recs.len() < 3 {
        return Err(Error::InsufficientData("need three in-set records".into()));
    }
    let nm = recs[0].hat.len();
    let two_k = params.two_k();
    let kf = 2.0 * params.kf();
    let table = CouplingTable::new(params, recs[0].state.s)?;
    let mut hat = vec![0.0f64; nm];
    let mut check = vec![0.0f64; nm];
    let mut bprime = 0.0f64;
    let mut thetaprime = 0.0f64;
    for r in recs {
        let norm = scaling_factor(r.state.s, params.k).powf(2.0 * params.gamma);
        bprime = bprime.max(r.state.bprime.abs() * norm);
        thetaprime = thetaprime.max(r.state.thetaprime.abs() * norm);
    }
    for w in recs.windows(3) {
        let (a, m, c) = (&w[0], &w[1], &w[2]);
        let h = c.state.s - a.state.s;
        let norm = scaling_factor(m.state.s, params.k).powf(2.0 * params.gamma);
        for j in 0..nm {
            let dh = (c.hat[j] - a.hat[j]) / h;
            let rh = dh - (1.0 - j as f64 / kf) * m.hat[j];
            hat[j] = hat[j].max(rh.abs() * norm);
            let dc = (c.check[j] - a.check[j]) / h;
            let mut rc = dc + (j as f64 / kf) * m.check[j];
            if j >= two_k {
                rc -= table.coupling(j, &m.check, m.state.b);
            }
            check[j] = check[j].max(rc.abs() * norm);
        }
    }
    Ok(ModeResiduals { hat, check, bprime, thetaprime })
}
