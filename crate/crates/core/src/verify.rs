//! Verification suites. Each check yields a [`Criterion`] with the measured
//! value, the threshold it is held to and a short detail line.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{default_spectral_mesh, hermite_poly_eval, spectral_mesh, weighted_inner, SpectralBasis};
use crate::linalg::{det2, fit_line};
use crate::mesh::{GridFunction, Mesh};
use crate::model::{delta_decompose, scaling_factor, ComplexSplit};
use crate::modulation::{modulation_jacobian, modulation_residual, newton_enforce_constraints, w_from_q, ModulationState};
use crate::operators::{apply_Ls, jordan_image, measure_spectral_gap, mehler_propagate, GapConfig, SemigroupVariant};
use crate::params::Parameters;
use crate::rhs::{
    ldelta_row, project_term, rhs_by_substitution, rhs_terms, t_row, t_row_printed, term_N, term_T, term_V, TermForm,
};
use crate::shooting::SweepReport;
use crate::simulator::{extract_rates, initial_data_psi, mode_residuals, SimulationTrace};
use crate::Complex64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    /// Summary key, e.g. `ac01_hermite_orthogonality`.
    pub key: String,
    pub pass: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Criterion {
    fn new(key: &str, pass: bool, measured: f64, threshold: f64, detail: String) -> Self {
        Self { key: key.to_string(), pass, measured, threshold, detail }
    }

    /// `measured < threshold`.
    fn below(key: &str, measured: f64, threshold: f64, detail: String) -> Self {
        Self::new(key, measured < threshold, measured, threshold, detail)
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: measured {:.6e} threshold {:.6e} ({})",
            if self.pass { "PASS" } else { "FAIL" },
            self.key,
            self.measured,
            self.threshold,
            self.detail
        )
    }
}

/// Two-column data for one diagnostic figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SuiteReport {
    pub suite: String,
    /// Numbered acceptance items.
    pub criteria: Vec<Criterion>,
    /// Supporting checks that are reported but not numbered.
    pub checks: Vec<Criterion>,
    pub plots: Vec<PlotSeries>,
}

impl SuiteReport {
    fn named(suite: &str) -> Self {
        Self { suite: suite.to_string(), ..Self::default() }
    }

    pub fn passed(&self) -> bool {
        self.criteria.iter().chain(&self.checks).all(|c| c.pass)
    }

    pub fn all(&self) -> impl Iterator<Item = &Criterion> {
        self.criteria.iter().chain(&self.checks)
    }
}

fn control_deltas(params: &Parameters) -> Vec<f64> {
    if params.delta == 0.0 {
        vec![0.0]
    } else {
        vec![params.delta, 0.0]
    }
}

fn h_grid(n: usize, s: f64, k: u32, mesh: Arc<Mesh>) -> GridFunction {
    let a = scaling_factor(s, k).powi(-2);
    GridFunction::from_real_fn(mesh, move |y| hermite_poly_eval(n, y, a))
}

// ---------------------------------------------------------------- spectral

pub const ORTHOGONALITY_TOL: f64 = 1e-8;
pub const ORTHOGONALITY_TIMES: [f64; 3] = [0.0, 4.0, 8.0];
pub const JORDAN_NODES: [usize; 3] = [401, 801, 1601];
pub const JORDAN_RATIO: f64 = 4.0;
pub const JORDAN_RATIO_TOL: f64 = 0.5;
/// Relative residual below which a Jordan identity counts as exact.
pub const JORDAN_EXACT: f64 = 1e-10;

/// Largest relative deviation of the Gram matrix of `H_0..H_nmax` from
/// `diag(I^{-2n} 2^n n!)`.
pub fn orthogonality_error(k: u32, nmax: usize, s: f64) -> Result<f64> {
    let mesh = default_spectral_mesh(s, k);
    let i2 = scaling_factor(s, k).powi(-2);
    let hs: Vec<GridFunction> = (0..=nmax).map(|n| h_grid(n, s, k, mesh.clone())).collect();
    let mut norm = vec![1.0f64; nmax + 1];
    for n in 1..=nmax {
        norm[n] = norm[n - 1] * 2.0 * n as f64 * i2;
    }
    let mut worst = 0.0f64;
    for n in 0..=nmax {
        for m in 0..=nmax {
            let g = weighted_inner(&hs[n], &hs[m], s, k)?.re;
            let want = if n == m { norm[n] } else { 0.0 };
            worst = worst.max((g - want).abs() / norm[n]);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JordanRow {
    pub m: usize,
    /// Relative interior residual on each mesh of [`JORDAN_NODES`].
    pub residuals: Vec<f64>,
    /// Successive residual ratios; empty when the identity is exact.
    pub ratios: Vec<f64>,
}

/// Interior residual of `L_s H_m` against its Jordan image on sinh meshes of
/// half-width `8/I` and focus `1/I`, refined by halving.
pub fn jordan_convergence(k: u32, s: f64, mmax: usize) -> Result<Vec<JordanRow>> {
    let i = scaling_factor(s, k);
    let meshes: Vec<Arc<Mesh>> =
        JORDAN_NODES.iter().map(|&n| Mesh::sinh(8.0, n, 1.0).map(|m| Arc::new(m.scaled(1.0 / i)))).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for m in 0..=mmax {
        let residuals: Vec<f64> = meshes
            .iter()
            .map(|mesh| {
                let h = h_grid(m, s, k, mesh.clone());
                let want = GridFunction::from_real_fn(mesh.clone(), |y| jordan_image(m, y, s, k));
                let scale = want.sup_norm().max(h.sup_norm());
                apply_Ls(&h, s, k).sub(&want).map(|d| d.sup_norm_interior() / scale)
            })
            .collect::<Result<_>>()?;
        let ratios = if residuals.iter().all(|r| *r < JORDAN_EXACT) {
            Vec::new()
        } else {
            residuals.windows(2).map(|w| w[0] / w[1]).collect()
        };
        rows.push(JordanRow { m, residuals, ratios });
    }
    Ok(rows)
}

pub fn spectral_suite(params: &Parameters) -> Result<SuiteReport> {
    let k = params.k;
    let mut report = SuiteReport::named("spectral");
    let mut worst = 0.0f64;
    let mut per_time = Vec::new();
    for &s in &ORTHOGONALITY_TIMES {
        let e = orthogonality_error(k, 8, s)?;
        per_time.push(format!("s={s}: {e:.2e}"));
        worst = worst.max(e);
    }
    report.criteria.push(Criterion::below(
        "ac01_hermite_orthogonality",
        worst,
        ORTHOGONALITY_TOL,
        format!("n, m <= 8; {}", per_time.join(", ")),
    ));

    let mut dev = 0.0f64;
    let mut exact_worst = 0.0f64;
    let mut points = Vec::new();
    for &s in &[0.0, 4.0] {
        for row in jordan_convergence(k, s, 8)? {
            if row.ratios.is_empty() {
                exact_worst = exact_worst.max(row.residuals[0]);
            }
            for r in &row.ratios {
                dev = dev.max((r - JORDAN_RATIO).abs());
            }
            if s == 4.0 {
                points.extend(JORDAN_NODES.iter().zip(&row.residuals).map(|(n, r)| (row.m as f64 + 1e-4 * *n as f64, *r)));
            }
        }
    }
    report.criteria.push(Criterion::new(
        "ac02_jordan_block",
        dev <= JORDAN_RATIO_TOL,
        dev,
        JORDAN_RATIO_TOL,
        format!("max |ratio - 4| over m <= 8 and s in {{0, 4}}; exact rows residual {exact_worst:.1e}"),
    ));
    report.plots.push(PlotSeries {
        name: "jordan_residuals".into(),
        x_label: "m + 1e-4 nodes".into(),
        y_label: "relative residual".into(),
        points,
    });
    Ok(report)
}

// --------------------------------------------------------------- semigroup

pub const EIGENACTION_TOL: f64 = 1e-6;
pub const EIGENACTION_STEPS: [f64; 3] = [0.5, 1.0, 2.0];
pub const GAP_SAMPLES: usize = 20;
pub const GAP_SIGMA: f64 = 8.0;
pub const GAP_OFFSETS: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];
/// Slack added to the theoretical gap `-p/(p-1)`.
pub const GAP_SLACK: f64 = 0.1;

/// Relative sup error of `K_{s,sigma} H_n` against `e^{(s-sigma)(1 - n/2k)} H_n`.
pub fn eigenaction_error(n: usize, sigma: f64, step: f64, k: u32) -> Result<f64> {
    let s = sigma + step;
    let mesh = Arc::new(spectral_mesh(s, k, 801, 10.0)?);
    let a = scaling_factor(sigma, k).powi(-2);
    let f = move |z: f64| Complex64::new(hermite_poly_eval(n, z, a), 0.0);
    let out = mehler_propagate(&f, sigma, s, k, SemigroupVariant::WithIdentity, mesh.clone())?;
    let rate = (step * (1.0 - n as f64 / (2.0 * k as f64))).exp();
    let want = h_grid(n, s, k, mesh).scale(Complex64::new(rate, 0.0));
    Ok(out.sub(&want)?.sup_norm() / want.sup_norm())
}

/// Random remainder `(1 + z^2)^3 sum_m c_m cos(w_m z + phi_m)`, `z = I(sigma) y`,
/// with its projections on `H_0..H_M` removed.
#[derive(Debug, Clone)]
pub struct RandomRemainder {
    scale: f64,
    waves: Vec<(Complex64, f64, f64)>,
    low: Vec<Complex64>,
    a: f64,
}

impl RandomRemainder {
    pub fn sample<R: Rng>(rng: &mut R, sigma: f64, params: &Parameters) -> Result<Self> {
        let scale = scaling_factor(sigma, params.k);
        let waves = (0..4)
            .map(|_| {
                let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                (c, rng.gen_range(0.5..3.0), rng.gen_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        let mut out = Self { scale, waves, low: Vec::new(), a: scale.powi(-2) };
        let mesh = Arc::new(spectral_mesh(sigma, params.k, 4096, 20.0)?);
        let basis = SpectralBasis::new(mesh.clone(), sigma, params.k, params.m_floor())?;
        let v: Vec<Complex64> = mesh.nodes().iter().map(|&y| out.raw(y)).collect();
        out.low = basis.project_all(&v);
        Ok(out)
    }

    fn raw(&self, y: f64) -> Complex64 {
        let z = self.scale * y;
        let env = (1.0 + z * z).powi(3);
        self.waves.iter().map(|(c, w, ph)| c * (w * z + ph).cos()).sum::<Complex64>() * env
    }

    pub fn eval(&self, y: f64) -> Complex64 {
        let low: Complex64 = self.low.iter().enumerate().map(|(n, c)| c * hermite_poly_eval(n, y, self.a)).sum();
        self.raw(y) - low
    }
}

pub fn semigroup_suite(params: &Parameters, seed: u64) -> Result<SuiteReport> {
    let k = params.k;
    let two_k = params.two_k();
    let mut report = SuiteReport::named("semigroup");

    let cases: Vec<(usize, f64, f64)> =
        [0.0, 4.0].iter().flat_map(|&sg| (0..=10).flat_map(move |n| EIGENACTION_STEPS.iter().map(move |&d| (n, sg, d)))).collect();
    let errors: Vec<f64> = cases.par_iter().map(|&(n, sg, d)| eigenaction_error(n, sg, d, k)).collect::<Result<_>>()?;
    let (worst_i, worst) = errors.iter().enumerate().fold((0, 0.0f64), |a, (i, e)| if *e > a.1 { (i, *e) } else { a });
    let drift = cases
        .iter()
        .zip(&errors)
        .filter(|((n, _, d), _)| *n == two_k && *d == 2.0)
        .fold(0.0f64, |a, (_, e)| a.max(*e));
    let (wn, ws, wd) = cases[worst_i];
    report.criteria.push(Criterion::new(
        "ac03_mehler_eigenaction",
        worst < EIGENACTION_TOL && drift < EIGENACTION_TOL,
        worst.max(drift),
        EIGENACTION_TOL,
        format!("n <= 10, s - sigma in {{0.5, 1, 2}}, sigma in {{0, 4}}; worst n={wn} sigma={ws} step={wd}; neutral drift {drift:.2e}"),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<RandomRemainder> =
        (0..GAP_SAMPLES).map(|_| RandomRemainder::sample(&mut rng, GAP_SIGMA, params)).collect::<Result<_>>()?;
    let taus: Vec<f64> = GAP_OFFSETS.iter().map(|o| GAP_SIGMA + o).collect();
    let gap_cfg = GapConfig::default();
    let bound = -params.p / (params.p - 1.0) + GAP_SLACK;
    let mut fits = Vec::new();
    for variant in [SemigroupVariant::DriftOnly, SemigroupVariant::WithIdentity] {
        let slopes: Vec<_> = samples
            .par_iter()
            .map(|r| measure_spectral_gap(&|y| r.eval(y), GAP_SIGMA, &taus, params, variant, &gap_cfg))
            .collect::<Result<_>>()?;
        let threshold = match variant {
            SemigroupVariant::DriftOnly => bound,
            SemigroupVariant::WithIdentity => bound + 1.0,
        };
        let max_slope = slopes.iter().map(|f| f.slope).fold(f64::NEG_INFINITY, f64::max);
        fits.push((variant, max_slope, threshold));
        if variant == SemigroupVariant::DriftOnly {
            report.plots.push(PlotSeries {
                name: "gap_fit_points".into(),
                x_label: "tau - sigma".into(),
                y_label: "log ratio of weighted sup norms".into(),
                points: slopes.iter().flat_map(|f| f.points.iter().copied()).collect(),
            });
        }
    }
    let pass = fits.iter().all(|(_, m, t)| m <= t);
    let margin = fits.iter().map(|(_, m, t)| m - t).fold(f64::NEG_INFINITY, f64::max);
    report.criteria.push(Criterion::new(
        "ac04_spectral_gap",
        pass,
        fits[0].1,
        fits[0].2,
        format!(
            "{GAP_SAMPLES} remainders, tau - sigma in [1, 5]; drift-only max slope {:.4} (<= {:.2}), with identity {:.4} (<= {:.2}); worst margin {margin:.3}",
            fits[0].1, fits[0].2, fits[1].1, fits[1].2
        ),
    ));
    Ok(report)
}

// --------------------------------------------------------------------- rhs

pub const NONLINEAR_EPS: [f64; 2] = [1e-4, 1e-2];
pub const NONLINEAR_SAMPLES: usize = 10;
pub const NONLINEAR_SLACK: f64 = 0.05;
pub const V_EXACT_TOL: f64 = 1e-12;
pub const ROW_TOL: f64 = 1e-4;

/// A random field of shrinking-set size at time `s`: coordinates of `q_+`
/// below `I^{-gamma}`, both constrained coordinates zero, plus an
/// oscillating tail of weighted size below `I^{-gamma}/2`.
pub fn random_in_set_q<R: Rng>(rng: &mut R, s: f64, params: &Parameters, mesh: Arc<Mesh>) -> GridFunction {
    let i = scaling_factor(s, params.k);
    let amp = i.powf(-params.gamma);
    let a = i.powi(-2);
    let mf = params.m_floor();
    let mut hat: Vec<f64> = (0..=mf).map(|_| amp * rng.gen_range(-1.0..1.0)).collect();
    let mut check: Vec<f64> = (0..=mf).map(|_| amp * rng.gen_range(-1.0..1.0)).collect();
    hat[params.two_k()] = 0.0;
    check[0] = 0.0;
    let m = params.m_weight();
    let (w, ph) = (rng.gen_range(1.0..3.0), rng.gen_range(0.0..std::f64::consts::TAU));
    let minus = Complex64::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)) * amp;
    let d = params.delta;
    GridFunction::from_fn(mesh, move |y| {
        let plus: Complex64 = hat
            .iter()
            .zip(&check)
            .enumerate()
            .map(|(n, (h, c))| Complex64::new(*h, d * h + c) * hermite_poly_eval(n, y, a))
            .sum();
        let tail = minus * (i.powf(-m) + y.abs().powf(m)) * (w * i * y + ph).sin() * (i * y).powi(2).tanh().powi(4);
        plus + tail
    })
}

/// Log-log slope of `||N(eps q)||_inf` against `eps`.
pub fn nonlinearity_slope(q: &GridFunction, b: f64, params: &Parameters) -> Result<f64> {
    let (lo, hi) = (NONLINEAR_EPS[0].ln(), NONLINEAR_EPS[1].ln());
    let pts: Vec<(f64, f64)> = (0..9)
        .map(|j| {
            let e = (lo + (hi - lo) * j as f64 / 8.0).exp();
            (e.ln(), term_N(&q.scale(Complex64::new(e, 0.0)), b, params).sup_norm().ln())
        })
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Ok(fit_line(&x, &y)?.0)
}

/// Largest hat part of `V`, of its projections `P_n(V)` and of its
/// remainder `P_-(V)`.
pub fn v_hat_parts(q: &GridFunction, b: f64, s: f64, params: &Parameters) -> Result<f64> {
    let v = term_V(q, b, params);
    let point = v.values().iter().map(|z| delta_decompose(*z, params.delta).hat.abs()).fold(0.0, f64::max);
    let basis = SpectralBasis::new(v.mesh().clone(), s, params.k, params.m_floor())?;
    let dec = basis.decompose(v.values(), params.delta);
    let modes = dec.hat.iter().fold(0.0f64, |a, h| a.max(h.abs()));
    let minus = dec.q_minus.values().iter().map(|z| delta_decompose(*z, params.delta).hat.abs()).fold(0.0, f64::max);
    Ok(point.max(modes).max(minus))
}

fn split_err(a: ComplexSplit, c: ComplexSplit) -> f64 {
    (a.hat - c.hat).abs().max((a.check - c.check).abs())
}

pub fn rhs_suite(params: &Parameters, s: f64, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::named("rhs");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = default_spectral_mesh(s, params.k);
    let b = params.b0;

    let mut min_slope = f64::INFINITY;
    let mut v_worst = 0.0f64;
    let deltas = control_deltas(params);
    for &delta in &deltas {
        let p = Parameters { delta, ..*params };
        for _ in 0..NONLINEAR_SAMPLES {
            let q = random_in_set_q(&mut rng, s, &p, mesh.clone());
            min_slope = min_slope.min(nonlinearity_slope(&q, b, &p)?);
            v_worst = v_worst.max(v_hat_parts(&q, b, s, &p)?);
        }
    }
    let want = params.p.min(2.0) - NONLINEAR_SLACK;
    report.criteria.push(Criterion::new(
        "ac11_nonlinearity_order",
        min_slope >= want,
        min_slope,
        want,
        format!("min slope over {NONLINEAR_SAMPLES} fields per delta in {deltas:?}, eps in [1e-4, 1e-2]"),
    ));
    report.criteria.push(Criterion::below(
        "ac12_v_term_exactness",
        v_worst,
        V_EXACT_TOL,
        format!("max hat part of V, P_n(V) and P_-(V) over delta in {deltas:?}"),
    ));

    // Closed-form rows of L_delta and T against quadrature.
    let q = random_in_set_q(&mut rng, s, params, mesh.clone());
    let basis = SpectralBasis::new(mesh.clone(), s, params.k, params.m_floor() + 2)?;
    let coords: Vec<ComplexSplit> = basis.project_all(q.values()).iter().map(|z| delta_decompose(*z, params.delta)).collect();
    let hat: Vec<f64> = coords.iter().map(|c| c.hat).collect();
    let check: Vec<f64> = coords.iter().map(|c| c.check).collect();
    let ld = crate::operators::apply_Ldelta(&q, s, params.k, params.delta);
    let tp = 0.37;
    let t = term_T(&q, b, tp, params);
    let (mut row_err, mut printed_err) = (0.0f64, 0.0f64);
    for n in 0..=params.m_floor() {
        let quad = project_term(&ld, n, s, params)?;
        let closed = ldelta_row(n, &hat, &check, s, params.k);
        row_err = row_err.max(split_err(quad, closed) / closed.hat.abs().max(closed.check.abs()).max(1e-300));
        let quad = project_term(&t, n, s, params)?;
        let closed = t_row(n, &hat, &check, b, tp, s, params);
        let scale = closed.hat.abs().max(closed.check.abs()).max(1e-300);
        row_err = row_err.max(split_err(quad, closed) / scale);
        printed_err = printed_err.max(split_err(quad, t_row_printed(n, &hat, &check, b, tp, params)) / scale);
    }
    report.checks.push(Criterion::below(
        "rhs_closed_form_rows",
        row_err,
        ROW_TOL,
        format!("L_delta and T rows, n <= M; printed T rows differ by {printed_err:.2e}"),
    ));

    // Term assembly against direct substitution of w into the equation.
    let sub_gap = |n: usize| -> Result<f64> {
        let m = Arc::new(Mesh::symmetric(3.0, n)?);
        let q = GridFunction::from_fn(m, |y| {
            Complex64::new(0.3 + 0.2 * y - 0.1 * y * y, -0.05 + 0.1 * (1.3 * y).sin()) * (-0.1 * y * y).exp()
        });
        let st = ModulationState { s: 2.0, b: 0.9, theta: 0.3, bprime: 0.07, thetaprime: -0.11 };
        Ok(rhs_terms(&q, &st, params, TermForm::Derived).total().sub(&rhs_by_substitution(&q, &st, params))?.sup_norm_interior())
    };
    let (e1, e2) = (sub_gap(401)?, sub_gap(801)?);
    report.checks.push(Criterion::new(
        "rhs_substitution_oracle",
        e1 / e2 > 3.5 && e1 / e2 < 4.5,
        e1 / e2,
        4.0,
        format!("second-order agreement with direct substitution: gaps {e1:.2e}, {e2:.2e}"),
    ));
    Ok(report)
}

// -------------------------------------------------------------- modulation

pub const DETERMINANT_FACTOR: f64 = 5.0;
pub const JACOBIAN_FD_TOL: f64 = 1e-4;
pub const MODULATION_SAMPLES: usize = 8;

/// Determinant of the modulation Jacobian in closed form,
/// `-2^{4k} (2k)! I^{-4k}(s0)`.
pub fn stated_determinant(s0: f64, k: u32) -> f64 {
    let two_k = 2 * k as usize;
    let fact: f64 = (1..=two_k).map(|j| j as f64).product();
    -(2.0f64).powi(4 * k as i32) * fact * scaling_factor(s0, k).powi(-4 * k as i32)
}

/// Leading term `-||H_{2k}||^2 = -2^{2k} (2k)! I^{-4k}` of the measured
/// determinant.
pub fn leading_determinant(s0: f64, k: u32) -> f64 {
    stated_determinant(s0, k) / (2.0f64).powi(2 * k as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianSample {
    pub dhat: Vec<f64>,
    pub jacobian: [[f64; 2]; 2],
    pub determinant: f64,
    /// Largest FD mismatch, relative to the scale of its row.
    pub fd_error: f64,
}

/// Analytic Jacobian at psi data and its central-difference oracle.
pub fn jacobian_sample(dhat: &[f64], s0: f64, params: &Parameters) -> Result<JacobianSample> {
    let mesh = default_spectral_mesh(s0, params.k);
    let q = initial_data_psi(dhat, s0, params, mesh)?;
    let (b, th) = (params.b0, params.theta0);
    let w = w_from_q(&q, b, th, params);
    let j = modulation_jacobian(&w, b, th, s0, params)?;
    let h = 1e-5;
    let fd = |db: f64, dt: f64| -> Result<(f64, f64)> {
        let p = modulation_residual(&w, b + db, th + dt, s0, params)?;
        let m = modulation_residual(&w, b - db, th - dt, s0, params)?;
        Ok(((p.0 - m.0) / (2.0 * h), (p.1 - m.1) / (2.0 * h)))
    };
    let (b1, b2) = fd(h, 0.0)?;
    let (t1, t2) = fd(0.0, h)?;
    let row0 = j[0][0].abs().max(j[0][1].abs());
    let row1 = j[1][0].abs().max(j[1][1].abs());
    let fd_error = ((j[0][0] - b1).abs() / row0)
        .max((j[0][1] - t1).abs() / row0)
        .max((j[1][0] - b2).abs() / row1)
        .max((j[1][1] - t2).abs() / row1);
    Ok(JacobianSample { dhat: dhat.to_vec(), jacobian: j, determinant: det2(&j), fd_error })
}

pub fn modulation_suite(params: &Parameters, s0: f64, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::named("modulation");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = DETERMINANT_FACTOR * scaling_factor(s0, params.k).powf(-params.gamma);
    let stated = stated_determinant(s0, params.k);
    let leading = leading_determinant(s0, params.k);
    let deltas = control_deltas(params);
    let (mut rel_stated, mut rel_leading, mut fd_worst, mut off_diag) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for &delta in &deltas {
        let p = Parameters { delta, ..*params };
        for i in 0..MODULATION_SAMPLES {
            let dhat: Vec<f64> =
                if i == 0 { vec![0.0; p.two_k()] } else { (0..p.two_k()).map(|_| rng.gen_range(-1.0..1.0)).collect() };
            let smp = jacobian_sample(&dhat, s0, &p)?;
            rel_stated = rel_stated.max((smp.determinant - stated).abs() / stated.abs());
            rel_leading = rel_leading.max((smp.determinant - leading).abs() / leading.abs());
            fd_worst = fd_worst.max(smp.fd_error);
            off_diag = off_diag.max(smp.jacobian[0][1].abs() / smp.jacobian[0][0].abs());
        }
    }
    report.criteria.push(Criterion::new(
        "ac05_modulation_jacobian",
        rel_stated <= tol && fd_worst < JACOBIAN_FD_TOL,
        rel_stated,
        tol,
        format!(
            "relative to -2^(4k)(2k)! I^(-4k); to -2^(2k)(2k)! I^(-4k): {rel_leading:.3e}; FD mismatch {fd_worst:.2e} (< {JACOBIAN_FD_TOL:.0e}); dF1/dtheta relative {off_diag:.1e}; delta in {deltas:?}"
        ),
    ));
    report.checks.push(Criterion::below(
        "modulation_leading_determinant",
        rel_leading,
        tol,
        "determinant against -||H_2k||^2 at the same tolerance".into(),
    ));

    // Newton recovers a frame shifted off psi data.
    let mesh = default_spectral_mesh(s0, params.k);
    let dhat: Vec<f64> = (0..params.two_k()).map(|j| 0.4 - 0.25 * j as f64).collect();
    let q = initial_data_psi(&dhat, s0, params, mesh)?;
    let w = w_from_q(&q, params.b0, params.theta0, params);
    let start = ModulationState { s: s0, b: params.b0 * 1.05, theta: params.theta0 + 0.02, bprime: 0.0, thetaprime: 0.0 };
    let (found, out) = newton_enforce_constraints(&w, &start, params, 1e-12, 25)?;
    let err = (found.b - params.b0).abs().max((found.theta - params.theta0).abs());
    report.checks.push(Criterion::below(
        "modulation_newton_recovery",
        err,
        1e-8,
        format!("{} iterations, residual history {:?}", out.iterations, out.history),
    ));
    Ok(report)
}

// ------------------------------------------------------------- run checks

pub const CONSTRAINT_TOL: f64 = 1e-8;
pub const MIN_RUN_SPAN: f64 = 10.0;
pub const MODE_RESIDUAL_BOUND: f64 = 100.0;
/// Transient skipped before profile convergence is assessed.
pub const PROFILE_TRANSIENT: f64 = 3.0;

/// Criteria 6 to 9 along one trajectory, which must stay in the set.
pub fn run_criteria(trace: &SimulationTrace) -> Result<Vec<Criterion>> {
    let params = &trace.params;
    let recs = trace.in_set();
    if recs.is_empty() {
        return Err(Error::InsufficientData("trace has no in-set records".into()));
    }
    let span = recs.last().unwrap().state.s - recs[0].state.s;
    let long_enough = span >= MIN_RUN_SPAN;
    let mut out = Vec::new();

    let constraint = recs.iter().map(|r| r.constraint_residual).fold(0.0, f64::max);
    out.push(Criterion::new(
        "ac06_constraint_maintenance",
        long_enough && constraint < CONSTRAINT_TOL,
        constraint,
        CONSTRAINT_TOL,
        format!("{} accepted steps over {span:.2} units of s", recs.len()),
    ));

    let res = mode_residuals(trace)?;
    let c = res.constant(params);
    out.push(Criterion::below(
        "ac07_mode_ode_residuals",
        c,
        MODE_RESIDUAL_BOUND,
        format!(
            "run constant c = {c:.4}; hat {:?}; check {:?}",
            res.hat[..params.two_k()].iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>(),
            res.check.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>()
        ),
    ));

    let bound = params.big_a * params.big_a;
    let rates = res.bprime.max(res.thetaprime);
    let (bmin, bmax) = recs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, r| (a.0.min(r.state.b), a.1.max(r.state.b)));
    let theta_dev = recs.iter().map(|r| (r.state.theta - params.theta0).abs()).fold(0.0, f64::max);
    let b_ok = bmin >= 0.75 * params.b0 && bmax <= 1.25 * params.b0;
    out.push(Criterion::new(
        "ac08_modulation_smallness",
        rates <= bound && b_ok && theta_dev <= 0.125,
        rates,
        bound,
        format!(
            "max I^(2 gamma)|b'| {:.3e}, |theta'| {:.3e} against A^2; b in [{bmin:.5}, {bmax:.5}]; |theta - theta0| <= {theta_dev:.2e}",
            res.bprime, res.thetaprime
        ),
    ));

    let ac09 = match (trace.survived(), extract_rates(trace, PROFILE_TRANSIENT)) {
        (true, Ok(r)) => {
            let pass = r.max_relative_increase <= 0.0 && r.rate_fit <= 0.0 && r.b_envelope_ratio <= 1.0;
            Criterion::new(
                "ac09_profile_convergence",
                pass,
                r.rate_fit,
                0.0,
                format!(
                    "log-slope {:.4} (envelope {:.4}); largest relative increase after transient {:.2e}; b_star {:.6}, |b - b_star| envelope ratio {:.3}",
                    r.rate_fit, r.envelope_slope, r.max_relative_increase, r.b_star, r.b_envelope_ratio
                ),
            )
        }
        (false, _) => Criterion::new("ac09_profile_convergence", false, f64::NAN, 0.0, "trajectory left the set".into()),
        (true, Err(e)) => Criterion::new("ac09_profile_convergence", false, f64::NAN, 0.0, e.to_string()),
    };
    out.push(ac09);
    Ok(out)
}

/// Criterion 10 from a finished sweep.
pub fn sweep_criterion(report: &SweepReport) -> Criterion {
    let survivors = report.survivors();
    let exits = report.cells.iter().filter(|c| c.trace.exit.is_some()).count();
    let by_mode = {
        let mut counts = std::collections::BTreeMap::new();
        for c in &report.cells {
            if let Some(e) = c.trace.exit {
                *counts.entry(e.component.to_string()).or_insert(0usize) += 1;
            }
        }
        counts
    };
    let pass = report.hat_exit_fraction == 1.0 && report.outward_fraction == 1.0 && survivors >= 1 && report.boundary_exits_at_s0;
    Criterion::new(
        "ac10_shooting_structure",
        pass,
        report.hat_exit_fraction.min(report.outward_fraction),
        1.0,
        format!(
            "{exits} exits {by_mode:?}; hat fraction {:.3}, outward fraction {:.3}; survivors {survivors}; boundary cells exit at s0: {}",
            report.hat_exit_fraction, report.outward_fraction, report.boundary_exits_at_s0
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonality_small_at_all_times() {
        for s in ORTHOGONALITY_TIMES {
            assert!(orthogonality_error(2, 8, s).unwrap() < 1e-10);
        }
    }

    #[test]
    fn jordan_rows_second_order() {
        let rows = jordan_convergence(2, 4.0, 8).unwrap();
        assert!(rows[0].ratios.is_empty(), "{:?}", rows[0]);
        for r in &rows[3..] {
            assert!(r.ratios.iter().all(|x| (x - 4.0).abs() < 0.5), "{r:?}");
        }
    }

    #[test]
    fn determinant_constants() {
        // 2^8 * 4! = 6144 at I = 1.
        assert_eq!(stated_determinant(0.0, 2), -6144.0);
        assert_eq!(leading_determinant(0.0, 2), -384.0);
    }

    #[test]
    fn random_remainder_is_orthogonal() {
        let params = Parameters::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = RandomRemainder::sample(&mut rng, GAP_SIGMA, &params).unwrap();
        let res = crate::operators::low_mode_residual(&|y| r.eval(y), GAP_SIGMA, &params).unwrap();
        assert!(res < 1e-10, "{res}");
    }

    #[test]
    fn eigenaction_examples() {
        assert!(eigenaction_error(3, 0.0, 1.0, 2).unwrap() < 1e-8);
        assert!(eigenaction_error(10, 4.0, 0.5, 2).unwrap() < 1e-8);
    }

    #[test]
    fn v_hat_parts_vanish() {
        let params = Parameters::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_in_set_q(&mut rng, 8.0, &params, default_spectral_mesh(8.0, 2));
        assert!(v_hat_parts(&q, 1.0, 8.0, &params).unwrap() < 1e-14);
    }
}
