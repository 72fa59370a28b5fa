#![allow(non_snake_case)]
//! Every term of the equation satisfied by the linearized solution `q`,
//! together with closed-form and quadrature projections onto the
//! `(1 + i delta) H_n` and `i H_n` directions.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hermite::{default_spectral_mesh, hermite_poly_eval, monomial_projection, SpectralBasis};
use crate::mesh::{derivatives, GridFunction};
use crate::model::{conjugate_exponent, delta_decompose, phi, scaling_factor, ComplexSplit};
use crate::modulation::ModulationState;
use crate::operators::apply_Ldelta;
use crate::params::Parameters;

/// Which algebraic form of `T` and `R_s` to use.
///
/// `Derived` is the form obtained by substituting the ansatz into the
/// similarity equation. `Printed` keeps two variants that circulate in the
/// literature: `T` with `-q` in place of `+q`, and the `q`-linear part of
/// `R_s` without its factor `e_b`. It exists only so the discrepancy can be
/// measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TermForm {
    #[default]
    Derived,
    Printed,
}

/// The four profile constants of `R_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alphas {
    pub a1: Complex64,
    pub a2: Complex64,
    pub a3: Complex64,
    pub a4: Complex64,
}

pub fn alphas(b: f64, params: &Parameters) -> Alphas {
    let (p, d, k) = (params.p, params.delta, params.kf());
    let one_id = Complex64::new(1.0, d);
    let p_id = Complex64::new(p, d);
    let q = p - 1.0;
    Alphas {
        a1: -one_id * (2.0 * k * (2.0 * k - 1.0) * b / q),
        a2: one_id * p_id * (4.0 * k * k * b * b / (q * q)),
        a3: -p_id * (2.0 * k * (2.0 * k - 1.0) * b / q),
        a4: p_id * Complex64::new(2.0 * p - 1.0, d) * (4.0 * k * k * b * b / (q * q)),
    }
}

/// Pointwise `V(q) = ((p-1) e_b - 1)((1 + i delta) Re q - q)`.
pub fn v_point(y: f64, q: Complex64, b: f64, params: &Parameters) -> Complex64 {
    // (p-1) e_b - 1 = -b y^{2k} e_b, which keeps the prefactor accurate near 0.
    let y2k = y.powi(2 * params.k as i32);
    let pref = -b * y2k / phi(b, y, params);
    pref * (Complex64::new(q.re, params.delta * q.re) - q)
}

/// Pointwise nonlinear remainder `N(q)`.
pub fn n_point(y: f64, q: Complex64, b: f64, params: &Parameters) -> Complex64 {
    let p = params.p;
    let x = q / phi(b, y, params);
    // |1 + x|^{p-1} - 1 via expm1/ln1p to keep the cancellation benign.
    let a = (0.5 * (p - 1.0) * (2.0 * x.re + x.norm_sqr()).ln_1p()).exp_m1();
    let full = x + a + a * x;
    let linear = 2.0 * x.re + 0.5 * (p - 1.0) * x + 0.5 * (p - 3.0) * x.conj();
    Complex64::new(1.0, params.delta) * (full - linear)
}

/// Pointwise `B(q)`.
pub fn b_point(y: f64, q: Complex64, b: f64, bprime: f64, params: &Parameters) -> Complex64 {
    let (p, d) = (params.p, params.delta);
    let y2k = y.powi(2 * params.k as i32);
    bprime / (p - 1.0) * y2k * (Complex64::new(1.0, d) + Complex64::new(p, d) * q / phi(b, y, params))
}

/// Pointwise `T(q)`.
pub fn t_point(y: f64, q: Complex64, b: f64, thetaprime: f64, params: &Parameters, form: TermForm) -> Complex64 {
    let base = Complex64::new(phi(b, y, params), 0.0);
    let inner = match form {
        TermForm::Derived => base + q,
        TermForm::Printed => base - q,
    };
    Complex64::new(0.0, -thetaprime) * inner
}

/// Coefficient multiplying `q'` in `D_s`.
pub fn ds_coefficient(y: f64, b: f64, s: f64, params: &Parameters) -> Complex64 {
    let (p, d, k) = (params.p, params.delta, params.kf());
    let i2 = scaling_factor(s, params.k).powi(2);
    let y_odd = y.powi(2 * params.k as i32 - 1);
    -Complex64::new(p, d) / (p - 1.0) * (4.0 * k * b * y_odd / (phi(b, y, params) * i2))
}

/// Source part `R_s(0)` and the coefficient of `q` in `R_s`.
pub fn rs_parts(y: f64, b: f64, s: f64, params: &Parameters, form: TermForm) -> (Complex64, Complex64) {
    let al = alphas(b, params);
    let i2 = scaling_factor(s, params.k).powi(2);
    let e = 1.0 / phi(b, y, params);
    let y2k = y.powi(2 * params.k as i32);
    let pre = y.powi(2 * params.k as i32 - 2) / i2;
    let source = pre * (al.a1 + al.a2 * (y2k * e));
    let lin = pre * (al.a3 + al.a4 * (y2k * e));
    let lin = match form {
        TermForm::Derived => lin * e,
        TermForm::Printed => lin,
    };
    (source, lin)
}

/// Pointwise `R_s(q)`.
pub fn rs_point(y: f64, q: Complex64, b: f64, s: f64, params: &Parameters, form: TermForm) -> Complex64 {
    let (src, lin) = rs_parts(y, b, s, params, form);
    src + lin * q
}

fn pointwise(q: &GridFunction, f: impl Fn(f64, Complex64) -> Complex64) -> GridFunction {
    q.map(f)
}

pub fn term_V(q: &GridFunction, b: f64, params: &Parameters) -> GridFunction {
    pointwise(q, |y, v| v_point(y, v, b, params))
}

pub fn term_N(q: &GridFunction, b: f64, params: &Parameters) -> GridFunction {
    pointwise(q, |y, v| n_point(y, v, b, params))
}

pub fn term_B(q: &GridFunction, b: f64, bprime: f64, params: &Parameters) -> GridFunction {
    pointwise(q, |y, v| b_point(y, v, b, bprime, params))
}

pub fn term_T(q: &GridFunction, b: f64, thetaprime: f64, params: &Parameters) -> GridFunction {
    term_T_form(q, b, thetaprime, params, TermForm::Derived)
}

pub fn term_T_form(q: &GridFunction, b: f64, thetaprime: f64, params: &Parameters, form: TermForm) -> GridFunction {
    pointwise(q, |y, v| t_point(y, v, b, thetaprime, params, form))
}

/// `D_s` applied to a precomputed gradient.
pub fn term_Ds(gradq: &GridFunction, b: f64, s: f64, params: &Parameters) -> GridFunction {
    pointwise(gradq, |y, g| ds_coefficient(y, b, s, params) * g)
}

pub fn term_Rs(q: &GridFunction, b: f64, s: f64, params: &Parameters) -> GridFunction {
    term_Rs_form(q, b, s, params, TermForm::Derived)
}

pub fn term_Rs_form(q: &GridFunction, b: f64, s: f64, params: &Parameters, form: TermForm) -> GridFunction {
    pointwise(q, |y, v| rs_point(y, v, b, s, params, form))
}

/// All terms of the right side evaluated on one field.
#[derive(Debug, Clone)]
pub struct RhsTerms {
    pub l_delta: GridFunction,
    pub v: GridFunction,
    pub n: GridFunction,
    pub b: GridFunction,
    pub t: GridFunction,
    pub ds: GridFunction,
    pub rs: GridFunction,
    pub alphas: Alphas,
    /// Nodes where `|1 + e_b q| < 1e-6`, at which `N` is not smooth.
    pub near_zero_nodes: usize,
}

impl RhsTerms {
    pub fn total(&self) -> GridFunction {
        let parts = [&self.v, &self.n, &self.b, &self.t, &self.ds, &self.rs];
        parts.iter().fold(self.l_delta.clone(), |acc, t| acc.add(t).expect("same mesh"))
    }
}

pub fn rhs_terms(q: &GridFunction, state: &ModulationState, params: &Parameters, form: TermForm) -> RhsTerms {
    let (b, s) = (state.b, state.s);
    let (d1, _) = derivatives(q.mesh(), q.values());
    let grad = GridFunction::new(q.mesh().clone(), d1).expect("same mesh");
    let near_zero_nodes = q
        .mesh()
        .nodes()
        .iter()
        .zip(q.values())
        .filter(|(&y, &v)| (1.0 + v / phi(b, y, params)).norm() < 1e-6)
        .count();
    RhsTerms {
        l_delta: apply_Ldelta(q, s, params.k, params.delta),
        v: term_V(q, b, params),
        n: term_N(q, b, params),
        b: term_B(q, b, state.bprime, params),
        t: term_T_form(q, b, state.thetaprime, params, form),
        ds: term_Ds(&grad, b, s, params),
        rs: term_Rs_form(q, b, s, params, form),
        alphas: alphas(b, params),
        near_zero_nodes,
    }
}

/// `L_{delta,s} q + B + T + N + D_s + R_s + V`.
pub fn rhs_total(q: &GridFunction, state: &ModulationState, params: &Parameters) -> GridFunction {
    rhs_terms(q, state, params, TermForm::Derived).total()
}

/// `d q/ds` obtained by rebuilding `w = e^{i theta} f_b (1 + e_b q)`,
/// applying the similarity equation to `w` directly and changing variables
/// back. Independent of the term-by-term decomposition; valid on interior
/// nodes.
pub fn rhs_by_substitution(q: &GridFunction, state: &ModulationState, params: &Parameters) -> GridFunction {
    let (p, d, b) = (params.p, params.delta, state.b);
    let c = conjugate_exponent(params);
    let one_id = Complex64::new(1.0, d);
    let rot = Complex64::from_polar(1.0, state.theta);
    let w: Vec<Complex64> = q
        .mesh()
        .nodes()
        .iter()
        .zip(q.values())
        .map(|(&y, &v)| {
            let ph = phi(b, y, params);
            rot * (-c * ph.ln()).exp() * (ph + v)
        })
        .collect();
    let (w1, w2) = derivatives(q.mesh(), &w);
    let i2 = scaling_factor(state.s, params.k).powi(2);
    let drift = 1.0 / params.two_k() as f64;
    let values = q
        .mesh()
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let wi = w[i];
            let w_s = w2[i] / i2 - w1[i] * (drift * y) - one_id / (p - 1.0) * wi + one_id * wi.norm().powf(p - 1.0) * wi;
            let ph = phi(b, y, params);
            let y2k = y.powi(2 * params.k as i32);
            let back = rot.conj() * (c * ph.ln()).exp();
            let qi = q.values()[i];
            back * w_s - Complex64::new(0.0, state.thetaprime) * (ph + qi) + c * (state.bprime * y2k / ph) * (ph + qi)
                - state.bprime * y2k
        })
        .collect();
    GridFunction::new(q.mesh().clone(), values).expect("same mesh")
}

/// Quadrature projection of a term onto `H_n`, split into hat and check parts.
pub fn project_term(term: &GridFunction, n: usize, s: f64, params: &Parameters) -> Result<ComplexSplit> {
    let basis = SpectralBasis::new(term.mesh().clone(), s, params.k, n)?;
    Ok(delta_decompose(basis.project(term.values(), n), params.delta))
}

fn at(v: &[f64], n: usize) -> f64 {
    v.get(n).copied().unwrap_or(0.0)
}

/// Closed-form projection of `L_{delta,s} q`. `hat`/`check` hold the
/// coordinates of the projections `Q_j(q)`; index `n + 2` is used when
/// present.
pub fn ldelta_row(n: usize, hat: &[f64], check: &[f64], s: f64, k: u32) -> ComplexSplit {
    let kf = k as f64;
    let i2 = scaling_factor(s, k).powi(2);
    let c = (1.0 - 1.0 / kf) * ((n + 1) * (n + 2)) as f64 / i2;
    ComplexSplit {
        hat: (1.0 - n as f64 / (2.0 * kf)) * at(hat, n) + c * at(hat, n + 2),
        check: -(n as f64) / (2.0 * kf) * at(check, n) + c * at(check, n + 2),
    }
}

/// Closed-form projection of `d q/ds`, from the coordinate derivatives.
pub fn dsq_row(n: usize, hat_dot: &[f64], check_dot: &[f64], hat: &[f64], check: &[f64], s: f64, k: u32) -> ComplexSplit {
    let i2 = scaling_factor(s, k).powi(2);
    let c = (1.0 - 1.0 / k as f64) * ((n + 1) * (n + 2)) as f64 / i2;
    ComplexSplit { hat: at(hat_dot, n) + c * at(hat, n + 2), check: at(check_dot, n) + c * at(check, n + 2) }
}

/// Closed-form projection of `T(q) = -i theta' (e_b^{-1} + q)`.
///
/// `i q` has hat part `-delta q_hat - q_check` and check part
/// `(1 + delta^2) q_hat + delta q_check`; the profile part is real.
pub fn t_row(n: usize, hat: &[f64], check: &[f64], b: f64, thetaprime: f64, s: f64, params: &Parameters) -> ComplexSplit {
    let d = params.delta;
    let (qh, qc) = (at(hat, n), at(check, n));
    let mut profile = b * at(&monomial_projection(params.two_k(), s, params.k), n);
    if n == 0 {
        profile += params.p - 1.0;
    }
    ComplexSplit {
        hat: thetaprime * (d * qh + qc),
        check: -thetaprime * (profile + (1.0 + d * d) * qh + d * qc),
    }
}

/// The projection table of `T` in its circulating printed form, kept for
/// comparison with [`t_row`].
pub fn t_row_printed(n: usize, hat: &[f64], check: &[f64], b: f64, thetaprime: f64, params: &Parameters) -> ComplexSplit {
    let d = params.delta;
    let two_k = params.two_k();
    let hat_v = if n == two_k {
        thetaprime * at(check, two_k)
    } else {
        -thetaprime * ((1.0 + d * d) * at(hat, n) - d * at(check, n))
    };
    let check_v = if n == 0 {
        -thetaprime * ((params.p - 1.0) + (1.0 + d * d) * at(hat, 0))
    } else if n == two_k {
        -thetaprime * (b - d * at(check, two_k))
    } else {
        -thetaprime * ((1.0 + d * d) * at(hat, n) - d * at(check, n))
    };
    ComplexSplit { hat: hat_v, check: check_v }
}

/// Exact projection of `B(0) = b'/(p-1) y^{2k} (1 + i delta)`.
pub fn b_row_zero(n: usize, bprime: f64, s: f64, params: &Parameters) -> ComplexSplit {
    let proj = at(&monomial_projection(params.two_k(), s, params.k), n);
    ComplexSplit { hat: bprime / (params.p - 1.0) * proj, check: 0.0 }
}

/// Coefficients `c_{m,l}` of the check-mode coupling
/// `check P_n(V) ~ sum_{2km + l = n} c_{m,l} b^m q_check_l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingTable {
    pub p: f64,
    pub k: u32,
    /// `(n, m, l, c_{m,l})` for every `n` in `2k..=floor(M)`.
    pub entries: Vec<(usize, usize, usize, f64)>,
}

impl CouplingTable {
    /// Builds the table; the moment `Q_n(y^{2km} H_l)` is evaluated by
    /// quadrature at time `s`.
    pub fn new(params: &Parameters, s: f64) -> Result<Self> {
        let k = params.k;
        let two_k = params.two_k();
        let nmax = params.m_floor();
        let mesh = default_spectral_mesh(s, k);
        let basis = SpectralBasis::new(mesh.clone(), s, k, nmax)?;
        let a = scaling_factor(s, k).powi(-2);
        let mut entries = Vec::new();
        for n in two_k..=nmax {
            let mut m = 1;
            while 2 * k as usize * m <= n {
                let l = n - two_k * m;
                let f: Vec<Complex64> = mesh
                    .nodes()
                    .iter()
                    .map(|&y| Complex64::new(y.powi((two_k * m) as i32) * hermite_poly_eval(l, y, a), 0.0))
                    .collect();
                let moment = basis.project(&f, n).re;
                let sign = if m % 2 == 1 { 1.0 } else { -1.0 };
                entries.push((n, m, l, sign * moment / (params.p - 1.0).powi(m as i32)));
                m += 1;
            }
        }
        Ok(Self { p: params.p, k, entries })
    }

    /// `sum c_{m,l} b^m check_l` for mode `n`.
    pub fn coupling(&self, n: usize, check: &[f64], b: f64) -> f64 {
        self.entries.iter().filter(|e| e.0 == n).map(|&(_, m, l, c)| c * b.powi(m as i32) * at(check, l)).sum()
    }

    pub fn get(&self, m: usize, l: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.1 == m && e.2 == l).map(|e| e.3)
    }
}

/// Leading-order projection of `V`: zero hat part, check part from the
/// coupling table.
pub fn v_row(n: usize, check: &[f64], b: f64, table: &CouplingTable) -> ComplexSplit {
    ComplexSplit { hat: 0.0, check: table.coupling(n, check, b) }
}

/// Spectral mesh shared by the projection checks.
pub fn projection_mesh(s: f64, k: u32) -> Arc<crate::mesh::Mesh> {
    default_spectral_mesh(s, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::{hermite_H, split_modes};
    use crate::mesh::Mesh;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn prm(delta: f64) -> Parameters {
        Parameters { delta, ..Parameters::default() }
    }

    fn state(s: f64, b: f64, bp: f64, tp: f64) -> ModulationState {
        ModulationState { s, b, theta: 0.3, bprime: bp, thetaprime: tp }
    }

    #[test]
    fn alpha_values() {
        let a = alphas(1.0, &prm(0.0));
        assert_relative_eq!(a.a1.re, -6.0);
        assert_eq!(a.a1.im, 0.0);
        assert_relative_eq!(a.a2.re, 4.0 * 3.0 * 4.0 / 4.0);
        let a = alphas(0.5, &prm(1.0));
        assert_relative_eq!(a.a3.re, -3.0 * 12.0 * 0.5 / 2.0);
        assert_relative_eq!(a.a4.im, 4.0 * 4.0 * 0.25 / 4.0 * (3.0 + 5.0));
    }

    #[test]
    fn v_examples() {
        let params = prm(0.8);
        for &y in &[-1.0, 0.0, 0.3, 2.0] {
            let r = 0.7;
            let v = v_point(y, Complex64::new(r, 0.0), 1.0, &params);
            let pref = (params.p - 1.0) / phi(1.0, y, &params) - 1.0;
            assert!((v - Complex64::new(0.0, 0.8 * r * pref)).norm() < 1e-14);
            let along = Complex64::new(1.0, 0.8) * 1.7;
            assert!(v_point(y, along, 1.0, &params).norm() < 1e-14);
        }
        assert_eq!(v_point(0.0, Complex64::new(0.3, -2.0), 1.3, &params), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn n_examples() {
        let params = prm(0.0);
        assert_eq!(n_point(0.4, Complex64::new(0.0, 0.0), 1.0, &params), Complex64::new(0.0, 0.0));
        for &(y, q) in &[(0.0, 0.01), (1.0, -0.2), (2.0, 0.5)] {
            let e = 1.0 / phi(1.0, y, &params);
            let want = 3.0 * e * e * q * q + e * e * e * q * q * q;
            let got = n_point(y, Complex64::new(q, 0.0), 1.0, &params);
            assert!((got.re - want).abs() < 1e-14 * (1.0 + want.abs()) + 1e-17, "{got} vs {want}");
            assert!(got.im.abs() < 1e-15);
        }
    }

    #[test]
    fn zero_field_reduces_to_source() {
        let params = prm(1.0);
        let s = 8.0;
        let mesh = Arc::new(Mesh::symmetric(3.0, 301).unwrap());
        let q = GridFunction::zeros(mesh.clone());
        let st = state(s, 1.1, 0.0, 0.0);
        let total = rhs_total(&q, &st, &params);
        let src = term_Rs(&q, 1.1, s, &params);
        assert!(total.sub(&src).unwrap().sup_norm() < 1e-15);
        assert_eq!(term_B(&q, 1.0, 0.0, &params).sup_norm(), 0.0);
        assert_eq!(term_T(&q, 1.0, 0.0, &params).sup_norm(), 0.0);
    }

    fn smooth_q(mesh: Arc<Mesh>, amp: f64) -> GridFunction {
        GridFunction::from_fn(mesh, |y| {
            Complex64::new(0.3 + 0.2 * y - 0.1 * y * y, -0.05 + 0.1 * (1.3 * y).sin()) * amp * (-0.1 * y * y).exp()
        })
    }

    fn substitution_gap(form: TermForm, n: usize) -> f64 {
        let params = prm(1.0);
        let mesh = Arc::new(Mesh::symmetric(3.0, n).unwrap());
        let q = smooth_q(mesh, 1.0);
        let st = state(2.0, 0.9, 0.07, -0.11);
        let a = rhs_terms(&q, &st, &params, form).total();
        let b = rhs_by_substitution(&q, &st, &params);
        a.sub(&b).unwrap().sup_norm_interior()
    }

    #[test]
    fn substitution_oracle_agrees_to_fd_order() {
        let (e1, e2) = (substitution_gap(TermForm::Derived, 401), substitution_gap(TermForm::Derived, 801));
        assert!(e2 < 2e-3 && e1 / e2 > 3.5, "derived form: {e1} {e2}");
        let printed = substitution_gap(TermForm::Printed, 801);
        assert!(printed > 1e-2, "printed form unexpectedly consistent: {printed}");
    }

    #[test]
    fn profile_source_matches_substitution() {
        // w = f_b exactly: q = 0 and the leftover is R_s(0) + B(0) + T(0).
        let params = prm(1.0);
        let gap = |n: usize| {
            let mesh = Arc::new(Mesh::symmetric(2.5, n).unwrap());
            let q = GridFunction::zeros(mesh.clone());
            let st = state(0.5, 1.2, 0.0, 0.0);
            let sub = rhs_by_substitution(&q, &st, &params);
            let src = term_Rs(&q, 1.2, 0.5, &params);
            sub.sub(&src).unwrap().sup_norm_interior() / src.sup_norm()
        };
        let (e1, e2) = (gap(801), gap(1601));
        assert!(e2 < 1e-4 && e1 / e2 > 3.5, "{e1} {e2}");
    }

    #[test]
    fn linearization_matches_linear_terms() {
        let params = prm(0.6);
        let s = 3.0;
        let mesh = Arc::new(Mesh::symmetric(3.0, 601).unwrap());
        let st = state(s, 1.0, 0.02, -0.05);
        let zero = GridFunction::zeros(mesh.clone());
        for n in [0usize, 2, 3, 5] {
            let h = GridFunction::from_real_fn(mesh.clone(), |y| hermite_H(n, y, s, 2).unwrap());
            let eps = 1e-4;
            let plus = rhs_total(&h.scale(Complex64::new(eps, 0.0)), &st, &params);
            let minus = rhs_total(&h.scale(Complex64::new(-eps, 0.0)), &st, &params);
            let jv = plus.sub(&minus).unwrap().scale(Complex64::new(0.5 / eps, 0.0));
            let grad = h.derivative();
            let lin = apply_Ldelta(&h, s, 2, params.delta)
                .add(&term_B(&h, 1.0, 0.02, &params).sub(&term_B(&zero, 1.0, 0.02, &params)).unwrap())
                .unwrap()
                .add(&term_T(&h, 1.0, -0.05, &params).sub(&term_T(&zero, 1.0, -0.05, &params)).unwrap())
                .unwrap()
                .add(&term_Ds(&grad, 1.0, s, &params))
                .unwrap()
                .add(&term_Rs(&h, 1.0, s, &params).sub(&term_Rs(&zero, 1.0, s, &params)).unwrap())
                .unwrap()
                .add(&term_V(&h, 1.0, &params))
                .unwrap();
            let err = jv.sub(&lin).unwrap().sup_norm() / lin.sup_norm();
            assert!(err < 1e-6, "n={n}: {err}");
        }
    }

    #[test]
    fn closed_form_rows_match_quadrature() {
        let params = prm(1.0);
        let s = 8.0;
        let k = params.k;
        let mesh = projection_mesh(s, k);
        let i = scaling_factor(s, k);
        let q = GridFunction::from_fn(mesh.clone(), |y| {
            let z = i * y;
            Complex64::new(0.2 * z.sin() + 0.1 * (0.5 * z * z).cos(), 0.3 * (-(z - 0.4).powi(2) / 3.0).exp()) * 0.1
        });
        let qs = SpectralBasis::new(mesh.clone(), s, k, params.m_floor() + 2).unwrap();
        let coords: Vec<ComplexSplit> = qs.project_all(q.values()).iter().map(|z| delta_decompose(*z, params.delta)).collect();
        let hat: Vec<f64> = coords.iter().map(|c| c.hat).collect();
        let check: Vec<f64> = coords.iter().map(|c| c.check).collect();
        let ld = apply_Ldelta(&q, s, k, params.delta);
        let (b, tp) = (1.1, 0.37);
        let t = term_T(&q, b, tp, &params);
        let b0 = term_B(&GridFunction::zeros(mesh.clone()), b, 0.2, &params);
        for n in 0..=params.m_floor() {
            let rel = |a: ComplexSplit, c: ComplexSplit, scale: f64| ((a.hat - c.hat).abs().max((a.check - c.check).abs())) / scale;
            let quad = project_term(&ld, n, s, &params).unwrap();
            let closed = ldelta_row(n, &hat, &check, s, k);
            let scale = closed.hat.abs().max(closed.check.abs()).max(1e-300);
            assert!(rel(quad, closed, scale) < 1e-4, "L n={n}: {quad:?} vs {closed:?}");
            let quad = project_term(&t, n, s, &params).unwrap();
            let closed = t_row(n, &hat, &check, b, tp, s, &params);
            let scale = closed.hat.abs().max(closed.check.abs());
            assert!(rel(quad, closed, scale) < 1e-10, "T n={n}: {quad:?} vs {closed:?}");
            let quad = project_term(&b0, n, s, &params).unwrap();
            let closed = b_row_zero(n, 0.2, s, &params);
            assert!(rel(quad, closed, 1.0) < 1e-12, "B n={n}");
        }
    }

    #[test]
    fn ds_projection_of_two_mode_function() {
        let k = 2;
        let params = prm(0.5);
        let n = 2;
        let a = |s: f64| Complex64::new(0.3 * s.sin(), 0.1 * s);
        let c = |s: f64| Complex64::new(0.2 * s.cos(), -0.05 * s * s);
        let field = |s: f64, mesh: Arc<Mesh>| {
            GridFunction::from_fn(mesh, move |y| {
                a(s) * hermite_H(n, y, s, k).unwrap() + c(s) * hermite_H(n + 2, y, s, k).unwrap()
            })
        };
        let s = 6.0;
        let h = 1e-4;
        let mesh = projection_mesh(s, k);
        let dq = field(s + h, mesh.clone()).sub(&field(s - h, mesh.clone())).unwrap().scale(Complex64::new(0.5 / h, 0.0));
        let quad = project_term(&dq, n, s, &params).unwrap();
        let da = (a(s + h) - a(s - h)) / (2.0 * h);
        let sa = delta_decompose(da, params.delta);
        let sc = delta_decompose(c(s), params.delta);
        let hat_dot = vec![0.0, 0.0, sa.hat];
        let check_dot = vec![0.0, 0.0, sa.check];
        let hat = vec![0.0, 0.0, 0.0, 0.0, sc.hat];
        let check = vec![0.0, 0.0, 0.0, 0.0, sc.check];
        let closed = dsq_row(n, &hat_dot, &check_dot, &hat, &check, s, k);
        assert!((quad.hat - closed.hat).abs() < 1e-6 && (quad.check - closed.check).abs() < 1e-6, "{quad:?} vs {closed:?}");
    }

    #[test]
    fn printed_t_table_differs_from_quadrature() {
        let params = prm(1.0);
        let s = 8.0;
        let mesh = projection_mesh(s, params.k);
        let q = GridFunction::from_fn(mesh.clone(), |y| Complex64::new(0.01 + 0.02 * y, 0.03));
        let d = split_modes(&q, s, &params).unwrap();
        let t = term_T(&q, 1.0, 0.5, &params);
        let quad = project_term(&t, 1, s, &params).unwrap();
        let printed = t_row_printed(1, &d.hat, &d.check, 1.0, 0.5, &params);
        assert!((quad.hat - printed.hat).abs() > 1e-3);
    }

    #[test]
    fn coupling_coefficient_from_quadrature_oracle() {
        let params = prm(1.0);
        let table = CouplingTable::new(&params, 8.0).unwrap();
        let c10 = table.get(1, 0).unwrap();
        assert_relative_eq!(c10, 1.0 / (params.p - 1.0), max_relative = 1e-10);
        // Brute force: project (1 - (p-1) e_b) H_0 onto H_{2k} at large s.
        let s = 20.0;
        let b = 0.8;
        let mesh = projection_mesh(s, params.k);
        let f = GridFunction::from_real_fn(mesh, |y| 1.0 - (params.p - 1.0) / phi(b, y, &params));
        let brute = crate::hermite::project_Qn(&f, 4, s, params.k).unwrap().re / b;
        assert_relative_eq!(brute, c10, max_relative = 1e-5);
        assert!(brute > 0.0);
    }

    #[test]
    fn v_recurrence_at_large_s() {
        let params = prm(1.0);
        let s = 30.0;
        let b = 0.9;
        let mesh = projection_mesh(s, params.k);
        let table = CouplingTable::new(&params, s).unwrap();
        let checks = [0.0, 0.2, -0.1, 0.05, 0.0, 0.07, -0.02];
        let q = GridFunction::from_fn(mesh.clone(), |y| {
            checks.iter().enumerate().map(|(l, c)| Complex64::new(0.0, *c) * hermite_H(l, y, s, 2).unwrap()).sum()
        });
        let v = term_V(&q, b, &params);
        for n in 4..=6 {
            let quad = project_term(&v, n, s, &params).unwrap();
            let closed = v_row(n, &checks, b, &table);
            assert!(quad.hat.abs() < 1e-12);
            let scale = closed.check.abs().max(b * 0.2);
            assert!((quad.check - closed.check).abs() < 1e-4 * scale, "n={n}: {quad:?} {closed:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn v_has_no_hat_part(re in -3.0..3.0f64, im in -3.0..3.0f64, y in -5.0..5.0f64, b in 0.3..3.0f64, d in -2.0..2.0f64) {
            let params = prm(d);
            let v = v_point(y, Complex64::new(re, im), b, &params);
            prop_assert!(v.re.abs() < 1e-15);
            // check part equals (1 - (p-1) e_b) q_check
            let qc = im - d * re;
            let want = (1.0 - (params.p - 1.0) / phi(b, y, &params)) * qc;
            prop_assert!((v.im - d * v.re - want).abs() < 1e-12 * (1.0 + want.abs()));
        }

        #[test]
        fn n_is_quadratically_small(re in -1.0..1.0f64, im in -1.0..1.0f64, y in -3.0..3.0f64) {
            let params = prm(1.0);
            let q = Complex64::new(re, im);
            prop_assume!(q.norm() > 0.1);
            let e1 = n_point(y, q * 1e-3, 1.0, &params).norm();
            let e2 = n_point(y, q * 1e-4, 1.0, &params).norm();
            prop_assert!(e1 / e2 > 90.0 && e1 / e2 < 110.0, "ratio {}", e1 / e2);
        }
    }
}
