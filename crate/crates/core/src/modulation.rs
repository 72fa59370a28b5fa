//! The two orthogonality constraints fixing `(b, theta)`, their Jacobian
//! and a Newton solver.
//!
//! Constraints: the hat part of the `H_{2k}` projection and the check part
//! of the `H_0` projection of `q` vanish, where
//! `q = w e^{-i theta} (f_b e_b)^{-1} - (p - 1 + b y^{2k})`.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::SpectralBasis;
use crate::linalg::{det2, inv2, mulv2, Mat2};
use crate::mesh::GridFunction;
use crate::model::{conjugate_exponent, delta_decompose, phi};
use crate::params::Parameters;

/// Modulation parameters and their rates at self-similar time `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationState {
    pub s: f64,
    pub b: f64,
    pub theta: f64,
    pub bprime: f64,
    pub thetaprime: f64,
}

impl ModulationState {
    pub fn initial(s0: f64, params: &Parameters) -> Self {
        Self { s: s0, b: params.b0, theta: params.theta0, bprime: 0.0, thetaprime: 0.0 }
    }
}

/// `w = e^{i theta} f_b (1 + e_b q) = e^{i theta} phi^{-c} (phi + q)`.
pub fn w_from_q(q: &GridFunction, b: f64, theta: f64, params: &Parameters) -> GridFunction {
    let c = conjugate_exponent(params);
    let rot = Complex64::from_polar(1.0, theta);
    q.map(|y, v| {
        let ph = phi(b, y, params);
        rot * (-c * ph.ln()).exp() * (ph + v)
    })
}

/// Inverse of [`w_from_q`].
pub fn q_from_w(w: &GridFunction, b: f64, theta: f64, params: &Parameters) -> GridFunction {
    let c = conjugate_exponent(params);
    let rot = Complex64::from_polar(1.0, -theta);
    w.map(|y, v| {
        let ph = phi(b, y, params);
        rot * (c * ph.ln()).exp() * v - ph
    })
}

/// `q` known in a reference frame `(b_ref, theta_ref)`, re-expressed in
/// nearby frames without forming `w`, which keeps round-off proportional to
/// the frame change.
#[derive(Debug, Clone)]
pub struct FrameShift<'a> {
    basis: &'a SpectralBasis,
    q_ref: &'a [Complex64],
    b_ref: f64,
    theta_ref: f64,
    params: &'a Parameters,
    two_k: usize,
}

impl<'a> FrameShift<'a> {
    pub fn new(basis: &'a SpectralBasis, q_ref: &'a [Complex64], b_ref: f64, theta_ref: f64, params: &'a Parameters) -> Self {
        Self { basis, q_ref, b_ref, theta_ref, params, two_k: params.two_k() }
    }

    /// `(1 + E, phi_ref + q_ref)` pieces of the shifted field at node `i`.
    fn factor(&self, i: usize, b: f64, theta: f64) -> (Complex64, f64, f64) {
        let y = self.basis.mesh().y(i);
        let y2k = y.powi(self.two_k as i32);
        let ph_ref = phi(self.b_ref, y, self.params);
        let ph = phi(b, y, self.params);
        let c = conjugate_exponent(self.params);
        let arg = c * ((b - self.b_ref) * y2k / ph_ref).ln_1p() - Complex64::new(0.0, theta - self.theta_ref);
        (exp_m1(arg), ph, y2k)
    }

    /// `q` in the frame `(b, theta)`.
    pub fn shifted(&self, b: f64, theta: f64) -> Vec<Complex64> {
        (0..self.q_ref.len())
            .map(|i| {
                let (e, _, y2k) = self.factor(i, b, theta);
                let y = self.basis.mesh().y(i);
                let g = phi(self.b_ref, y, self.params) + self.q_ref[i];
                self.q_ref[i] + e * g - (b - self.b_ref) * y2k
            })
            .collect()
    }

    /// Raw constraint values `(F1, F2)`.
    pub fn residual(&self, b: f64, theta: f64) -> (f64, f64) {
        let q = self.shifted(b, theta);
        constraint_values(self.basis, &q, self.params)
    }

    /// Analytic partials `[[dF1/db, dF1/dtheta], [dF2/db, dF2/dtheta]]`.
    pub fn jacobian(&self, b: f64, theta: f64) -> Mat2 {
        let c = conjugate_exponent(self.params);
        let n = self.q_ref.len();
        let mut d_theta = Vec::with_capacity(n);
        let mut d_b = Vec::with_capacity(n);
        for i in 0..n {
            let (e, ph, y2k) = self.factor(i, b, theta);
            let y = self.basis.mesh().y(i);
            let head = (e + 1.0) * (phi(self.b_ref, y, self.params) + self.q_ref[i]);
            d_theta.push(Complex64::new(0.0, -1.0) * head);
            d_b.push(c * (y2k / ph) * head - y2k);
        }
        let (b1, b2) = constraint_values(self.basis, &d_b, self.params);
        let (t1, t2) = constraint_values(self.basis, &d_theta, self.params);
        [[b1, t1], [b2, t2]]
    }
}

fn exp_m1(z: Complex64) -> Complex64 {
    // e^{a+ib} - 1 = (e^a - 1) cos b + (cos b - 1) + i e^a sin b
    let (a, b) = (z.re, z.im);
    let em1 = a.exp_m1();
    let cm1 = -2.0 * (0.5 * b).sin().powi(2);
    Complex64::new(em1 * b.cos() + cm1, a.exp() * b.sin())
}

/// Hat part of `int q H_{2k} rho_s` and check part of `int q H_0 rho_s`.
pub fn constraint_values(basis: &SpectralBasis, q: &[Complex64], params: &Parameters) -> (f64, f64) {
    let d = params.delta;
    let f1 = delta_decompose(basis.inner(q, params.two_k()), d).hat;
    let f2 = delta_decompose(basis.inner(q, 0), d).check;
    (f1, f2)
}

/// `|F1|/||H_{2k}||^2 + |F2|/||H_0||^2`, i.e. the sizes of the constrained
/// coordinates themselves.
pub fn normalized_residual(basis: &SpectralBasis, f: (f64, f64), params: &Parameters) -> f64 {
    f.0.abs() / basis.norm_sq(params.two_k()) + f.1.abs() / basis.norm_sq(0)
}

fn basis_for(w: &GridFunction, s: f64, params: &Parameters) -> Result<SpectralBasis> {
    SpectralBasis::new(w.mesh().clone(), s, params.k, params.two_k())
}

/// Raw constraint values for a field `w` in the frame `(b, theta)` at `s`.
pub fn modulation_residual(w: &GridFunction, b: f64, theta: f64, s: f64, params: &Parameters) -> Result<(f64, f64)> {
    check_b(b)?;
    let basis = basis_for(w, s, params)?;
    let q = q_from_w(w, b, theta, params);
    Ok(constraint_values(&basis, q.values(), params))
}

/// Analytic Jacobian of [`modulation_residual`] in `(b, theta)`.
pub fn modulation_jacobian(w: &GridFunction, b: f64, theta: f64, s: f64, params: &Parameters) -> Result<Mat2> {
    check_b(b)?;
    let basis = basis_for(w, s, params)?;
    let q = q_from_w(w, b, theta, params);
    let shift = FrameShift::new(&basis, q.values(), b, theta, params);
    Ok(shift.jacobian(b, theta))
}

fn check_b(b: f64) -> Result<()> {
    if b > 0.0 && b.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name: "b", reason: format!("must be positive, got {b}") })
    }
}

/// Leading-order size of the Jacobian determinant, used to flag
/// near-singular systems.
pub fn determinant_scale(basis: &SpectralBasis, params: &Parameters) -> f64 {
    basis.norm_sq(params.two_k())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonOutcome {
    pub b: f64,
    pub theta: f64,
    pub iterations: usize,
    /// Normalized residual before each iteration and after the last one.
    pub history: Vec<f64>,
}

/// Newton iteration on `(b, theta)` starting from `(b_start, theta_start)`.
pub fn newton_solve(shift: &FrameShift<'_>, b_start: f64, theta_start: f64, tol: f64, max_iter: usize) -> Result<NewtonOutcome> {
    let params = shift.params;
    let scale = determinant_scale(shift.basis, params);
    let (mut b, mut theta) = (b_start, theta_start);
    let mut history = Vec::new();
    for it in 0..=max_iter {
        let f = shift.residual(b, theta);
        let r = normalized_residual(shift.basis, f, params);
        if !r.is_finite() {
            return Err(Error::NonFinite("constraint residual".into()));
        }
        history.push(r);
        if r < tol {
            return Ok(NewtonOutcome { b, theta, iterations: it, history });
        }
        if it == max_iter {
            break;
        }
        let j = shift.jacobian(b, theta);
        let det = det2(&j);
        if !(det.abs() >= 1e-3 * scale) {
            return Err(Error::SingularJacobian { det });
        }
        let inv = inv2(&j).ok_or(Error::SingularJacobian { det })?;
        let step = mulv2(&inv, &[f.0, f.1]);
        b -= step[0];
        theta -= step[1];
        check_b(b)?;
    }
    Err(Error::NewtonFailed { residual: *history.last().unwrap_or(&f64::NAN), iterations: max_iter })
}

/// Enforces the constraints for `w` starting from `state`, returning the
/// new parameters. Rates in `state` are left untouched; the time stepper
/// owns them.
pub fn newton_enforce_constraints(
    w: &GridFunction,
    state: &ModulationState,
    params: &Parameters,
    tol: f64,
    max_iter: usize,
) -> Result<(ModulationState, NewtonOutcome)> {
    check_b(state.b)?;
    let basis = basis_for(w, state.s, params)?;
    let q = q_from_w(w, state.b, state.theta, params);
    let shift = FrameShift::new(&basis, q.values(), state.b, state.theta, params);
    let out = newton_solve(&shift, state.b, state.theta, tol, max_iter)?;
    Ok((ModulationState { b: out.b, theta: out.theta, ..*state }, out))
}

/// Shared mesh handle used by callers building `w` fields.
pub type MeshHandle = Arc<crate::mesh::Mesh>;
