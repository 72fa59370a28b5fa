//! Self-similar frame, the flat profile family and the `delta`-split of
//! complex numbers.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{GridFunction, Mesh};
use crate::params::Parameters;

/// `I(s) = exp((s/2)(1 - 1/k))`.
pub fn scaling_factor(s: f64, k: u32) -> f64 {
    (0.5 * s * (1.0 - 1.0 / k as f64)).exp()
}

/// Profile denominator `p - 1 + b y^{2k}`.
pub fn phi(b: f64, y: f64, params: &Parameters) -> f64 {
    params.p - 1.0 + b * y.powi(2 * params.k as i32)
}

/// `f_b(y) = (p - 1 + b y^{2k})^{-(1 + i delta)/(p - 1)}` on the principal branch.
pub fn profile_f(b: f64, y: f64, params: &Parameters) -> Complex64 {
    let l = phi(b, y, params).ln();
    let e = -l / (params.p - 1.0);
    Complex64::from_polar(e.exp(), params.delta * e)
}

/// `e_b(y) = 1/(p - 1 + b y^{2k})`.
pub fn profile_e(b: f64, y: f64, params: &Parameters) -> f64 {
    1.0 / phi(b, y, params)
}

/// Exponent `c = (p + i delta)/(p - 1)` with `(f_b e_b)^{-1} = phi^c`.
pub fn conjugate_exponent(params: &Parameters) -> Complex64 {
    Complex64::new(params.p, params.delta) / (params.p - 1.0)
}

/// Coordinates of `z = hat (1 + i delta) + i check`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ComplexSplit {
    pub hat: f64,
    pub check: f64,
}

pub fn delta_decompose(z: Complex64, delta: f64) -> ComplexSplit {
    ComplexSplit { hat: z.re, check: z.im - delta * z.re }
}

pub fn delta_recompose(split: ComplexSplit, delta: f64) -> Complex64 {
    Complex64::new(split.hat, split.hat * delta + split.check)
}

/// Self-similar time together with the blow-up time used for physical maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub s: f64,
    pub big_t: f64,
}

impl Frame {
    pub fn from_physical(t: f64, big_t: f64) -> Result<Self> {
        if !(t < big_t) || !t.is_finite() || !big_t.is_finite() {
            return Err(Error::InvalidParameter {
                name: "t",
                reason: format!("physical time {t} must precede the blow-up time {big_t}"),
            });
        }
        Ok(Self { s: -(big_t - t).ln(), big_t })
    }

    /// Remaining time `T - t = e^{-s}`.
    pub fn remaining(&self) -> f64 {
        (-self.s).exp()
    }

    pub fn t(&self) -> f64 {
        self.big_t - self.remaining()
    }

    pub fn i(&self, k: u32) -> f64 {
        scaling_factor(self.s, k)
    }
}

/// Maps `u(x, t)` to `w(y, s)`.
///
/// Without a target the output lives on the rescaled copy of the input mesh;
/// otherwise it is resampled onto `target` by cubic interpolation.
pub fn to_similarity(
    u: &GridFunction,
    t: f64,
    big_t: f64,
    params: &Parameters,
    target: Option<Arc<Mesh>>,
) -> Result<(GridFunction, Frame)> {
    let frame = Frame::from_physical(t, big_t)?;
    let tau = frame.remaining();
    let amp = Complex64::new(1.0, params.delta).scale(1.0 / (params.p - 1.0)) * tau.ln();
    let factor = amp.exp();
    let y_mesh = Arc::new(u.mesh().scaled(tau.powf(-1.0 / params.two_k() as f64)));
    let w = GridFunction::new(y_mesh, u.values().iter().map(|v| v * factor).collect())?;
    Ok((match target {
        Some(m) => w.resample(m),
        None => w,
    }, frame))
}

/// Inverse of [`to_similarity`].
pub fn from_similarity(
    w: &GridFunction,
    frame: Frame,
    params: &Parameters,
    target: Option<Arc<Mesh>>,
) -> Result<GridFunction> {
    let tau = frame.remaining();
    let amp = Complex64::new(1.0, params.delta).scale(-1.0 / (params.p - 1.0)) * tau.ln();
    let factor = amp.exp();
    let x_mesh = Arc::new(w.mesh().scaled(tau.powf(1.0 / params.two_k() as f64)));
    let u = GridFunction::new(x_mesh, w.values().iter().map(|v| v * factor).collect())?;
    Ok(match target {
        Some(m) => u.resample(m),
        None => u,
    })
}
