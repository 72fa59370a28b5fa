#![allow(non_snake_case)]
//! Linear operators of the linearized flow, their Mehler semigroups and
//! an empirical decay-rate measurement on the remainder.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{hermite_poly_eval, spectral_mesh, SpectralBasis};
use crate::linalg::fit_line;
use crate::mesh::{derivatives, GridFunction, Mesh};
use crate::model::scaling_factor;
use crate::params::Parameters;

/// `L_{0,s} q = I^{-2} q'' - (1/2k) y q'`.
pub fn apply_L0s(q: &GridFunction, s: f64, k: u32) -> GridFunction {
    let i2 = scaling_factor(s, k).powi(2);
    let (d1, d2) = derivatives(q.mesh(), q.values());
    let drift = 1.0 / (2.0 * k as f64);
    let values = q.mesh().nodes().iter().zip(d1.iter().zip(&d2)).map(|(&y, (a, b))| b / i2 - a * (drift * y)).collect();
    GridFunction::new(q.mesh().clone(), values).expect("same mesh")
}

/// `L_s q = L_{0,s} q + q`.
pub fn apply_Ls(q: &GridFunction, s: f64, k: u32) -> GridFunction {
    apply_L0s(q, s, k).add(q).expect("same mesh")
}

/// `L_{delta,s} q = L_{0,s} q + (1 + i delta) Re q`.
pub fn apply_Ldelta(q: &GridFunction, s: f64, k: u32, delta: f64) -> GridFunction {
    let l0 = apply_L0s(q, s, k);
    l0.zip_map(q, |_, a, v| a + Complex64::new(v.re, delta * v.re)).expect("same mesh")
}

/// Right side of the Jordan-block identity
/// `L_s H_m = (1 - m/2k) H_m + m(m-1)(1 - 1/k) I^{-2} H_{m-2}`.
pub fn jordan_image(m: usize, y: f64, s: f64, k: u32) -> f64 {
    let i2 = scaling_factor(s, k).powi(2);
    let kf = k as f64;
    let mut v = (1.0 - m as f64 / (2.0 * kf)) * hermite_poly_eval(m, y, 1.0 / i2);
    if m >= 2 {
        v += (m * (m - 1)) as f64 * (1.0 - 1.0 / kf) / i2 * hermite_poly_eval(m - 2, y, 1.0 / i2);
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SemigroupVariant {
    /// Kernel of `L_{0,s}`.
    DriftOnly,
    /// Kernel of `L_s`, i.e. the drift-only kernel times `e^{s - sigma}`.
    WithIdentity,
}

/// Half-width of the kernel quadrature window in kernel standard deviations.
pub const KERNEL_WINDOW_SD: f64 = 14.0;
/// Default number of kernel quadrature nodes per output point.
pub const KERNEL_NODES: usize = 401;

/// Mehler kernel between times `sigma < s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MehlerKernel {
    pub s: f64,
    pub sigma: f64,
    pub k: u32,
    pub l2: f64,
}

impl MehlerKernel {
    pub fn new(sigma: f64, s: f64, k: u32) -> Result<Self> {
        if !(s > sigma) || !s.is_finite() || !sigma.is_finite() {
            return Err(Error::InvalidInterval { sigma, s });
        }
        let l2 = scaling_factor(sigma, k).powi(2) / (-(-(s - sigma)).exp_m1());
        Ok(Self { s, sigma, k, l2 })
    }

    /// Factor `e^{-(s - sigma)/2k}` applied to the output coordinate.
    pub fn contraction(&self) -> f64 {
        (-(self.s - self.sigma) / (2.0 * self.k as f64)).exp()
    }

    /// Standard deviation `sqrt(2)/L` of the Gaussian `F`.
    pub fn width(&self) -> f64 {
        (2.0 / self.l2).sqrt()
    }

    /// `F(xi) = L/sqrt(4 pi) exp(-L^2 xi^2/4)`.
    pub fn gaussian(&self, xi: f64) -> f64 {
        (self.l2 / (4.0 * std::f64::consts::PI)).sqrt() * (-0.25 * self.l2 * xi * xi).exp()
    }

    /// Drift-only kernel `K_0(y, z) = F(e^{-(s-sigma)/2k} y - z)`.
    pub fn eval(&self, y: f64, z: f64) -> f64 {
        self.gaussian(self.contraction() * y - z)
    }

    pub fn variant_factor(&self, variant: SemigroupVariant) -> f64 {
        match variant {
            SemigroupVariant::DriftOnly => 1.0,
            SemigroupVariant::WithIdentity => (self.s - self.sigma).exp(),
        }
    }

    /// `int K(y, z) f(z) dz` by trapezoid quadrature on the kernel window.
    pub fn apply_at<F: Fn(f64) -> Complex64>(&self, f: &F, y: f64, variant: SemigroupVariant, nodes: usize) -> Complex64 {
        let centre = self.contraction() * y;
        let half = KERNEL_WINDOW_SD * self.width();
        let h = 2.0 * half / (nodes - 1) as f64;
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..nodes {
            let z = centre - half + h * j as f64;
            let w = if j == 0 || j + 1 == nodes { 0.5 * h } else { h };
            acc += f(z) * (w * self.gaussian(centre - z));
        }
        acc * self.variant_factor(variant)
    }
}

/// Propagates a function given at time `sigma` to time `s` on `out_mesh`.
pub fn mehler_propagate<F>(
    f: &F,
    sigma: f64,
    s: f64,
    k: u32,
    variant: SemigroupVariant,
    out_mesh: Arc<Mesh>,
) -> Result<GridFunction>
where
    F: Fn(f64) -> Complex64 + Sync,
{
    let kernel = MehlerKernel::new(sigma, s, k)?;
    let values: Vec<Complex64> =
        out_mesh.nodes().par_iter().map(|&y| kernel.apply_at(f, y, variant, KERNEL_NODES)).collect();
    GridFunction::new(out_mesh, values)
}

/// Same as [`mehler_propagate`] for sampled input, read through cubic
/// interpolation.
pub fn mehler_propagate_grid(
    q: &GridFunction,
    sigma: f64,
    s: f64,
    k: u32,
    variant: SemigroupVariant,
    out_mesh: Arc<Mesh>,
) -> Result<GridFunction> {
    let f = |z: f64| q.interpolate(z);
    mehler_propagate(&f, sigma, s, k, variant, out_mesh)
}

/// Default `s`-step for [`semigroup_consistency`].
pub const DEFAULT_TIME_STEP: f64 = 2.5e-4;

/// Max-norm mismatch between a centered `s`-difference of the propagated
/// function and the generator applied to it, on interior nodes of `mesh`.
pub fn semigroup_consistency<F>(
    f: &F,
    sigma: f64,
    s: f64,
    k: u32,
    variant: SemigroupVariant,
    mesh: Arc<Mesh>,
    ds: f64,
) -> Result<f64>
where
    F: Fn(f64) -> Complex64 + Sync,
{
    if !(s - ds > sigma) {
        return Err(Error::InvalidInterval { sigma, s: s - ds });
    }
    let dsdt = semigroup_time_derivative(f, sigma, s, k, variant, mesh.clone(), ds)?;
    let mid = mehler_propagate(f, sigma, s, k, variant, mesh)?;
    let gen = match variant {
        SemigroupVariant::DriftOnly => apply_L0s(&mid, s, k),
        SemigroupVariant::WithIdentity => apply_Ls(&mid, s, k),
    };
    Ok(dsdt.sub(&gen)?.sup_norm_interior())
}

/// Centered difference `(K(s+ds) f - K(s-ds) f)/(2 ds)` on `mesh`.
pub fn semigroup_time_derivative<F>(
    f: &F,
    sigma: f64,
    s: f64,
    k: u32,
    variant: SemigroupVariant,
    mesh: Arc<Mesh>,
    ds: f64,
) -> Result<GridFunction>
where
    F: Fn(f64) -> Complex64 + Sync,
{
    let plus = mehler_propagate(f, sigma, s + ds, k, variant, mesh.clone())?;
    let minus = mehler_propagate(f, sigma, s - ds, k, variant, mesh)?;
    Ok(plus.sub(&minus)?.scale(Complex64::new(0.5 / ds, 0.0)))
}

/// Sampling used when measuring the weighted sup norm of propagated data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapConfig {
    /// Half-width of the `y`-window on which the sup is taken.
    pub half_width: f64,
    pub nodes: usize,
    /// Origin spacing as a fraction of `1/I(tau)`.
    pub origin_fraction: f64,
    /// Relative projection threshold for the orthogonality check.
    pub orthogonality_tol: f64,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self { half_width: 8.0, nodes: 1601, origin_fraction: 0.05, orthogonality_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapFit {
    pub slope: f64,
    pub intercept: f64,
    /// `(tau - sigma, log |K q|_tau - log |q|_sigma)`.
    pub points: Vec<(f64, f64)>,
}

/// Relative size of the low-mode content of `f` at time `sigma`.
pub fn low_mode_residual<F: Fn(f64) -> Complex64>(f: &F, sigma: f64, params: &Parameters) -> Result<f64> {
    let mesh = Arc::new(spectral_mesh(sigma, params.k, 4096, 20.0)?);
    let basis = SpectralBasis::new(mesh.clone(), sigma, params.k, params.m_floor())?;
    let v: Vec<Complex64> = mesh.nodes().iter().map(|&y| f(y)).collect();
    let energy: f64 = v.iter().zip(basis.weighted()).map(|(a, w)| a.norm_sqr() * w).sum::<f64>().sqrt();
    if energy == 0.0 {
        return Ok(0.0);
    }
    let mut worst: f64 = 0.0;
    for n in 0..=params.m_floor() {
        worst = worst.max(basis.project(&v, n).norm() * basis.norm_sq(n).sqrt() / energy);
    }
    Ok(worst)
}

fn gap_mesh(tau: f64, k: u32, cfg: &GapConfig) -> Result<Arc<Mesh>> {
    let h0 = cfg.origin_fraction / scaling_factor(tau, k);
    Ok(Arc::new(Mesh::sinh_with_spacing(cfg.half_width, cfg.nodes, h0)?))
}

/// Fits the decay rate of `|K_{tau,sigma} q_minus|_tau / |q_minus|_sigma`
/// over the given `taus`.
pub fn measure_spectral_gap<F>(
    q_minus: &F,
    sigma: f64,
    taus: &[f64],
    params: &Parameters,
    variant: SemigroupVariant,
    cfg: &GapConfig,
) -> Result<GapFit>
where
    F: Fn(f64) -> Complex64 + Sync,
{
    let residual = low_mode_residual(q_minus, sigma, params)?;
    if residual > cfg.orthogonality_tol {
        return Err(Error::NotOrthogonal { residual });
    }
    let m = params.m_weight();
    let weighted_sup = |g: &GridFunction, t: f64| {
        let floor = scaling_factor(t, params.k).powf(-m);
        g.mesh().nodes().iter().zip(g.values()).fold(0.0_f64, |a, (&y, v)| a.max(v.norm() / (floor + y.abs().powf(m))))
    };
    let base_mesh = gap_mesh(sigma, params.k, cfg)?;
    let base = weighted_sup(&GridFunction::from_fn(base_mesh, q_minus), sigma);
    if !(base > 0.0) {
        return Err(Error::InsufficientData("remainder vanishes at the initial time".into()));
    }
    let mut points = Vec::with_capacity(taus.len());
    for &tau in taus {
        let mesh = gap_mesh(tau, params.k, cfg)?;
        let prop = mehler_propagate(q_minus, sigma, tau, params.k, variant, mesh)?;
        points.push((tau - sigma, (weighted_sup(&prop, tau) / base).ln()));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    let (slope, intercept) = fit_line(&x, &y)?;
    Ok(GapFit { slope, intercept, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::default_spectral_mesh;
    use proptest::prelude::*;

    fn hn(n: usize, s: f64, k: u32) -> impl Fn(f64) -> Complex64 + Sync {
        let a = scaling_factor(s, k).powi(-2);
        move |y| Complex64::new(hermite_poly_eval(n, y, a), 0.0)
    }

    #[test]
    fn generator_examples() {
        let k = 2;
        let s = 3.0;
        let mesh = default_spectral_mesh(s, k);
        let i2 = scaling_factor(s, k).powi(2);
        let h0 = GridFunction::from_real_fn(mesh.clone(), |_| 1.0);
        assert!(apply_Ls(&h0, s, k).sub(&h0).unwrap().sup_norm() < 1e-12);
        let h2 = GridFunction::from_real_fn(mesh.clone(), |y| y * y - 2.0 / i2);
        let want = GridFunction::from_real_fn(mesh.clone(), |y| 0.5 * (y * y - 2.0 / i2) + 2.0 * 0.5 / i2);
        assert!(apply_Ls(&h2, s, k).sub(&want).unwrap().sup_norm_interior() < 1e-9);
        // Check direction i H_m decays at rate m/2k.
        let delta = 0.7;
        let m = 3;
        let ih = GridFunction::from_fn(mesh.clone(), |y| Complex64::new(0.0, hermite_poly_eval(m, y, 1.0 / i2)));
        let got = apply_Ldelta(&ih, s, k, delta);
        let want = GridFunction::from_fn(mesh.clone(), |y| {
            Complex64::new(0.0, -0.75 * hermite_poly_eval(m, y, 1.0 / i2) + 6.0 * 0.5 / i2 * y)
        });
        assert!(got.sub(&want).unwrap().sup_norm_interior() < 1e-6 * want.sup_norm());
    }

    #[test]
    fn kernel_conserves_mass() {
        let kern = MehlerKernel::new(1.0, 2.5, 2).unwrap();
        let one = |_: f64| Complex64::new(1.0, 0.0);
        for &y in &[-3.0, 0.0, 0.4, 5.0] {
            let v = kern.apply_at(&one, y, SemigroupVariant::DriftOnly, KERNEL_NODES);
            assert!((v.re - 1.0).abs() < 1e-13);
        }
        assert!(MehlerKernel::new(2.0, 2.0, 2).is_err());
    }

    #[test]
    fn eigenaction_and_neutral_mode() {
        let k = 2;
        let (sigma, s) = (4.0, 6.0);
        let mesh = default_spectral_mesh(s, k);
        for n in [0usize, 1, 4, 7] {
            let out = mehler_propagate(&hn(n, sigma, k), sigma, s, k, SemigroupVariant::WithIdentity, mesh.clone()).unwrap();
            let rate = (s - sigma) * (1.0 - n as f64 / 4.0);
            let want = GridFunction::from_real_fn(mesh.clone(), |y| rate.exp() * hermite_poly_eval(n, y, scaling_factor(s, k).powi(-2)));
            let err = out.sub(&want).unwrap().sup_norm() / want.sup_norm();
            assert!(err < 1e-10, "n={n} err={err}");
        }
    }

    #[test]
    fn semigroup_law() {
        let k = 2;
        let f = |z: f64| Complex64::new((-z * z).exp() * (1.0 + z).cos(), z * (-0.5 * z * z).exp());
        let mesh = Arc::new(Mesh::symmetric(4.0, 161).unwrap());
        let direct = mehler_propagate(&f, 0.0, 1.5, k, SemigroupVariant::DriftOnly, mesh.clone()).unwrap();
        let fine = Arc::new(Mesh::symmetric(8.0, 3201).unwrap());
        let half = mehler_propagate(&f, 0.0, 0.7, k, SemigroupVariant::DriftOnly, fine).unwrap();
        let two = mehler_propagate_grid(&half, 0.7, 1.5, k, SemigroupVariant::DriftOnly, mesh).unwrap();
        assert!(direct.sub(&two).unwrap().sup_norm() < 1e-8);
    }

    #[test]
    fn semigroup_consistency_examples() {
        let k = 2;
        let (sigma, s) = (1.0, 2.0);
        let mesh = default_spectral_mesh(s, k);
        let r = semigroup_consistency(&hn(1, sigma, k), sigma, s, k, SemigroupVariant::WithIdentity, mesh.clone(), DEFAULT_TIME_STEP).unwrap();
        assert!(r < 1e-6, "H_1 residual {r}");
        let d = semigroup_time_derivative(&hn(0, sigma, k), sigma, s, k, SemigroupVariant::DriftOnly, mesh.clone(), 1e-3).unwrap();
        assert!(d.sup_norm() < 1e-8);
        // Richardson: the s-derivative estimate converges at second order.
        let f = |z: f64| Complex64::new((-0.3 * z * z).exp() * (2.0 * z).sin(), (-0.2 * z * z).exp());
        let est = |h: f64| semigroup_time_derivative(&f, sigma, s, k, SemigroupVariant::WithIdentity, mesh.clone(), h).unwrap();
        let (a, b, c) = (est(0.08), est(0.04), est(0.02));
        let ratio = a.sub(&b).unwrap().sup_norm() / b.sub(&c).unwrap().sup_norm();
        assert!((ratio - 4.0).abs() < 0.3, "ratio {ratio}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn kernel_relation_between_variants(y in -3.0..3.0f64, ds in 0.2..3.0f64) {
            let kern = MehlerKernel::new(0.5, 0.5 + ds, 2).unwrap();
            let f = |z: f64| Complex64::new(z.cos(), z * 0.1);
            let a = kern.apply_at(&f, y, SemigroupVariant::DriftOnly, KERNEL_NODES);
            let b = kern.apply_at(&f, y, SemigroupVariant::WithIdentity, KERNEL_NODES);
            prop_assert!((b - a * ds.exp()).norm() <= 1e-12 * b.norm().max(1.0));
        }
    }
}
