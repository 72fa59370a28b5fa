//! Time-dependent Hermite basis, the moving Gaussian weight, projections
//! and the norms used to measure the linearized solution.

#![allow(non_snake_case)]

use std::sync::Arc;

use num_complex::Complex64;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::mesh::{GridFunction, Mesh};
use crate::model::{delta_decompose, scaling_factor};
use crate::params::Parameters;

/// Highest supported polynomial degree.
pub const MAX_DEGREE: usize = 40;

/// Largest weight mass allowed outside a quadrature mesh.
pub const WEIGHT_TAIL_TOL: f64 = 1e-14;

/// Spectral quadrature defaults: nodes and half-width in `z = I(s) y`.
pub const SPECTRAL_NODES: usize = 2048;
pub const SPECTRAL_ZMAX: f64 = 16.0;

fn check_degree(m: usize) -> Result<()> {
    if m > MAX_DEGREE {
        Err(Error::DegreeTooLarge(m))
    } else {
        Ok(())
    }
}

/// `m! / (l! (m - 2l)!)`, accumulated as a product of ratios.
pub fn hermite_coeff(m: usize, l: usize) -> f64 {
    debug_assert!(2 * l <= m);
    // m!/(m-2l)! = prod_{j=0}^{2l-1} (m - j), divided by l! term by term.
    let mut c = 1.0;
    for j in 0..2 * l {
        c *= (m - j) as f64;
        if j < l {
            c /= (j + 1) as f64;
        }
    }
    c
}

/// `h_m(z) = sum_l m!/(l!(m-2l)!) (-1)^l z^{m-2l}`.
pub fn hermite_h(m: usize, z: f64) -> Result<f64> {
    check_degree(m)?;
    Ok(hermite_poly_eval(m, z, 1.0))
}

/// `H_m(y, s) = I^{-m} h_m(I y) = sum_l m!/(l!(m-2l)!) (-I^{-2})^l y^{m-2l}`.
pub fn hermite_H(m: usize, y: f64, s: f64, k: u32) -> Result<f64> {
    check_degree(m)?;
    let i = scaling_factor(s, k);
    Ok(hermite_poly_eval(m, y, 1.0 / (i * i)))
}

/// `sum_l coeff(m,l) (-a)^l x^{m-2l}`, Horner in `x^2`.
pub(crate) fn hermite_poly_eval(m: usize, x: f64, a: f64) -> f64 {
    let x2 = x * x;
    let top = m / 2;
    let mut acc = 0.0;
    for l in 0..=top {
        let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
        acc = acc * x2 + sign * hermite_coeff(m, l) * a.powi(l as i32);
    }
    if m % 2 == 1 {
        acc * x
    } else {
        acc
    }
}

/// `||H_n||^2 = I^{-2n} 2^n n!` in `L^2(rho_s)`.
pub fn hermite_norm_sq(n: usize, s: f64, k: u32) -> f64 {
    let i2 = scaling_factor(s, k).powi(2);
    let mut v = 1.0;
    for j in 1..=n {
        v *= 2.0 * j as f64 / i2;
    }
    v
}

/// Monomial coefficients of `H_m(., s)`, lowest degree first.
pub fn hermite_poly(m: usize, s: f64, k: u32) -> Vec<f64> {
    let i2 = scaling_factor(s, k).powi(2);
    let mut c = vec![0.0; m + 1];
    for l in 0..=m / 2 {
        let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
        c[m - 2 * l] = sign * hermite_coeff(m, l) * i2.powi(-(l as i32));
    }
    c
}

/// Coefficients of a polynomial (monomial basis, lowest first) in the
/// basis `H_n(., s)`, using `y^m = sum_l m!/(l!(m-2l)!) I^{-2l} H_{m-2l}`.
pub fn poly_to_hermite(poly: &[f64], s: f64, k: u32) -> Vec<f64> {
    let i2 = scaling_factor(s, k).powi(2);
    let mut out = vec![0.0; poly.len()];
    for (m, &a) in poly.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for l in 0..=m / 2 {
            out[m - 2 * l] += a * hermite_coeff(m, l) * i2.powi(-(l as i32));
        }
    }
    out
}

/// `Q_n(y^m)` for every `n`, from the triangular change of basis.
pub fn monomial_projection(m: usize, s: f64, k: u32) -> Vec<f64> {
    let mut poly = vec![0.0; m + 1];
    poly[m] = 1.0;
    poly_to_hermite(&poly, s, k)
}

/// The Gaussian weight `rho_s(y) = I/sqrt(4 pi) exp(-I^2 y^2 / 4)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weight {
    pub s: f64,
    pub i: f64,
}

impl Weight {
    pub fn new(s: f64, k: u32) -> Self {
        Self { s, i: scaling_factor(s, k) }
    }

    pub fn rho(&self, y: f64) -> f64 {
        let z = self.i * y;
        self.i / (4.0 * std::f64::consts::PI).sqrt() * (-0.25 * z * z).exp()
    }

    /// Standard deviation `sqrt(2)/I`.
    pub fn width(&self) -> f64 {
        std::f64::consts::SQRT_2 / self.i
    }

    /// Weight mass outside `[lo, hi]`.
    pub fn tail_mass(&self, lo: f64, hi: f64) -> f64 {
        0.5 * erfc(0.5 * self.i * hi) + 0.5 * erfc(-0.5 * self.i * lo)
    }

    /// Rejects meshes that truncate or under-resolve the weight.
    pub fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        let tail = self.tail_mass(mesh.lo(), mesh.hi());
        if !(tail <= WEIGHT_TAIL_TOL) {
            return Err(Error::WeightTruncated { tail, tol: WEIGHT_TAIL_TOL });
        }
        let width = self.width();
        let spacing = mesh.max_spacing_within(6.0 * width);
        if spacing > 0.5 * width {
            return Err(Error::MeshTooCoarse { spacing, width });
        }
        Ok(())
    }
}

/// Uniform mesh on `|z| <= zmax` with `z = I(s) y`.
pub fn spectral_mesh(s: f64, k: u32, nodes: usize, zmax: f64) -> Result<Mesh> {
    let i = scaling_factor(s, k);
    Mesh::symmetric(zmax / i, nodes)
}

/// Default spectral mesh at time `s`.
pub fn default_spectral_mesh(s: f64, k: u32) -> Arc<Mesh> {
    Arc::new(spectral_mesh(s, k, SPECTRAL_NODES, SPECTRAL_ZMAX).expect("valid default mesh"))
}

/// Quadrature of `int f g rho_s dy` (no conjugation).
pub fn weighted_inner(f: &GridFunction, g: &GridFunction, s: f64, k: u32) -> Result<Complex64> {
    f.check_same_mesh(g)?;
    let w = Weight::new(s, k);
    let mesh = f.mesh();
    w.check_mesh(mesh)?;
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..mesh.len() {
        acc += f.values()[i] * g.values()[i] * (mesh.weights()[i] * w.rho(mesh.y(i)));
    }
    Ok(acc)
}

/// `Q_n(q) = (q, H_n)_s / ||H_n||^2` with the closed-form denominator.
pub fn project_Qn(q: &GridFunction, n: usize, s: f64, k: u32) -> Result<Complex64> {
    check_degree(n)?;
    let basis = SpectralBasis::new(q.mesh().clone(), s, k, n)?;
    Ok(basis.project(q.values(), n))
}

/// Same projection with the denominator also computed by quadrature.
pub fn project_Qn_quadrature(q: &GridFunction, n: usize, s: f64, k: u32) -> Result<Complex64> {
    let h = GridFunction::from_real_fn(q.mesh().clone(), |y| hermite_poly_eval(n, y, scaling_factor(s, k).powi(-2)));
    let num = weighted_inner(q, &h, s, k)?;
    let den = weighted_inner(&h, &h, s, k)?;
    Ok(num / den.re)
}

/// `H_0..H_nmax` and the weighted quadrature weights sampled on one mesh
/// at one time.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    mesh: Arc<Mesh>,
    s: f64,
    k: u32,
    h: Vec<Vec<f64>>,
    wrho: Vec<f64>,
    norms: Vec<f64>,
}

impl SpectralBasis {
    pub fn new(mesh: Arc<Mesh>, s: f64, k: u32, nmax: usize) -> Result<Self> {
        check_degree(nmax)?;
        let w = Weight::new(s, k);
        w.check_mesh(&mesh)?;
        let a = 1.0 / (w.i * w.i);
        let h = (0..=nmax)
            .map(|n| mesh.nodes().iter().map(|&y| hermite_poly_eval(n, y, a)).collect())
            .collect();
        let wrho = mesh.nodes().iter().zip(mesh.weights()).map(|(&y, &q)| q * w.rho(y)).collect();
        let norms = (0..=nmax).map(|n| hermite_norm_sq(n, s, k)).collect();
        Ok(Self { mesh, s, k, h, wrho, norms })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }
    pub fn s(&self) -> f64 {
        self.s
    }
    pub fn k(&self) -> u32 {
        self.k
    }
    pub fn nmax(&self) -> usize {
        self.h.len() - 1
    }
    /// Samples of `H_n`.
    pub fn h(&self, n: usize) -> &[f64] {
        &self.h[n]
    }
    pub fn norm_sq(&self, n: usize) -> f64 {
        self.norms[n]
    }
    /// Products of quadrature weights and `rho_s` at the nodes.
    pub fn weighted(&self) -> &[f64] {
        &self.wrho
    }

    /// Raw integral `int v H_n rho_s`.
    pub fn inner(&self, v: &[Complex64], n: usize) -> Complex64 {
        let h = &self.h[n];
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..v.len() {
            acc += v[i] * (h[i] * self.wrho[i]);
        }
        acc
    }

    pub fn project(&self, v: &[Complex64], n: usize) -> Complex64 {
        self.inner(v, n) / self.norms[n]
    }

    pub fn project_all(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..=self.nmax()).map(|n| self.project(v, n)).collect()
    }

    /// `sum_n c_n H_n` at the nodes.
    pub fn synthesize(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.mesh.len()];
        for (n, c) in coeffs.iter().enumerate() {
            for (o, h) in out.iter_mut().zip(&self.h[n]) {
                *o += c * h;
            }
        }
        out
    }

    /// Finite part, remainder and `delta`-split coordinates of `v`.
    pub fn decompose(&self, v: &[Complex64], delta: f64) -> ModeDecomposition {
        let qn = self.project_all(v);
        let plus = self.synthesize(&qn);
        let minus: Vec<Complex64> = v.iter().zip(&plus).map(|(a, b)| a - b).collect();
        let splits: Vec<_> = qn.iter().map(|z| delta_decompose(*z, delta)).collect();
        ModeDecomposition {
            s: self.s,
            delta,
            qn,
            hat: splits.iter().map(|c| c.hat).collect(),
            check: splits.iter().map(|c| c.check).collect(),
            q_minus: GridFunction::new(self.mesh.clone(), minus).expect("same mesh"),
        }
    }
}

/// `q = sum_{n <= floor(M)} Q_n H_n + q_minus`.
#[derive(Debug, Clone)]
pub struct ModeDecomposition {
    pub s: f64,
    pub delta: f64,
    pub qn: Vec<Complex64>,
    pub hat: Vec<f64>,
    pub check: Vec<f64>,
    pub q_minus: GridFunction,
}

impl ModeDecomposition {
    pub fn q_plus(&self, k: u32) -> GridFunction {
        let a = scaling_factor(self.s, k).powi(-2);
        let mesh = self.q_minus.mesh().clone();
        GridFunction::from_fn(mesh, |y| {
            self.qn.iter().enumerate().map(|(n, c)| c * hermite_poly_eval(n, y, a)).sum()
        })
    }
}

pub fn split_modes(q: &GridFunction, s: f64, params: &Parameters) -> Result<ModeDecomposition> {
    let basis = SpectralBasis::new(q.mesh().clone(), s, params.k, params.m_floor())?;
    Ok(basis.decompose(q.values(), params.delta))
}

/// `sup |v| / (I^{-M} + |y|^M)` for any field, typically the remainder.
pub fn norm_minus(q_minus: &GridFunction, s: f64, params: &Parameters) -> f64 {
    weighted_sup(q_minus, s, params, |v| v.norm())
}

/// The weighted sup norm applied separately to the hat and check parts.
pub fn norm_minus_split(q_minus: &GridFunction, s: f64, params: &Parameters) -> (f64, f64) {
    let d = params.delta;
    (
        weighted_sup(q_minus, s, params, |v| v.re.abs()),
        weighted_sup(q_minus, s, params, |v| (v.im - d * v.re).abs()),
    )
}

fn weighted_sup(f: &GridFunction, s: f64, params: &Parameters, part: impl Fn(Complex64) -> f64) -> f64 {
    let m = params.m_weight();
    let floor = scaling_factor(s, params.k).powf(-m);
    f.mesh()
        .nodes()
        .iter()
        .zip(f.values())
        .fold(0.0, |acc, (&y, &v)| acc.max(part(v) / (floor + y.abs().powf(m))))
}

/// `sum |Q_n| + norm_minus`.
pub fn norm_s(d: &ModeDecomposition, params: &Parameters) -> f64 {
    d.qn.iter().map(|z| z.norm()).sum::<f64>() + norm_minus(&d.q_minus, d.s, params)
}

/// `sup |q| / (1 + |y|^M)`.
pub fn norm_LM(q: &GridFunction, params: &Parameters) -> f64 {
    let m = params.m_weight();
    q.mesh().nodes().iter().zip(q.values()).fold(0.0, |acc, (&y, v)| acc.max(v.norm() / (1.0 + y.abs().powf(m))))
}
