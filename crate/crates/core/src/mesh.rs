//! One-dimensional meshes, sampled complex fields, finite differences and
//! interpolation.
//!
//! A mesh is the image of a uniform grid in a computational coordinate `xi`
//! under a smooth monotone map `y(xi)`. Derivatives are taken in `xi` and
//! converted with the chain rule, and quadrature is the trapezoid rule in `xi`.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeshKind {
    /// `y = lo + xi`.
    Uniform,
    /// `y = focus * sinh(xi)`, clustered near the origin.
    Sinh { focus: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    kind: MeshKind,
    y: Vec<f64>,
    y_xi: Vec<f64>,
    y_xixi: Vec<f64>,
    dxi: f64,
    weights: Vec<f64>,
}

impl Mesh {
    /// Uniform mesh on `[lo, hi]` with `n` nodes.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 4 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidMesh(format!("uniform mesh on [{lo}, {hi}] with {n} nodes")));
        }
        let dxi = (hi - lo) / (n - 1) as f64;
        let y = (0..n).map(|i| lo + dxi * i as f64).collect();
        Ok(Self::assemble(MeshKind::Uniform, y, vec![1.0; n], vec![0.0; n], dxi))
    }

    /// Symmetric uniform mesh on `[-half, half]`.
    pub fn symmetric(half: f64, n: usize) -> Result<Self> {
        Self::uniform(-half, half, n)
    }

    /// Symmetric mesh `y = focus * sinh(xi)` on `[-half, half]`.
    ///
    /// Near the origin the spacing is about `focus * dxi`; far away it grows
    /// proportionally to `|y|`.
    pub fn sinh(half: f64, n: usize, focus: f64) -> Result<Self> {
        if n < 4 || !(half > 0.0) || !(focus > 0.0) || !half.is_finite() {
            return Err(Error::InvalidMesh(format!("sinh mesh half {half}, nodes {n}, focus {focus}")));
        }
        let xi_max = (half / focus).asinh();
        let dxi = 2.0 * xi_max / (n - 1) as f64;
        let mut y = Vec::with_capacity(n);
        let mut y_xi = Vec::with_capacity(n);
        let mut y_xixi = Vec::with_capacity(n);
        for i in 0..n {
            // Symmetric construction keeps y[i] == -y[n-1-i] exactly.
            let j = i as f64 - (n - 1) as f64 / 2.0;
            let xi = j * dxi;
            y.push(focus * xi.sinh());
            y_xi.push(focus * xi.cosh());
            y_xixi.push(focus * xi.sinh());
        }
        Ok(Self::assemble(MeshKind::Sinh { focus }, y, y_xi, y_xixi, dxi))
    }

    /// Sinh mesh whose spacing at the origin is at most `h0`.
    pub fn sinh_with_spacing(half: f64, n: usize, h0: f64) -> Result<Self> {
        if !(h0 > 0.0) {
            return Err(Error::InvalidMesh(format!("origin spacing {h0}")));
        }
        // Solve focus * 2 asinh(half/focus)/(n-1) = h0 for focus by bisection;
        // the left side increases with focus.
        let spacing = |a: f64| a * 2.0 * (half / a).asinh() / (n - 1) as f64;
        let uniform_h = 2.0 * half / (n - 1) as f64;
        if h0 >= uniform_h {
            return Self::symmetric(half, n);
        }
        let (mut lo, mut hi) = (1e-300_f64.max(half * 1e-12), half * 1e6);
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if spacing(mid) > h0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Self::sinh(half, n, lo)
    }

    fn assemble(kind: MeshKind, y: Vec<f64>, y_xi: Vec<f64>, y_xixi: Vec<f64>, dxi: f64) -> Self {
        let n = y.len();
        let mut weights: Vec<f64> = y_xi.iter().map(|d| d * dxi).collect();
        weights[0] *= 0.5;
        weights[n - 1] *= 0.5;
        Self { kind, y, y_xi, y_xixi, dxi, weights }
    }

    /// Same mesh with every coordinate multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        let sc = |v: &Vec<f64>| v.iter().map(|x| x * factor).collect::<Vec<_>>();
        match self.kind {
            MeshKind::Uniform => {
                let n = self.y.len();
                Self::assemble(MeshKind::Uniform, sc(&self.y), vec![1.0; n], vec![0.0; n], self.dxi * factor)
            }
            MeshKind::Sinh { focus } => {
                Self::assemble(MeshKind::Sinh { focus: focus * factor }, sc(&self.y), sc(&self.y_xi), sc(&self.y_xixi), self.dxi)
            }
        }
    }

    pub fn kind(&self) -> MeshKind {
        self.kind
    }
    pub fn len(&self) -> usize {
        self.y.len()
    }
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
    pub fn nodes(&self) -> &[f64] {
        &self.y
    }
    pub fn y(&self, i: usize) -> f64 {
        self.y[i]
    }
    pub fn jacobian(&self) -> &[f64] {
        &self.y_xi
    }
    pub fn dxi(&self) -> f64 {
        self.dxi
    }
    /// Trapezoid quadrature weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn lo(&self) -> f64 {
        self.y[0]
    }
    pub fn hi(&self) -> f64 {
        self.y[self.y.len() - 1]
    }

    /// Largest node spacing among nodes with `|y| <= radius`.
    pub fn max_spacing_within(&self, radius: f64) -> f64 {
        let mut h: f64 = 0.0;
        for w in self.y.windows(2) {
            if w[0].abs() <= radius || w[1].abs() <= radius {
                h = h.max(w[1] - w[0]);
            }
        }
        if h == 0.0 {
            // No node inside the disc: report the spacing straddling it.
            for w in self.y.windows(2) {
                if w[0] <= 0.0 && w[1] >= 0.0 {
                    h = w[1] - w[0];
                }
            }
        }
        h
    }

    /// `true` for the two end nodes, where stencils are one-sided.
    pub fn is_boundary(&self, i: usize) -> bool {
        i == 0 || i + 1 == self.y.len()
    }

    /// Index of the cell `[y_j, y_{j+1}]` containing `x`, clamped to the mesh.
    pub fn locate(&self, x: f64) -> usize {
        let n = self.y.len();
        match self.y.binary_search_by(|v| v.partial_cmp(&x).unwrap_or(std::cmp::Ordering::Less)) {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        }
    }

    /// Quadrature of sampled real values.
    pub fn integrate_real(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }

    /// Quadrature of sampled complex values.
    pub fn integrate(&self, f: &[Complex64]) -> Complex64 {
        f.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }
}

/// Complex samples on a shared mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    mesh: Arc<Mesh>,
    values: Vec<Complex64>,
}

impl GridFunction {
    pub fn new(mesh: Arc<Mesh>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != mesh.len() {
            return Err(Error::MeshMismatch(format!(
                "{} values for a mesh of {} nodes",
                values.len(),
                mesh.len()
            )));
        }
        Ok(Self { mesh, values })
    }

    pub fn zeros(mesh: Arc<Mesh>) -> Self {
        let n = mesh.len();
        Self { mesh, values: vec![Complex64::new(0.0, 0.0); n] }
    }

    pub fn from_fn(mesh: Arc<Mesh>, f: impl Fn(f64) -> Complex64) -> Self {
        let values = mesh.nodes().iter().map(|&y| f(y)).collect();
        Self { mesh, values }
    }

    pub fn from_real_fn(mesh: Arc<Mesh>, f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(mesh, |y| Complex64::new(f(y), 0.0))
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same mesh, values transformed node by node with access to `y`.
    pub fn map(&self, f: impl Fn(f64, Complex64) -> Complex64) -> Self {
        let values = self.mesh.nodes().iter().zip(&self.values).map(|(&y, &v)| f(y, v)).collect();
        Self { mesh: self.mesh.clone(), values }
    }

    /// Pointwise combination of two fields on the same mesh.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, Complex64, Complex64) -> Complex64) -> Result<Self> {
        self.check_same_mesh(other)?;
        let values = self
            .mesh
            .nodes()
            .iter()
            .zip(self.values.iter().zip(&other.values))
            .map(|(&y, (&a, &b))| f(y, a, b))
            .collect();
        Ok(Self { mesh: self.mesh.clone(), values })
    }

    pub fn check_same_mesh(&self, other: &Self) -> Result<()> {
        if Arc::ptr_eq(&self.mesh, &other.mesh) || *self.mesh == *other.mesh {
            Ok(())
        } else {
            Err(Error::MeshMismatch("fields live on different meshes".into()))
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |_, a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |_, a, b| a - b)
    }

    pub fn scale(&self, c: Complex64) -> Self {
        self.map(|_, v| v * c)
    }

    /// Maximum modulus over all nodes.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Maximum modulus over interior nodes.
    pub fn sup_norm_interior(&self) -> f64 {
        let n = self.values.len();
        self.values[1..n - 1].iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// First derivative in `y` (second order, one-sided at the ends).
    pub fn derivative(&self) -> Self {
        let (d1, _) = derivatives(&self.mesh, &self.values);
        Self { mesh: self.mesh.clone(), values: d1 }
    }

    /// Second derivative in `y` (second order, one-sided at the ends).
    pub fn second_derivative(&self) -> Self {
        let (_, d2) = derivatives(&self.mesh, &self.values);
        Self { mesh: self.mesh.clone(), values: d2 }
    }

    /// Cubic Lagrange interpolation in the computational coordinate.
    pub fn interpolate(&self, x: f64) -> Complex64 {
        interpolate_cubic(&self.mesh, &self.values, x)
    }

    /// Resamples onto another mesh by cubic interpolation.
    pub fn resample(&self, target: Arc<Mesh>) -> Self {
        let values = target.nodes().iter().map(|&x| self.interpolate(x)).collect();
        Self { mesh: target, values }
    }
}

/// First and second `y`-derivatives of sampled values.
///
/// Interior rows use centered differences in `xi`; the two end rows use
/// second-order one-sided stencils.
pub fn derivatives(mesh: &Mesh, v: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
    let n = v.len();
    let h = mesh.dxi;
    let mut d1 = vec![Complex64::new(0.0, 0.0); n];
    let mut d2 = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..n {
        let (vx, vxx) = if i == 0 {
            (
                (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h),
                (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / (h * h),
            )
        } else if i == n - 1 {
            (
                (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h),
                (2.0 * v[n - 1] - 5.0 * v[n - 2] + 4.0 * v[n - 3] - v[n - 4]) / (h * h),
            )
        } else {
            ((v[i + 1] - v[i - 1]) / (2.0 * h), (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h))
        };
        let j = mesh.y_xi[i];
        d1[i] = vx / j;
        d2[i] = (vxx - vx * (mesh.y_xixi[i] / j)) / (j * j);
    }
    (d1, d2)
}

/// Centered-difference coefficients `(left, centre, right)` at interior
/// node `i` for the first and second `y`-derivatives.
pub(crate) fn stencil(mesh: &Mesh, i: usize) -> ([f64; 3], [f64; 3]) {
    let h = mesh.dxi;
    let j = mesh.y_xi[i];
    let r = mesh.y_xixi[i] / j;
    let d1 = [-1.0 / (2.0 * h * j), 0.0, 1.0 / (2.0 * h * j)];
    let a = 1.0 / (h * h * j * j);
    let d2 = [a + r / (2.0 * h * j * j), -2.0 * a, a - r / (2.0 * h * j * j)];
    (d1, d2)
}

/// Cubic Lagrange interpolation in `xi`; outside the mesh the end cubic is
/// extrapolated.
pub fn interpolate_cubic(mesh: &Mesh, v: &[Complex64], x: f64) -> Complex64 {
    let n = mesh.len();
    let cell = mesh.locate(x);
    let start = cell.saturating_sub(1).min(n - 4);
    let xi_of = |y: f64| -> f64 {
        match mesh.kind {
            MeshKind::Uniform => (y - mesh.y[0]) / mesh.dxi,
            MeshKind::Sinh { focus } => (y / focus).asinh() / mesh.dxi + (n - 1) as f64 / 2.0,
        }
    };
    let t = xi_of(x);
    let mut acc = Complex64::new(0.0, 0.0);
    for a in 0..4 {
        let ia = start + a;
        let mut l = 1.0;
        for b in 0..4 {
            if b != a {
                let ib = (start + b) as f64;
                l *= (t - ib) / (ia as f64 - ib);
            }
        }
        acc += v[ia] * l;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn sinh_mesh_is_symmetric_and_resolves_origin() {
        let m = Mesh::sinh_with_spacing(9.5, 4096, 1.5e-4).unwrap();
        let n = m.len();
        for i in 0..n {
            assert_eq!(m.y(i), -m.y(n - 1 - i));
        }
        assert_relative_eq!(m.hi(), 9.5, max_relative = 1e-12);
        assert!(m.max_spacing_within(1e-3) <= 1.5e-4 * 1.001);
    }

    #[test]
    fn trapezoid_integrates_gaussian() {
        for mesh in [Mesh::symmetric(12.0, 801).unwrap(), Mesh::sinh(12.0, 801, 0.5).unwrap()] {
            let f: Vec<f64> = mesh.nodes().iter().map(|y| (-y * y).exp()).collect();
            assert_relative_eq!(mesh.integrate_real(&f), std::f64::consts::PI.sqrt(), max_relative = 1e-10);
        }
    }

    #[test]
    fn derivatives_converge_at_second_order() {
        let err = |n: usize| {
            let mesh = Arc::new(Mesh::sinh(3.0, n, 0.7).unwrap());
            let g = GridFunction::from_real_fn(mesh.clone(), |y| (y).sin() * (-0.1 * y * y).exp());
            let d2 = g.second_derivative();
            let mut e: f64 = 0.0;
            for i in 1..n - 1 {
                let y = mesh.y(i);
                let exact = {
                    let (s, co, ex) = (y.sin(), y.cos(), (-0.1 * y * y).exp());
                    ex * (-s - 0.4 * y * co + (-0.2 + 0.04 * y * y) * s)
                };
                e = e.max((d2.values()[i] - c(exact)).norm());
            }
            e
        };
        let ratio = err(201) / err(401);
        assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn cubic_interpolation_exact_for_cubics_in_xi() {
        let mesh = Arc::new(Mesh::symmetric(2.0, 41).unwrap());
        let g = GridFunction::from_real_fn(mesh.clone(), |y| 1.0 - 2.0 * y + 0.5 * y.powi(3));
        for &x in &[-1.97, -0.333, 0.0, 0.71, 1.99] {
            assert_relative_eq!(g.interpolate(x).re, 1.0 - 2.0 * x + 0.5 * x.powi(3), epsilon = 1e-12);
        }
    }

    #[test]
    fn scaled_mesh_scales_weights() {
        let m = Mesh::sinh(4.0, 101, 0.3).unwrap();
        let s = m.scaled(2.5);
        assert_relative_eq!(s.hi(), 10.0, max_relative = 1e-14);
        let f: Vec<f64> = m.nodes().iter().map(|y| y * y).collect();
        let g: Vec<f64> = s.nodes().iter().map(|y| y * y).collect();
        assert_relative_eq!(s.integrate_real(&g), 2.5_f64.powi(3) * m.integrate_real(&f), max_relative = 1e-12);
        let u = Mesh::symmetric(1.0, 11).unwrap().scaled(3.0);
        assert_relative_eq!(u.integrate_real(&vec![1.0; 11]), 6.0, max_relative = 1e-14);
    }
}
