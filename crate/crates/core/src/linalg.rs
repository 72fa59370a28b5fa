//! Small dense helpers: 2x2 blocks, a block-tridiagonal solver and a
//! least-squares line fit.

use crate::error::{Error, Result};

pub type Mat2 = [[f64; 2]; 2];
pub type Vec2 = [f64; 2];

pub const ZERO2: Mat2 = [[0.0; 2]; 2];
pub const IDENTITY2: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

pub fn det2(a: &Mat2) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

pub fn inv2(a: &Mat2) -> Option<Mat2> {
    let d = det2(a);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    Some([[a[1][1] / d, -a[0][1] / d], [-a[1][0] / d, a[0][0] / d]])
}

pub fn mul2(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = ZERO2;
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

pub fn mulv2(a: &Mat2, v: &Vec2) -> Vec2 {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

pub fn sub2(a: &Mat2, b: &Mat2) -> Mat2 {
    [[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]]
}

/// Matrix of multiplication by the complex number `re + i im` acting on
/// `(Re, Im)` pairs.
pub fn complex_block(re: f64, im: f64) -> Mat2 {
    [[re, -im], [im, re]]
}

/// Solves `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]`.
///
/// `lower[0]` and `upper[n-1]` are ignored.
pub fn solve_block_tridiagonal(lower: &[Mat2], diag: &[Mat2], upper: &[Mat2], rhs: &[Vec2]) -> Result<Vec<Vec2>> {
    let n = diag.len();
    if lower.len() != n || upper.len() != n || rhs.len() != n || n == 0 {
        return Err(Error::InvalidMesh("block system size mismatch".into()));
    }
    let mut dprime = Vec::with_capacity(n);
    let mut rprime = Vec::with_capacity(n);
    dprime.push(diag[0]);
    rprime.push(rhs[0]);
    for i in 1..n {
        let inv = inv2(&dprime[i - 1]).ok_or_else(|| Error::NonFinite(format!("singular pivot block at row {}", i - 1)))?;
        let m = mul2(&lower[i], &inv);
        dprime.push(sub2(&diag[i], &mul2(&m, &upper[i - 1])));
        let mr = mulv2(&m, &rprime[i - 1]);
        rprime.push([rhs[i][0] - mr[0], rhs[i][1] - mr[1]]);
    }
    let mut x = vec![[0.0; 2]; n];
    let inv = inv2(&dprime[n - 1]).ok_or_else(|| Error::NonFinite("singular final pivot block".into()))?;
    x[n - 1] = mulv2(&inv, &rprime[n - 1]);
    for i in (0..n - 1).rev() {
        let ux = mulv2(&upper[i], &x[i + 1]);
        let inv = inv2(&dprime[i]).ok_or_else(|| Error::NonFinite(format!("singular pivot block at row {i}")))?;
        x[i] = mulv2(&inv, &[rprime[i][0] - ux[0], rprime[i][1] - ux[1]]);
    }
    Ok(x)
}

/// Ordinary least-squares line `y = slope x + intercept`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InsufficientData(format!("line fit needs two or more points, got {}", x.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("degenerate abscissae".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn block_solver_inverts_random_dominant_systems(
            seed in proptest::collection::vec(-1.0..1.0f64, 12 * 8),
        ) {
            let n = 8;
            let blk = |o: usize| [[seed[o], seed[o + 1]], [seed[o + 2], seed[o + 3]]];
            let lower: Vec<Mat2> = (0..n).map(|i| blk(12 * i)).collect();
            let upper: Vec<Mat2> = (0..n).map(|i| blk(12 * i + 4)).collect();
            let diag: Vec<Mat2> = (0..n).map(|i| {
                let mut d = blk(12 * i + 8);
                d[0][0] += 6.0;
                d[1][1] += 6.0;
                d
            }).collect();
            let x_true: Vec<Vec2> = (0..n).map(|i| [seed[12 * i] + 0.5, seed[12 * i + 5] - 0.25]).collect();
            let mut rhs = vec![[0.0; 2]; n];
            for i in 0..n {
                let mut r = mulv2(&diag[i], &x_true[i]);
                if i > 0 {
                    let l = mulv2(&lower[i], &x_true[i - 1]);
                    r = [r[0] + l[0], r[1] + l[1]];
                }
                if i + 1 < n {
                    let u = mulv2(&upper[i], &x_true[i + 1]);
                    r = [r[0] + u[0], r[1] + u[1]];
                }
                rhs[i] = r;
            }
            let x = solve_block_tridiagonal(&lower, &diag, &upper, &rhs).unwrap();
            for i in 0..n {
                prop_assert!((x[i][0] - x_true[i][0]).abs() < 1e-10);
                prop_assert!((x[i][1] - x_true[i][1]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let x = [1.0, 2.0, 3.5, 5.0];
        let y: Vec<f64> = x.iter().map(|v| -1.5 * v + 0.25).collect();
        let (m, c) = fit_line(&x, &y).unwrap();
        assert!((m + 1.5).abs() < 1e-14 && (c - 0.25).abs() < 1e-14);
        assert!(fit_line(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn complex_block_multiplies() {
        let b = complex_block(2.0, -3.0);
        let v = mulv2(&b, &[0.5, 1.0]);
        // (2 - 3i)(0.5 + i) = 1 + 2i - 1.5i + 3 = 4 + 0.5i
        assert_eq!(v, [4.0, 0.5]);
    }
}
