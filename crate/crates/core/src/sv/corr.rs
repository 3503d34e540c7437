//! Hyperspherical (Cholesky-angle) coordinates for correlation matrices.
//!
//! A correlation matrix is written Psi = L L' where L is lower triangular
//! with unit-norm rows built from angles phi_ij in (0, pi):
//!
//! ```text
//! L_i1 = cos(phi_i1)
//! L_ij = cos(phi_ij) * prod_{l<j} sin(phi_il)      (j < i)
//! L_ii = prod_{l<i} sin(phi_il)
//! ```
//!
//! Every angle vector maps to a valid correlation matrix, which is what lets
//! the Metropolis step propose freely in R^{n(n-1)/2}. The unconstrained
//! coordinate is x with phi = pi * sigmoid(x).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Number of free angles for an n x n correlation matrix.
pub(crate) fn angle_count(n: usize) -> usize {
    n * (n - 1) / 2
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// phi = pi * sigmoid(x), elementwise.
pub(crate) fn angles_from_unconstrained(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| std::f64::consts::PI * sigmoid(v)).collect()
}

/// log |d phi / d x| summed over coordinates.
pub(crate) fn log_jacobian_unconstrained(x: &[f64]) -> f64 {
    x.iter()
        .map(|&v| {
            let s = sigmoid(v);
            (std::f64::consts::PI * s * (1.0 - s)).max(f64::MIN_POSITIVE).ln()
        })
        .sum()
}

/// x = logit(phi / pi), elementwise.
pub(crate) fn unconstrained_from_angles(phi: &[f64]) -> Vec<f64> {
    phi.iter()
        .map(|&p| {
            let u = (p / std::f64::consts::PI).clamp(1e-12, 1.0 - 1e-12);
            (u / (1.0 - u)).ln()
        })
        .collect()
}

/// Lower-triangular Cholesky factor from angles (row-major angle order:
/// (i, j) for i = 1..n, j = 0..i-1).
pub(crate) fn cholesky_from_angles(n: usize, phi: &[f64]) -> DMatrix<f64> {
    debug_assert_eq!(phi.len(), angle_count(n));
    let mut l = DMatrix::zeros(n, n);
    l[(0, 0)] = 1.0;
    let mut idx = 0;
    for i in 1..n {
        let mut cum = 1.0;
        for j in 0..i {
            let a = phi[idx];
            idx += 1;
            l[(i, j)] = a.cos() * cum;
            cum *= a.sin();
        }
        l[(i, i)] = cum;
    }
    l
}

/// Correlation matrix and log-determinant from angles.
pub(crate) fn corr_from_angles(n: usize, phi: &[f64]) -> (DMatrix<f64>, f64) {
    let l = cholesky_from_angles(n, phi);
    let psi = &l * l.transpose();
    let mut psi = psi;
    // Force exact unit diagonal and symmetry against rounding.
    for i in 0..n {
        psi[(i, i)] = 1.0;
    }
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (psi[(i, j)] + psi[(j, i)]);
            psi[(i, j)] = avg;
            psi[(j, i)] = avg;
        }
    }
    let log_det = 2.0
        * (1..n)
            .flat_map(|i| {
                let base = angle_row_offset(i);
                (0..i).map(move |j| (base + j, ()))
            })
            .map(|(k, _)| phi[k].sin().max(f64::MIN_POSITIVE).ln())
            .sum::<f64>();
    (psi, log_det)
}

#[inline]
fn angle_row_offset(i: usize) -> usize {
    i * (i - 1) / 2
}

/// log |d Psi / d phi| for the map from angles to the free correlations.
///
/// The Jacobian is triangular in the row-major ordering, with diagonal
/// entries d psi_ik / d phi_ik = L_kk * sin(phi_ik) * prod_{l<k} sin(phi_il).
pub(crate) fn log_jacobian_angles(n: usize, phi: &[f64]) -> f64 {
    let mut log_sin = vec![0.0; phi.len()];
    for (k, &a) in phi.iter().enumerate() {
        log_sin[k] = a.sin().max(f64::MIN_POSITIVE).ln();
    }
    // prefix[i][k] = sum_{l<k} log sin(phi_il); diag log L_kk = prefix[k][k].
    let mut log_l_diag = vec![0.0; n];
    for i in 1..n {
        let base = angle_row_offset(i);
        log_l_diag[i] = (0..i).map(|l| log_sin[base + l]).sum();
    }
    let mut total = 0.0;
    for i in 1..n {
        let base = angle_row_offset(i);
        let mut prefix = 0.0;
        for k in 0..i {
            total += log_l_diag[k] + log_sin[base + k] + prefix;
            prefix += log_sin[base + k];
        }
    }
    total
}

/// Recover angles from a valid correlation matrix via its Cholesky factor.
pub(crate) fn angles_from_corr(psi: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = psi.nrows();
    let chol = psi
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("correlation matrix".into()))?;
    let l = chol.l();
    let mut phi = Vec::with_capacity(angle_count(n));
    for i in 1..n {
        let mut cum = 1.0;
        for j in 0..i {
            let c = (l[(i, j)] / cum).clamp(-1.0 + 1e-12, 1.0 - 1e-12);
            let a = c.acos();
            phi.push(a);
            cum *= a.sin();
        }
    }
    Ok(phi)
}
