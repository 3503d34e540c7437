//! VAR(P) data model: coefficient tensor, design rows, OLS baseline, and
//! forecast arithmetic shared by every prior scheme.
//!
//! The model for an n-dimensional series is
//!
//! ```text
//! y_it = sum_j sum_k theta_ijk * y_{j,t-k} + eps_it,   eps_t ~ N(0, Omega_t)
//! ```
//!
//! There is no intercept: series are standardized to mean zero before
//! estimation, and the data model carries none.

use nalgebra::{DMatrix, DVector};

use crate::data::TimeSeriesPanel;
use crate::error::{Error, Result};

/// Dimensions of a VAR(P) fit: `n` series, max lag `p`, and `t` usable
/// observations after lag trimming.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarShape {
    pub n: usize,
    pub p: usize,
    pub t: usize,
}

impl VarShape {
    pub fn new(n: usize, p: usize, t: usize) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::InvalidArgument(
                "VAR shape requires n >= 1 and p >= 1".into(),
            ));
        }
        Ok(Self { n, p, t })
    }

    /// Number of predictors per equation.
    pub fn regressors(&self) -> usize {
        self.n * self.p
    }

    /// Total coefficient count n^2 * P.
    pub fn coef_count(&self) -> usize {
        self.n * self.n * self.p
    }
}

/// Residual vector for one time index.
#[derive(Debug, Clone)]
pub struct ResidualSlice {
    pub t: usize,
    pub eps: DVector<f64>,
}

/// The n x n x P array of VAR coefficients.
///
/// The canonical flattening is i-major, then j, then k: the coefficients of
/// equation `i` occupy the contiguous block `[i*n*p, (i+1)*n*p)`, ordered so
/// that the block lines up with [`build_design_row`] (predictor-major, then
/// lag). `flatten`/`unflatten` round-trip exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefTensor {
    n: usize,
    p: usize,
    values: Vec<f64>,
}

impl CoefTensor {
    pub fn zeros(n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            values: vec![0.0; n * n * p],
        }
    }

    pub fn from_flat(n: usize, p: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n * p {
            return Err(Error::Dimension(format!(
                "coefficient vector has length {}, expected {}",
                values.len(),
                n * n * p
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("coefficient tensor".into()));
        }
        Ok(Self { n, p, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Flat index of (i, j, k): target equation, predictor series, lag.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.p + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let idx = self.index(i, j, k);
        self.values[idx] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Coefficients of equation `i`, ordered to match the design row.
    pub fn equation(&self, i: usize) -> &[f64] {
        let np = self.n * self.p;
        &self.values[i * np..(i + 1) * np]
    }

    /// Elementwise mean of a set of draws.
    pub fn average<'a>(draws: impl IntoIterator<Item = &'a CoefTensor>) -> Result<CoefTensor> {
        let mut iter = draws.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::EmptyInput("coefficient draws".into()))?;
        let mut acc = first.values.clone();
        let mut count = 1usize;
        for draw in iter {
            if draw.n != first.n || draw.p != first.p {
                return Err(Error::Dimension("draws have mixed shapes".into()));
            }
            for (a, v) in acc.iter_mut().zip(&draw.values) {
                *a += v;
            }
            count += 1;
        }
        let inv = 1.0 / count as f64;
        for a in acc.iter_mut() {
            *a *= inv;
        }
        Ok(CoefTensor {
            n: first.n,
            p: first.p,
            values: acc,
        })
    }
}

/// Lagged predictor values for forecasting row `t` (0-based), ordered
/// predictor-major then lag: entry `j*p + k` is `y_{j, t-1-k}`.
///
/// Requires `t >= p` so that every referenced lag exists.
pub fn build_design_row(panel: &TimeSeriesPanel, t: usize, shape: &VarShape) -> Result<DVector<f64>> {
    if panel.n_series() != shape.n {
        return Err(Error::Dimension(format!(
            "panel has {} series, shape expects {}",
            panel.n_series(),
            shape.n
        )));
    }
    if t < shape.p || t >= panel.len() + 1 {
        return Err(Error::InvalidArgument(format!(
            "design row at t = {t} needs {} earlier rows (panel holds {})",
            shape.p,
            panel.len()
        )));
    }
    let values = panel.values();
    let mut row = DVector::zeros(shape.regressors());
    for j in 0..shape.n {
        for k in 0..shape.p {
            let v = values[(t - 1 - k, j)];
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "panel value for series {j} at lag row {}",
                    t - 1 - k
                )));
            }
            row[j * shape.p + k] = v;
        }
    }
    Ok(row)
}

/// Conditional mean of y_t given one coefficient draw and a design row.
pub fn conditional_mean(theta: &CoefTensor, design_row: &DVector<f64>) -> Result<DVector<f64>> {
    let np = theta.n() * theta.p();
    if design_row.len() != np {
        return Err(Error::Dimension(format!(
            "design row has length {}, expected {}",
            design_row.len(),
            np
        )));
    }
    let mut mean = DVector::zeros(theta.n());
    for i in 0..theta.n() {
        let eq = theta.equation(i);
        let mut acc = 0.0;
        for (c, x) in eq.iter().zip(design_row.iter()) {
            acc += c * x;
        }
        mean[i] = acc;
    }
    Ok(mean)
}

/// Stacked design matrix with rows t = p..len-1 (one row per usable time
/// index) and the matching targets.
pub fn design_and_targets(
    panel: &TimeSeriesPanel,
    shape: &VarShape,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let len = panel.len();
    if len <= shape.p {
        return Err(Error::InvalidArgument(format!(
            "panel of length {len} cannot support lag order {}",
            shape.p
        )));
    }
    let rows = len - shape.p;
    let mut x = DMatrix::zeros(rows, shape.regressors());
    let mut y = DMatrix::zeros(rows, shape.n);
    for (r, t) in (shape.p..len).enumerate() {
        let row = build_design_row(panel, t, shape)?;
        x.row_mut(r).copy_from(&row.transpose());
        for j in 0..shape.n {
            y[(r, j)] = panel.values()[(t, j)];
        }
    }
    Ok((x, y))
}

/// Per-equation least squares via QR. Fails loudly on rank deficiency rather
/// than falling back to a pseudo-inverse.
pub fn fit_ols(panel: &TimeSeriesPanel, shape: &VarShape) -> Result<CoefTensor> {
    let (x, y) = design_and_targets(panel, shape)?;
    let rows = x.nrows();
    let cols = x.ncols();
    if rows < cols {
        return Err(Error::SingularDesign(format!(
            "{rows} rows < {cols} regressors"
        )));
    }
    let qr = x.clone().col_piv_qr();
    let r = qr.r();
    let r00 = r[(0, 0)].abs();
    let tol = r00 * 1e-10;
    if r00 == 0.0 || (0..cols).any(|k| r[(k, k)].abs() <= tol) {
        return Err(Error::SingularDesign(
            "design matrix is rank deficient".into(),
        ));
    }
    // Least squares via X P = Q R: solve R w = (Q' Y)[..cols], then undo the
    // column pivoting.
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let top = qty.rows(0, cols).into_owned();
    let mut solution = r
        .solve_upper_triangular(&top)
        .ok_or_else(|| Error::SingularDesign("QR solve failed".into()))?;
    qr.p().inv_permute_rows(&mut solution);
    // solution is (n*p) x n with column i holding equation i's coefficients.
    let mut theta = CoefTensor::zeros(shape.n, shape.p);
    for i in 0..shape.n {
        for c in 0..cols {
            theta.as_mut_slice()[i * cols + c] = solution[(c, i)];
        }
    }
    Ok(theta)
}

/// Residuals y_t - theta * x_t for every usable time index.
pub fn residuals(
    panel: &TimeSeriesPanel,
    shape: &VarShape,
    theta: &CoefTensor,
) -> Result<Vec<ResidualSlice>> {
    let (x, y) = design_and_targets(panel, shape)?;
    let mut out = Vec::with_capacity(x.nrows());
    for r in 0..x.nrows() {
        let row = x.row(r).transpose();
        let mean = conditional_mean(theta, &row)?;
        let mut eps = DVector::zeros(shape.n);
        for j in 0..shape.n {
            eps[j] = y[(r, j)] - mean[j];
        }
        out.push(ResidualSlice {
            t: shape.p + r,
            eps,
        });
    }
    Ok(out)
}

/// Posterior predictive mean: the average conditional mean over draws.
///
/// By linearity this equals `conditional_mean` of the averaged tensor.
pub fn forecast_mean(draws: &[CoefTensor], design_row: &DVector<f64>) -> Result<DVector<f64>> {
    if draws.is_empty() {
        return Err(Error::EmptyInput("coefficient draws".into()));
    }
    let mut acc = conditional_mean(&draws[0], design_row)?;
    for draw in &draws[1..] {
        if draw.n() != draws[0].n() || draw.p() != draws[0].p() {
            return Err(Error::Dimension("draws have mixed shapes".into()));
        }
        acc += conditional_mean(draw, design_row)?;
    }
    Ok(acc / draws.len() as f64)
}

/// Cached design matrix and targets, shared by the samplers so the stacked
/// lag rows are built once per chain.
#[derive(Debug, Clone)]
pub struct DesignCache {
    /// (T - P) x (n P) stacked design rows.
    pub x: DMatrix<f64>,
    /// (T - P) x n targets.
    pub y: DMatrix<f64>,
}

impl DesignCache {
    pub fn new(panel: &TimeSeriesPanel, shape: &VarShape) -> Result<Self> {
        let (x, y) = design_and_targets(panel, shape)?;
        Ok(Self { x, y })
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }
}

/// Residual matrix Y - X Theta' ((T - P) x n) for the cached design.
pub fn residual_matrix(cache: &DesignCache, theta: &CoefTensor) -> DMatrix<f64> {
    let m = cache.rows();
    let n = theta.n();
    let np = theta.n() * theta.p();
    let mut resid = cache.y.clone();
    for i in 0..n {
        let eq = theta.equation(i);
        for t in 0..m {
            let mut acc = 0.0;
            for c in 0..np {
                acc += cache.x[(t, c)] * eq[c];
            }
            resid[(t, i)] -= acc;
        }
    }
    resid
}

/// Residual slices (time-ordered) from a residual matrix.
pub fn residual_slices(resid: &DMatrix<f64>, p: usize) -> Vec<ResidualSlice> {
    (0..resid.nrows())
        .map(|r| ResidualSlice {
            t: p + r,
            eps: resid.row(r).transpose(),
        })
        .collect()
}

/// Root mean squared forecast error.
pub fn rmsfe(predictions: &[f64], realized: &[f64]) -> Result<f64> {
    if predictions.len() != realized.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} realized values",
            predictions.len(),
            realized.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput("forecast errors".into()));
    }
    let sum: f64 = predictions
        .iter()
        .zip(realized)
        .map(|(p, r)| (p - r) * (p - r))
        .sum();
    Ok((sum / predictions.len() as f64).sqrt())
}
