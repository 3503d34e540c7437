//! Stochastic volatility: the time-varying error covariance
//!
//! ```text
//! Omega_t = diag(e^{w_1t}, ..., e^{w_nt}) Psi diag(e^{w_1t}, ..., e^{w_nt})
//! w_it = w_{i,t-1} + e_it,   e_it ~ N(0, tau_wi^2),   w_i1 ~ N(c, d^2)
//! ```
//!
//! with Psi ~ LKJ(m) and tau_wi ~ half-Cauchy(0, 1). The latent paths are
//! updated by particle Gibbs with backwards simulation ([`particle`]); Psi
//! and the innovation scales get random-walk Metropolis steps on
//! unconstrained coordinates.

mod corr;
pub mod particle;

pub use particle::{
    backward_simulate, capf_forward, pgbs_update, DirectObservation, ObservationModel,
    ParticleSystem, VarObservation,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::ResidualSlice;

/// Latent volatility paths, static correlation, and innovation scales.
#[derive(Debug, Clone)]
pub struct VolatilityState {
    /// Log standard deviations, n x T.
    pub omega: DMatrix<f64>,
    /// Static correlation matrix Psi, n x n.
    pub psi: DMatrix<f64>,
    /// Random-walk innovation standard deviations, length n.
    pub tau_omega: DVector<f64>,
    /// Initial-state prior mean c.
    pub init_mean: f64,
    /// Initial-state prior standard deviation d.
    pub init_sd: f64,
}

impl VolatilityState {
    /// Neutral state: flat zero log-volatility, identity correlation,
    /// tau = 0.1, standard-normal initial prior.
    pub fn new(n: usize, t: usize) -> Self {
        Self {
            omega: DMatrix::zeros(n, t),
            psi: DMatrix::identity(n, n),
            tau_omega: DVector::from_element(n, 0.1),
            init_mean: 0.0,
            init_sd: 1.0,
        }
    }

    pub fn n(&self) -> usize {
        self.omega.nrows()
    }

    pub fn t_len(&self) -> usize {
        self.omega.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.psi.nrows() != n || self.psi.ncols() != n {
            return Err(Error::Dimension("psi must be n x n".into()));
        }
        for i in 0..n {
            if (self.psi[(i, i)] - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidArgument("psi diagonal must be 1".into()));
            }
            for j in 0..i {
                if (self.psi[(i, j)] - self.psi[(j, i)]).abs() > 1e-10 {
                    return Err(Error::InvalidArgument("psi must be symmetric".into()));
                }
            }
        }
        let eig = self.psi.clone().symmetric_eigenvalues();
        if eig.iter().any(|&e| e <= 1e-10) {
            return Err(Error::NotPositiveDefinite(
                "psi has eigenvalue <= 1e-10".into(),
            ));
        }
        if self.tau_omega.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
            return Err(Error::InvalidArgument(
                "tau_omega must be strictly positive".into(),
            ));
        }
        if self.omega.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("omega".into()));
        }
        Ok(())
    }

    /// Inverse of Psi via Cholesky, with its log determinant.
    pub(crate) fn psi_inverse(&self) -> Result<(DMatrix<f64>, f64)> {
        psi_inverse_of(&self.psi)
    }
}

pub(crate) fn psi_inverse_of(psi: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let chol = psi
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("psi".into()))?;
    let n = psi.nrows();
    let log_det = (0..n).map(|i| 2.0 * chol.l_dirty()[(i, i)].ln()).sum();
    Ok((chol.inverse(), log_det))
}

/// The covariance matrix Omega_t = D Psi D with D = diag(e^{w_it}).
///
/// Errors if any |w_it| exceeds 300 instead of silently overflowing.
pub fn assemble_omega_t(vol: &VolatilityState, t: usize) -> Result<DMatrix<f64>> {
    let n = vol.n();
    if t >= vol.t_len() {
        return Err(Error::InvalidArgument(format!(
            "time index {t} outside 0..{}",
            vol.t_len()
        )));
    }
    let mut scale = DVector::zeros(n);
    for i in 0..n {
        let w = vol.omega[(i, t)];
        if w.abs() > 300.0 {
            return Err(Error::VolatilityOverflow(w.abs()));
        }
        scale[i] = w.exp();
    }
    let mut omega = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            omega[(i, j)] = vol.psi[(i, j)] * scale[i] * scale[j];
        }
    }
    debug_assert!(
        omega.clone().cholesky().is_some(),
        "assembled Omega_t must be positive definite"
    );
    Ok(omega)
}

/// Unnormalized LKJ log density: (m - 1) * log det(Psi).
pub fn lkj_log_density(psi: &DMatrix<f64>, m: f64) -> Result<f64> {
    let n = psi.nrows();
    for i in 0..n {
        if (psi[(i, i)] - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidArgument(
                "lkj density requires unit diagonal".into(),
            ));
        }
    }
    let (_, log_det) = psi_inverse_of(psi)?;
    Ok((m - 1.0) * log_det)
}

/// Scatter matrix of volatility-scaled residuals: S = sum_t u_t u_t' with
/// u_t = D_t^{-1} eps_t. The Psi likelihood is then
/// -T/2 log|Psi| - 1/2 tr(Psi^{-1} S) up to constants.
fn scaled_scatter(residuals: &[ResidualSlice], vol: &VolatilityState) -> Result<DMatrix<f64>> {
    let n = vol.n();
    let mut s = DMatrix::zeros(n, n);
    if residuals.len() != vol.t_len() {
        return Err(Error::Dimension(format!(
            "{} residual slices vs volatility length {}",
            residuals.len(),
            vol.t_len()
        )));
    }
    let mut u = DVector::zeros(n);
    for (r, slice) in residuals.iter().enumerate() {
        for i in 0..n {
            let w = vol.omega[(i, r)];
            if w.abs() > 300.0 {
                return Err(Error::VolatilityOverflow(w.abs()));
            }
            u[i] = slice.eps[i] * (-w).exp();
        }
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] += u[i] * u[j];
            }
        }
    }
    Ok(s)
}

fn psi_log_target(
    phi: &[f64],
    x: &[f64],
    n: usize,
    m: f64,
    t_len: f64,
    scatter: Option<&DMatrix<f64>>,
) -> Result<(DMatrix<f64>, f64)> {
    let (psi, log_det) = corr::corr_from_angles(n, phi);
    let mut target = (m - 1.0) * log_det
        + corr::log_jacobian_angles(n, phi)
        + corr::log_jacobian_unconstrained(x);
    if let Some(s) = scatter {
        let chol = psi
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("proposed psi".into()))?;
        let solved = chol.solve(s);
        target += -0.5 * t_len * log_det - 0.5 * solved.trace();
    }
    Ok((psi, target))
}

/// One random-walk Metropolis step on Psi in unconstrained angle
/// coordinates, targeting LKJ(m) x Gaussian likelihood. Returns whether the
/// proposal was accepted; the output is always a valid correlation matrix.
pub fn sample_psi<R: Rng>(
    residuals: &[ResidualSlice],
    vol: &mut VolatilityState,
    m: f64,
    step_scale: f64,
    rng: &mut R,
) -> Result<bool> {
    let n = vol.n();
    if n < 2 {
        return Ok(true);
    }
    if step_scale == 0.0 {
        return Ok(true);
    }
    let scatter = if residuals.is_empty() {
        None
    } else {
        Some(scaled_scatter(residuals, vol)?)
    };
    let t_len = residuals.len() as f64;

    let phi = corr::angles_from_corr(&vol.psi)?;
    let x = corr::unconstrained_from_angles(&phi);
    let (_, current) = psi_log_target(&phi, &x, n, m, t_len, scatter.as_ref())?;

    let x_new: Vec<f64> = x
        .iter()
        .map(|&v| v + step_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let phi_new = corr::angles_from_unconstrained(&x_new);
    let (psi_new, proposed) = psi_log_target(&phi_new, &x_new, n, m, t_len, scatter.as_ref())?;

    let log_ratio = proposed - current;
    if log_ratio.is_nan() {
        return Err(Error::NonFinite("psi acceptance ratio".into()));
    }
    let accept = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
    if accept {
        vol.psi = psi_new;
    }
    Ok(accept)
}

/// Per-series random-walk Metropolis on log tau_wi targeting
/// half-Cauchy(0,1) prior x random-walk increment likelihood. `upper`
/// optionally truncates the prior (used by small-scale validation runs).
pub fn sample_tau_omega<R: Rng>(
    vol: &mut VolatilityState,
    step_scales: &[f64],
    upper: Option<f64>,
    rng: &mut R,
) -> Result<Vec<bool>> {
    let n = vol.n();
    let t = vol.t_len();
    if step_scales.len() != n {
        return Err(Error::Dimension("one step scale per series".into()));
    }
    let mut accepted = vec![false; n];
    for i in 0..n {
        if step_scales[i] == 0.0 {
            accepted[i] = true;
            continue;
        }
        let mut ss = 0.0;
        for r in 1..t {
            let d = vol.omega[(i, r)] - vol.omega[(i, r - 1)];
            ss += d * d;
        }
        let increments = (t.saturating_sub(1)) as f64;
        let log_target = |x: f64| -> f64 {
            // softplus(2x) = ln(1 + e^{2x}), stable for large x
            let softplus = if 2.0 * x > 30.0 {
                2.0 * x
            } else {
                (2.0 * x).exp().ln_1p()
            };
            let quad = if ss == 0.0 {
                0.0
            } else {
                -0.5 * ss * (-2.0 * x).exp()
            };
            x - softplus - increments * x + quad
        };
        let x = vol.tau_omega[i].ln();
        let x_new = x + step_scales[i] * rng.sample::<f64, _>(StandardNormal);
        // Hard truncation below keeps the chain off tau = 0, where the
        // random-walk likelihood degenerates (and the particle filter floors
        // tau anyway); `upper` optionally truncates the prior above.
        if x_new.exp() < 1e-9 {
            continue;
        }
        if let Some(u) = upper {
            if x_new.exp() > u {
                continue;
            }
        }
        let log_ratio = log_target(x_new) - log_target(x);
        if log_ratio.is_nan() {
            return Err(Error::NonFinite(format!("tau_omega target for series {i}")));
        }
        if log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio {
            vol.tau_omega[i] = x_new.exp();
            accepted[i] = true;
        }
    }
    Ok(accepted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn omega_identity_when_flat() {
        let vol = VolatilityState::new(3, 4);
        let om = assemble_omega_t(&vol, 2).unwrap();
        assert_eq!(om, DMatrix::identity(3, 3));
    }

    #[test]
    fn omega_direct_substitution() {
        let mut vol = VolatilityState::new(2, 1);
        vol.omega[(0, 0)] = 2.0f64.ln();
        vol.omega[(1, 0)] = 0.0;
        vol.psi[(0, 1)] = 0.5;
        vol.psi[(1, 0)] = 0.5;
        let om = assemble_omega_t(&vol, 0).unwrap();
        assert!((om[(0, 0)] - 4.0).abs() < 1e-12);
        assert!((om[(0, 1)] - 1.0).abs() < 1e-12);
        assert!((om[(1, 0)] - 1.0).abs() < 1e-12);
        assert!((om[(1, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn omega_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 4;
        let mut vol = VolatilityState::new(n, 3);
        // random correlation via angles
        let phi: Vec<f64> = (0..super::corr::angle_count(n))
            .map(|_| 0.4 + 2.0 * rng.random::<f64>())
            .collect();
        let (psi, _) = super::corr::corr_from_angles(n, &phi);
        vol.psi = psi;
        for i in 0..n {
            for t in 0..3 {
                vol.omega[(i, t)] = rng.random::<f64>() - 0.5;
            }
        }
        let om = assemble_omega_t(&vol, 1).unwrap();
        let d = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| vol.omega[(i, 1)].exp()));
        let dense = &d * &vol.psi * &d;
        for (a, b) in om.iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn omega_overflow_guard() {
        let mut vol = VolatilityState::new(1, 1);
        vol.omega[(0, 0)] = 301.0;
        match assemble_omega_t(&vol, 0) {
            Err(Error::VolatilityOverflow(v)) => assert!(v > 300.0),
            other => panic!("expected overflow error, got {other:?}"),
        }
    }

    #[test]
    fn lkj_uniform_is_flat() {
        let mut psi = DMatrix::identity(3, 3);
        psi[(0, 1)] = 0.4;
        psi[(1, 0)] = 0.4;
        assert_eq!(lkj_log_density(&psi, 1.0).unwrap(), 0.0);
        assert_eq!(lkj_log_density(&DMatrix::identity(4, 4), 7.5).unwrap(), 0.0);
    }

    #[test]
    fn lkj_two_by_two() {
        let mut psi = DMatrix::identity(2, 2);
        psi[(0, 1)] = 0.6;
        psi[(1, 0)] = 0.6;
        let expect = 2.0 * (1.0f64 - 0.36).ln();
        assert!((lkj_log_density(&psi, 3.0).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn lkj_rejects_non_pd() {
        let mut psi = DMatrix::identity(2, 2);
        psi[(0, 1)] = 1.2;
        psi[(1, 0)] = 1.2;
        assert!(lkj_log_density(&psi, 1.0).is_err());
    }

    #[test]
    fn lkj_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 4;
        let phi: Vec<f64> = (0..super::corr::angle_count(n))
            .map(|_| 0.5 + 2.0 * rng.random::<f64>())
            .collect();
        let (psi, _) = super::corr::corr_from_angles(n, &phi);
        let base = lkj_log_density(&psi, 2.5).unwrap();
        // permute rows/cols simultaneously
        let perm = [2usize, 0, 3, 1];
        let mut permuted = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                permuted[(i, j)] = psi[(perm[i], perm[j])];
            }
        }
        let p = lkj_log_density(&permuted, 2.5).unwrap();
        assert!((base - p).abs() < 1e-10);
    }

    #[test]
    fn psi_step_zero_is_identity_op() {
        let mut vol = VolatilityState::new(3, 0);
        vol.psi[(0, 1)] = 0.3;
        vol.psi[(1, 0)] = 0.3;
        let before = vol.psi.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let accepted = sample_psi(&[], &mut vol, 1.0, 0.0, &mut rng).unwrap();
        assert!(accepted);
        assert_eq!(vol.psi, before);
    }

    #[test]
    fn tau_step_zero_is_identity_op() {
        let mut vol = VolatilityState::new(2, 10);
        let before = vol.tau_omega.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let acc = sample_tau_omega(&mut vol, &[0.0, 0.0], None, &mut rng).unwrap();
        assert!(acc.iter().all(|&a| a));
        assert_eq!(vol.tau_omega, before);
    }

    #[test]
    fn tau_concentrates_near_zero_for_constant_path() {
        // All increments zero: the chain should drift toward tiny tau.
        let mut vol = VolatilityState::new(1, 200);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut draws = Vec::new();
        for _ in 0..4000 {
            sample_tau_omega(&mut vol, &[0.5], None, &mut rng).unwrap();
            draws.push(vol.tau_omega[0]);
        }
        let tail = &draws[2000..];
        let mut sorted = tail.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sorted[sorted.len() / 2];
        assert!(median < 0.05, "median {median}");
    }
}
