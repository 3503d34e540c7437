//! Spike-and-slab prior: inclusion indicators delta_ijk, per-equation
//! exclusion probabilities pi_i, and slab coefficients beta_ijk with
//! theta_ijk = delta_ijk * beta_ijk.
//!
//! The delta sweep is the stochastic-search step: each indicator is drawn
//! from its exact Bernoulli full conditional given the slab values and all
//! other indicators, in a fixed lexicographic (i, j, k) order, with the
//! residual matrix updated incrementally after every flip.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{CoefTensor, DesignCache, VarShape};
use crate::shrinkage::{self, ThetaPosterior, PRIOR_VAR_CAP, PRIOR_VAR_FLOOR};
use crate::sv::VolatilityState;

/// Latent state of the discrete mixture prior.
#[derive(Debug, Clone)]
pub struct DiscreteMixtureState {
    n: usize,
    p: usize,
    /// Inclusion indicators, length n^2 * P, values 0 or 1.
    pub delta: Vec<u8>,
    /// Slab coefficients, length n^2 * P.
    pub beta: Vec<f64>,
    /// Per-equation exclusion probabilities pi_i in (0, 1).
    pub pi: Vec<f64>,
    /// Beta prior parameters for pi.
    pub a: f64,
    pub b: f64,
    /// Slab variance c^2.
    pub c_sq: f64,
}

impl DiscreteMixtureState {
    /// Paper defaults: delta = 1 everywhere, a = b = 1, c^2 = 9.
    pub fn new(n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            delta: vec![1; n * n * p],
            beta: vec![0.0; n * n * p],
            pi: vec![0.5; n],
            a: 1.0,
            b: 1.0,
            c_sq: 9.0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn coef_count(&self) -> usize {
        self.n * self.n * self.p
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta.iter().any(|&d| d > 1) {
            return Err(Error::InvalidArgument("delta must be 0/1".into()));
        }
        if self.pi.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::InvalidArgument("pi must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Effective coefficients delta (elementwise) beta. Excluded entries are
/// exact zeros, which is what distinguishes the mixture from the shrinkage
/// schemes.
pub fn effective_theta(state: &DiscreteMixtureState) -> CoefTensor {
    let values: Vec<f64> = state
        .delta
        .iter()
        .zip(&state.beta)
        .map(|(&d, &b)| if d == 1 { b } else { 0.0 })
        .collect();
    CoefTensor::from_flat(state.n, state.p, values).expect("state vectors have matching length")
}

#[inline]
fn clamp_pi(pi: f64) -> f64 {
    pi.clamp(1e-12, 1.0 - 1e-12)
}

/// Log odds of delta = 1 vs delta = 0 for one coefficient, given the current
/// residual matrix (consistent with the current delta) and the
/// volatility-scaled precision pieces.
#[allow(clippy::too_many_arguments)]
fn delta_log_odds(
    cache: &DesignCache,
    psi_inv: &DMatrix<f64>,
    einv: &DMatrix<f64>,
    resid: &DMatrix<f64>,
    eq: usize,
    col: usize,
    slab: f64,
    current: u8,
    pi: f64,
) -> f64 {
    let m = cache.rows();
    let n = resid.ncols();
    let pi = clamp_pi(pi);
    let prior = ((1.0 - pi) / pi).ln();
    if slab == 0.0 {
        return prior;
    }
    // SSE(delta=1) - SSE(delta=0), only equation `eq` terms differ:
    // eps1 = eps0 - slab * x, cross terms weighted by Omega_t^{-1}.
    let mut delta_sse = 0.0;
    for t in 0..m {
        let x = cache.x[(t, col)];
        if x == 0.0 {
            continue;
        }
        let e_cur = resid[(t, eq)];
        let step = slab * x;
        let (e1, e0) = if current == 1 {
            (e_cur, e_cur + step)
        } else {
            (e_cur - step, e_cur)
        };
        let w_scale = einv[(t, eq)];
        let w_ii = psi_inv[(eq, eq)] * w_scale * w_scale;
        let mut cross = 0.0;
        for a in 0..n {
            if a != eq {
                cross += psi_inv[(eq, a)] * einv[(t, a)] * resid[(t, a)];
            }
        }
        cross *= w_scale;
        delta_sse += w_ii * (e1 * e1 - e0 * e0) + 2.0 * (e1 - e0) * cross;
    }
    prior - 0.5 * delta_sse
}

/// One full lexicographic sweep of the inclusion indicators from their exact
/// Bernoulli full conditionals. `resid` must hold the residuals of the
/// current effective coefficients and is updated in place on every flip.
pub fn sample_delta<R: Rng>(
    cache: &DesignCache,
    shape: &VarShape,
    state: &mut DiscreteMixtureState,
    vol: &VolatilityState,
    resid: &mut DMatrix<f64>,
    rng: &mut R,
) -> Result<()> {
    let n = shape.n;
    let np = shape.regressors();
    let m = cache.rows();
    if resid.nrows() != m || resid.ncols() != n {
        return Err(Error::Dimension("residual matrix shape".into()));
    }
    let (psi_inv, _) = vol.psi_inverse()?;
    let mut einv = DMatrix::zeros(m, n);
    for t in 0..m {
        for i in 0..n {
            let w = vol.omega[(i, t)];
            if w.abs() > 300.0 {
                return Err(Error::VolatilityOverflow(w.abs()));
            }
            einv[(t, i)] = (-w).exp();
        }
    }
    for idx in 0..state.coef_count() {
        let eq = idx / np;
        let col = idx % np;
        let slab = state.beta[idx];
        let current = state.delta[idx];
        let log_odds = delta_log_odds(
            cache, &psi_inv, &einv, resid, eq, col, slab, current, state.pi[eq],
        );
        if log_odds.is_nan() {
            return Err(Error::NonFinite(format!(
                "delta log odds for coefficient {idx}"
            )));
        }
        let p1 = 1.0 / (1.0 + (-log_odds).exp());
        let new: u8 = if rng.random::<f64>() < p1 { 1 } else { 0 };
        if new != current {
            // flipping 0 -> 1 subtracts slab * x from equation residuals
            let sign = if new == 1 { -1.0 } else { 1.0 };
            for t in 0..m {
                resid[(t, eq)] += sign * slab * cache.x[(t, col)];
            }
            state.delta[idx] = new;
        }
    }
    Ok(())
}

/// Joint Gaussian posterior over the currently included slab coefficients.
pub(crate) fn included_posterior(
    cache: &DesignCache,
    shape: &VarShape,
    state: &DiscreteMixtureState,
    vol: &VolatilityState,
) -> Result<Option<(Vec<usize>, ThetaPosterior)>> {
    let included: Vec<usize> = (0..state.coef_count())
        .filter(|&idx| state.delta[idx] == 1)
        .collect();
    if included.is_empty() {
        return Ok(None);
    }
    let (gram, rhs) = shrinkage::assemble_gram(cache, shape, vol)?;
    let k = included.len();
    let mut sub = DMatrix::zeros(k, k);
    let mut sub_rhs = DVector::zeros(k);
    for (r, &gi) in included.iter().enumerate() {
        sub_rhs[r] = rhs[gi];
        for (c, &gj) in included.iter().enumerate() {
            sub[(r, c)] = gram[(gi, gj)];
        }
    }
    let prior = vec![state.c_sq; k];
    let post = shrinkage::posterior_from_gram(sub, &sub_rhs, &prior)?;
    Ok(Some((included, post)))
}

/// Draw the slab coefficients: included entries jointly from their Gaussian
/// full conditional, excluded entries refreshed from the N(0, c^2) prior so
/// the chain stays irreducible across models.
pub fn sample_beta<R: Rng>(
    cache: &DesignCache,
    shape: &VarShape,
    state: &mut DiscreteMixtureState,
    vol: &VolatilityState,
    rng: &mut R,
) -> Result<()> {
    let joint = included_posterior(cache, shape, state, vol)?;
    let prior_sd = state.c_sq.clamp(PRIOR_VAR_FLOOR, PRIOR_VAR_CAP).sqrt();
    let prior = Normal::new(0.0, prior_sd).expect("positive slab sd");
    // Refresh excluded entries first, then overwrite included ones: the
    // draw order is fixed regardless of the inclusion pattern.
    for idx in 0..state.coef_count() {
        if state.delta[idx] == 0 {
            state.beta[idx] = prior.sample(rng);
        }
    }
    if let Some((included, post)) = joint {
        let draw = post.draw(rng);
        for (r, &idx) in included.iter().enumerate() {
            state.beta[idx] = draw[r];
        }
    }
    Ok(())
}

/// Beta posterior parameters of pi_i (exclusion probability):
/// Beta(a + #excluded, b + #included).
pub fn pi_posterior_params(state: &DiscreteMixtureState, eq: usize) -> (f64, f64) {
    let np = state.n * state.p;
    let included = state.delta[eq * np..(eq + 1) * np]
        .iter()
        .filter(|&&d| d == 1)
        .count();
    let excluded = np - included;
    (state.a + excluded as f64, state.b + included as f64)
}

/// Conjugate update of the per-equation exclusion probabilities.
pub fn sample_pi<R: Rng>(state: &mut DiscreteMixtureState, rng: &mut R) -> Result<()> {
    for eq in 0..state.n {
        let (alpha, beta) = pi_posterior_params(state, eq);
        let draw = Beta::new(alpha, beta)
            .map_err(|e| Error::InvalidArgument(format!("beta({alpha}, {beta}): {e}")))?
            .sample(rng);
        state.pi[eq] = clamp_pi(draw);
    }
    Ok(())
}

/// Elementwise posterior inclusion probability from stored indicator draws.
pub fn inclusion_probability<'a, I>(samples: I) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut iter = samples.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::EmptyInput("delta samples".into()))?;
    let mut acc: Vec<f64> = first.to_vec();
    let check = |v: f64| v == 0.0 || v == 1.0;
    if !first.iter().all(|&v| check(v)) {
        return Err(Error::InvalidArgument("delta samples must be binary".into()));
    }
    let mut count = 1usize;
    for s in iter {
        if s.len() != acc.len() {
            return Err(Error::Dimension("delta sample length".into()));
        }
        if !s.iter().all(|&v| check(v)) {
            return Err(Error::InvalidArgument("delta samples must be binary".into()));
        }
        for (a, &v) in acc.iter_mut().zip(s) {
            *a += v;
        }
        count += 1;
    }
    for a in acc.iter_mut() {
        *a /= count as f64;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TimeSeriesPanel;
    use crate::model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn effective_theta_cases() {
        let mut state = DiscreteMixtureState::new(2, 1);
        state.beta = vec![0.7, -0.2, 0.4, 0.9];
        state.delta = vec![0, 0, 0, 0];
        assert!(effective_theta(&state).as_slice().iter().all(|&v| v == 0.0));
        state.delta = vec![1, 1, 1, 1];
        assert_eq!(effective_theta(&state).as_slice(), state.beta.as_slice());
        state.delta = vec![1, 0, 0, 0];
        let eff = effective_theta(&state);
        assert_eq!(eff.as_slice(), &[0.7, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn effective_theta_exact_zeros() {
        let mut state = DiscreteMixtureState::new(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for b in state.beta.iter_mut() {
            *b = rng.random::<f64>() - 0.5;
        }
        for (i, d) in state.delta.iter_mut().enumerate() {
            *d = (i % 3 == 0) as u8;
        }
        let eff = effective_theta(&state);
        for (idx, v) in eff.as_slice().iter().enumerate() {
            if state.delta[idx] == 0 {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn pi_params_match_counting() {
        // 8 series x 4 lags = 32 coefficients per equation; 10 included.
        let mut state = DiscreteMixtureState::new(8, 4);
        for d in state.delta.iter_mut() {
            *d = 0;
        }
        for k in 0..10 {
            state.delta[k] = 1; // equation 0
        }
        assert_eq!(pi_posterior_params(&state, 0), (23.0, 11.0));
        // all included in equation 1
        for idx in 32..64 {
            state.delta[idx] = 1;
        }
        assert_eq!(pi_posterior_params(&state, 1), (1.0, 33.0));
    }

    #[test]
    fn pi_draws_match_beta_mean() {
        let mut state = DiscreteMixtureState::new(2, 2);
        // equation 0: 1 of 4 included -> Beta(4, 2), mean 2/3
        state.delta = vec![1, 0, 0, 0, 1, 1, 1, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 50_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sample_pi(&mut state, &mut rng).unwrap();
            sum += state.pi[0];
        }
        let mean = sum / n as f64;
        let expect = 4.0 / 6.0;
        // Beta(4,2) sd ~ 0.178; se of mean
        let se = 0.178 / (n as f64).sqrt();
        assert!((mean - expect).abs() < 3.0 * se, "mean {mean}");
    }

    fn toy_setup(
        seed: u64,
        rows: usize,
    ) -> (DesignCache, VarShape, VolatilityState, TimeSeriesPanel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = nalgebra::DMatrix::from_fn(rows, 1, |_, _| rng.random::<f64>() - 0.5);
        let panel = TimeSeriesPanel::synthetic(values);
        let shape = VarShape::new(1, 1, rows - 1).unwrap();
        let cache = DesignCache::new(&panel, &shape).unwrap();
        let vol = VolatilityState::new(1, rows - 1);
        (cache, shape, vol, panel)
    }

    #[test]
    fn zero_slab_gives_prior_inclusion() {
        let (cache, shape, vol, _panel) = toy_setup(3, 20);
        let mut state = DiscreteMixtureState::new(1, 1);
        state.beta[0] = 0.0;
        state.pi[0] = 0.3;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let theta = effective_theta(&state);
        let mut included = 0usize;
        let n = 20_000;
        for _ in 0..n {
            let mut resid = model::residual_matrix(&cache, &theta);
            state.delta[0] = 1;
            sample_delta(&cache, &shape, &mut state, &vol, &mut resid, &mut rng).unwrap();
            included += state.delta[0] as usize;
        }
        let freq = included as f64 / n as f64;
        let expect = 1.0 - 0.3;
        let se = (expect * (1.0 - expect) / n as f64).sqrt();
        assert!((freq - expect).abs() < 4.0 * se, "freq {freq}");
    }

    #[test]
    fn degenerate_pi_excludes_always() {
        let (cache, shape, vol, _panel) = toy_setup(5, 20);
        let mut state = DiscreteMixtureState::new(1, 1);
        state.beta[0] = 0.4;
        state.pi[0] = 1.0 - 1e-13; // clamped inside
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let theta = effective_theta(&state);
        for _ in 0..10_000 {
            let mut resid = model::residual_matrix(&cache, &theta);
            state.delta[0] = 1;
            sample_delta(&cache, &shape, &mut state, &vol, &mut resid, &mut rng).unwrap();
            assert_eq!(state.delta[0], 0);
        }
    }

    #[test]
    fn included_posterior_matches_conjugate_form() {
        // single included coefficient, unit noise: precision = sum x^2 + 1/c^2
        let (cache, shape, vol, _panel) = toy_setup(7, 25);
        let mut state = DiscreteMixtureState::new(1, 1);
        state.delta[0] = 1;
        state.c_sq = 9.0;
        let (included, post) = included_posterior(&cache, &shape, &state, &vol)
            .unwrap()
            .unwrap();
        assert_eq!(included, vec![0]);
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for t in 0..cache.rows() {
            sxx += cache.x[(t, 0)] * cache.x[(t, 0)];
            sxy += cache.x[(t, 0)] * cache.y[(t, 0)];
        }
        let precision = sxx + 1.0 / 9.0;
        assert!((post.mean[0] - sxy / precision).abs() < 1e-10);
        assert!((post.variance(0) - 1.0 / precision).abs() < 1e-10);
    }

    #[test]
    fn excluded_beta_refreshes_from_prior() {
        let (cache, shape, vol, _panel) = toy_setup(8, 20);
        let mut state = DiscreteMixtureState::new(1, 1);
        state.delta[0] = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 50_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            sample_beta(&cache, &shape, &mut state, &vol, &mut rng).unwrap();
            sum += state.beta[0];
            sumsq += state.beta[0] * state.beta[0];
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        // variance of the sample variance of N(0,9): 2 * 81 / n
        let se = (2.0 * 81.0 / n as f64).sqrt();
        assert!((var - 9.0).abs() < 4.0 * se, "var {var}");
    }

    #[test]
    fn tiny_slab_variance_pins_included_beta() {
        let (cache, shape, vol, _panel) = toy_setup(10, 20);
        let mut state = DiscreteMixtureState::new(1, 1);
        state.delta[0] = 1;
        state.c_sq = 0.0; // floored
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        sample_beta(&cache, &shape, &mut state, &vol, &mut rng).unwrap();
        assert!(state.beta[0].abs() < 1e-4, "beta {}", state.beta[0]);
    }

    #[test]
    fn inclusion_probability_cases() {
        let ones = vec![1.0, 1.0];
        let out = inclusion_probability([ones.as_slice(), ones.as_slice()]).unwrap();
        assert_eq!(out, vec![1.0, 1.0]);
        let a = vec![0.0, 1.0];
        let b = vec![1.0, 0.0];
        let out = inclusion_probability([a.as_slice(), b.as_slice()]).unwrap();
        assert_eq!(out, vec![0.5, 0.5]);
        assert!(inclusion_probability(std::iter::empty::<&[f64]>()).is_err());
    }
}
