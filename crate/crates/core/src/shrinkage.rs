//! Global-local shrinkage priors for the VAR coefficients: horseshoe,
//! Student's t, Laplace, and ridge, plus the joint Gaussian draw of the full
//! coefficient vector shared by every scheme.
//!
//! All four priors share the scale-mixture form theta ~ N(0, v) with
//! per-coefficient prior variance v; they differ in the law of v and its
//! conditional update:
//!
//! * horseshoe: v = lambda^2 * tau_i^2 with lambda, tau_i ~ half-Cauchy(0,1),
//!   sampled through the inverse-gamma auxiliary representation;
//! * Student's t: lambda^2 ~ InvGamma(a, b) (a = b = 1/2 gives a Cauchy
//!   marginal);
//! * Laplace: lambda^2 ~ Exp(rate 2), updated through the reciprocal
//!   inverse-Gaussian identity;
//! * ridge: lambda^2 fixed at 9.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, InverseGaussian, StandardNormal};

use crate::data::TimeSeriesPanel;
use crate::error::{Error, Result};
use crate::model::{CoefTensor, DesignCache, VarShape};
use crate::sv::VolatilityState;

/// Numerical bounds on prior variances entering the precision matrix.
pub const PRIOR_VAR_FLOOR: f64 = 1e-12;
pub const PRIOR_VAR_CAP: f64 = 1e12;

/// Shrinkage weight kappa = 1 / (1 + lambda^2); 1 is total shrinkage.
pub fn kappa_from_lambda(lambda: f64) -> Result<f64> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and nonnegative, got {lambda}"
        )));
    }
    Ok(1.0 / (1.0 + lambda * lambda))
}

/// Posterior mean in the unit-noise normal-means problem: (1 - kappa) * y.
pub fn normal_means_oracle(y: f64, lambda_sq: f64) -> Result<f64> {
    if !y.is_finite() || !lambda_sq.is_finite() || lambda_sq < 0.0 {
        return Err(Error::NonFinite("normal means inputs".into()));
    }
    let kappa = 1.0 / (1.0 + lambda_sq);
    Ok((1.0 - kappa) * y)
}

const KAPPA_BINS: usize = 50;

fn kappa_bin(v: f64) -> Result<usize> {
    if !v.is_finite() || v <= 0.0 || v > 1.0 {
        return Err(Error::InvalidArgument(format!(
            "kappa samples must lie in (0, 1], got {v}"
        )));
    }
    Ok((((v * KAPPA_BINS as f64).ceil() as usize).max(1) - 1).min(KAPPA_BINS - 1))
}

/// MAP estimate of kappa: midpoint of the highest-count bin of a 50-bin
/// histogram over (0,1], ties broken toward the bin nearer 1.
pub fn map_kappa(samples: &[f64]) -> Result<f64> {
    if samples.len() < 100 {
        return Err(Error::InvalidArgument(format!(
            "map_kappa needs at least 100 samples, got {}",
            samples.len()
        )));
    }
    let mut counts = [0u32; KAPPA_BINS];
    for &v in samples {
        counts[kappa_bin(v)?] += 1;
    }
    Ok(map_from_counts(&counts))
}

fn map_from_counts(counts: &[u32; KAPPA_BINS]) -> f64 {
    let mut best = 0usize;
    for (b, &c) in counts.iter().enumerate() {
        if c >= counts[best] {
            best = b;
        }
    }
    (best as f64 + 0.5) / KAPPA_BINS as f64
}

/// Per-coefficient histogram accumulator for kappa draws, with MAP readout.
#[derive(Debug, Clone)]
pub struct ShrinkageProfile {
    counts: Vec<[u32; KAPPA_BINS]>,
    total: usize,
}

impl ShrinkageProfile {
    pub fn new(coef_count: usize) -> Self {
        Self {
            counts: vec![[0; KAPPA_BINS]; coef_count],
            total: 0,
        }
    }

    /// Record one draw of the full kappa tensor (flattened).
    pub fn record(&mut self, kappa: &[f64]) -> Result<()> {
        if kappa.len() != self.counts.len() {
            return Err(Error::Dimension("kappa tensor length".into()));
        }
        for (c, &v) in self.counts.iter_mut().zip(kappa) {
            c[kappa_bin(v)?] += 1;
        }
        self.total += 1;
        Ok(())
    }

    pub fn draw_count(&self) -> usize {
        self.total
    }

    pub fn histogram(&self, coef: usize) -> &[u32; KAPPA_BINS] {
        &self.counts[coef]
    }

    pub fn map_estimates(&self) -> Vec<f64> {
        self.counts.iter().map(map_from_counts).collect()
    }
}

/// Draw X ~ InvGamma(shape, rate b): density x^{-shape-1} exp(-b/x).
fn draw_inv_gamma<R: Rng>(rng: &mut R, shape: f64, b: f64) -> f64 {
    let g = Gamma::new(shape, 1.0 / b)
        .expect("positive gamma parameters")
        .sample(rng);
    1.0 / g.max(1e-300)
}

/// Latent state of the horseshoe prior: local scales lambda_ijk, equation
/// global scales tau_i, and their inverse-gamma auxiliaries.
#[derive(Debug, Clone)]
pub struct HorseshoeState {
    n: usize,
    p: usize,
    /// Local scales lambda (not squared), length n^2 * P.
    pub lambda: Vec<f64>,
    /// Per-equation global scales, length n.
    pub tau: Vec<f64>,
    /// Auxiliary for lambda, length n^2 * P.
    pub nu: Vec<f64>,
    /// Auxiliary for tau, length n.
    pub xi: Vec<f64>,
}

impl HorseshoeState {
    pub fn new(n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            lambda: vec![1.0; n * n * p],
            tau: vec![1.0; n],
            nu: vec![1.0; n * n * p],
            xi: vec![1.0; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: &f64| v.is_finite() && *v > 0.0;
        if self.lambda.iter().all(ok)
            && self.tau.iter().all(ok)
            && self.nu.iter().all(ok)
            && self.xi.iter().all(ok)
        {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "horseshoe state must be strictly positive and finite".into(),
            ))
        }
    }

    /// Prior variances lambda^2 * tau_i^2 in flat coefficient order.
    pub fn prior_variances(&self) -> Vec<f64> {
        let np = self.n * self.p;
        self.lambda
            .iter()
            .enumerate()
            .map(|(idx, &l)| {
                let i = idx / np;
                l * l * self.tau[i] * self.tau[i]
            })
            .collect()
    }

    /// Shrinkage weights 1 / (1 + lambda^2) in flat order.
    pub fn kappa(&self) -> Vec<f64> {
        self.lambda.iter().map(|&l| 1.0 / (1.0 + l * l)).collect()
    }
}

/// Gibbs update of all horseshoe latents given the coefficients.
///
/// Uses the all-conjugate inverse-gamma parameter expansion of the
/// half-Cauchy: lambda^2 | nu ~ IG(1/2, 1/nu), nu ~ IG(1/2, 1).
pub fn sample_horseshoe_scales<R: Rng>(
    theta: &CoefTensor,
    state: &mut HorseshoeState,
    rng: &mut R,
) -> Result<()> {
    if theta.n() != state.n || theta.p() != state.p {
        return Err(Error::Dimension("theta vs horseshoe state".into()));
    }
    if !theta.as_slice().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("theta".into()));
    }
    let np = state.n * state.p;
    // lambda^2 | nu, theta, tau ~ IG(1, 1/nu + theta^2 / (2 tau_i^2))
    for (idx, th) in theta.as_slice().iter().enumerate() {
        let i = idx / np;
        let tau2 = state.tau[i] * state.tau[i];
        let b = 1.0 / state.nu[idx] + th * th / (2.0 * tau2);
        let l2 = draw_inv_gamma(rng, 1.0, b);
        state.lambda[idx] = l2.sqrt();
    }
    // nu | lambda^2 ~ IG(1, 1 + 1/lambda^2)
    for (idx, nu) in state.nu.iter_mut().enumerate() {
        let l2 = state.lambda[idx] * state.lambda[idx];
        *nu = draw_inv_gamma(rng, 1.0, 1.0 + 1.0 / l2.max(1e-300));
    }
    // tau_i^2 | xi, theta, lambda ~ IG((1 + nP)/2, 1/xi + 1/2 sum theta^2/lambda^2)
    for i in 0..state.n {
        let mut ss = 0.0;
        for idx in i * np..(i + 1) * np {
            let l2 = state.lambda[idx] * state.lambda[idx];
            let th = theta.as_slice()[idx];
            ss += th * th / l2.max(1e-300);
        }
        let shape = 0.5 * (1.0 + np as f64);
        let b = 1.0 / state.xi[i] + 0.5 * ss;
        state.tau[i] = draw_inv_gamma(rng, shape, b).sqrt();
    }
    // xi | tau^2 ~ IG(1, 1 + 1/tau^2)
    for i in 0..state.n {
        let t2 = state.tau[i] * state.tau[i];
        state.xi[i] = draw_inv_gamma(rng, 1.0, 1.0 + 1.0 / t2.max(1e-300));
    }
    Ok(())
}

/// Which scalar shrinkage prior a [`ScalarShrinkState`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarScheme {
    StudentT,
    Laplace,
    Ridge,
}

/// Latent prior variances lambda^2 for the Student-t, Laplace and ridge
/// priors. Ridge is frozen at lambda^2 = 9.
#[derive(Debug, Clone)]
pub struct ScalarShrinkState {
    pub scheme: ScalarScheme,
    /// Prior variances, length n^2 * P.
    pub lambda_sq: Vec<f64>,
    /// (a, b) for Student's t.
    pub t_shape: f64,
    pub t_rate: f64,
    /// Exponential rate for Laplace.
    pub laplace_rate: f64,
    /// Fixed variance for ridge.
    pub ridge_var: f64,
}

impl ScalarShrinkState {
    pub fn new(scheme: ScalarScheme, coef_count: usize) -> Self {
        let init = match scheme {
            ScalarScheme::Ridge => 9.0,
            _ => 1.0,
        };
        Self {
            scheme,
            lambda_sq: vec![init; coef_count],
            t_shape: 0.5,
            t_rate: 0.5,
            laplace_rate: 2.0,
            ridge_var: 9.0,
        }
    }

    pub fn kappa(&self) -> Vec<f64> {
        self.lambda_sq.iter().map(|&l2| 1.0 / (1.0 + l2)).collect()
    }
}

/// Conditional update of the scalar-prior variances given the coefficients.
///
/// Student's t: lambda^2 | theta ~ IG(a + 1/2, b + theta^2/2). Laplace:
/// 1/lambda^2 | theta ~ InverseGaussian(sqrt(2r)/|theta|, 2r), the
/// reciprocal form of the generalized-inverse-Gaussian full conditional.
/// Ridge: unchanged.
pub fn sample_scalar_scales<R: Rng>(
    theta: &CoefTensor,
    state: &mut ScalarShrinkState,
    rng: &mut R,
) -> Result<()> {
    if theta.as_slice().len() != state.lambda_sq.len() {
        return Err(Error::Dimension("theta vs scalar state".into()));
    }
    match state.scheme {
        ScalarScheme::Ridge => {}
        ScalarScheme::StudentT => {
            for (l2, th) in state.lambda_sq.iter_mut().zip(theta.as_slice()) {
                *l2 = draw_inv_gamma(rng, state.t_shape + 0.5, state.t_rate + 0.5 * th * th);
            }
        }
        ScalarScheme::Laplace => {
            let r = state.laplace_rate;
            let shape = 2.0 * r;
            for (l2, th) in state.lambda_sq.iter_mut().zip(theta.as_slice()) {
                let abs = th.abs();
                if abs < 1e-6 {
                    // GIG(1/2, 2r, theta^2) degenerates to Gamma(1/2, rate r)
                    *l2 = Gamma::new(0.5, 1.0 / r)
                        .expect("positive gamma parameters")
                        .sample(rng);
                } else {
                    let mean = shape.sqrt() / abs;
                    let inv = InverseGaussian::new(mean, shape)
                        .expect("positive inverse-gaussian parameters")
                        .sample(rng);
                    *l2 = 1.0 / inv.max(1e-300);
                }
            }
        }
    }
    Ok(())
}

/// Full Gaussian conditional of the flattened coefficient vector: mean and
/// the lower Cholesky factor of the precision.
pub struct ThetaPosterior {
    pub mean: DVector<f64>,
    chol_l: DMatrix<f64>,
}

impl ThetaPosterior {
    /// One exact draw: mean + L^{-T} z.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample(StandardNormal));
        let w = self
            .chol_l
            .tr_solve_lower_triangular(&z)
            .expect("cholesky factor has positive diagonal");
        &self.mean + w
    }

    /// Marginal posterior variance of coefficient `idx`.
    pub fn variance(&self, idx: usize) -> f64 {
        let mut e = DVector::zeros(self.mean.len());
        e[idx] = 1.0;
        let half = self
            .chol_l
            .solve_lower_triangular(&e)
            .expect("cholesky factor has positive diagonal");
        let full = self
            .chol_l
            .tr_solve_lower_triangular(&half)
            .expect("cholesky factor has positive diagonal");
        full[idx]
    }
}

/// Precision and right-hand side of the Gaussian full conditional for the
/// complete coefficient vector:
///
/// ```text
/// V^{-1} = sum_t (Omega_t^{-1} kron x_t x_t') + diag(prior var)^{-1}
/// b      = sum_t (I kron x_t) Omega_t^{-1} y_t
/// ```
///
/// assembled blockwise with Omega_t^{-1} = D_t^{-1} Psi^{-1} D_t^{-1}.
pub(crate) fn assemble_gram(
    cache: &DesignCache,
    shape: &VarShape,
    vol: &VolatilityState,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = shape.n;
    let np = shape.regressors();
    let m = cache.rows();
    if vol.t_len() != m || vol.n() != n {
        return Err(Error::Dimension(format!(
            "volatility state is {}x{}, panel gives {}x{}",
            vol.n(),
            vol.t_len(),
            n,
            m
        )));
    }
    let (psi_inv, _) = vol.psi_inverse()?;
    // einv[(t, i)] = exp(-omega_it), guarded against overflow
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
    let dim = n * np;
    let mut gram = DMatrix::zeros(dim, dim);
    let mut scaled = DMatrix::zeros(m, np);
    for i in 0..n {
        for ip in i..n {
            let c = psi_inv[(i, ip)];
            if c == 0.0 {
                continue;
            }
            for t in 0..m {
                let s = einv[(t, i)] * einv[(t, ip)];
                for col in 0..np {
                    scaled[(t, col)] = cache.x[(t, col)] * s;
                }
            }
            let block = cache.x.transpose() * &scaled * c;
            for a in 0..np {
                for bcol in 0..np {
                    gram[(i * np + a, ip * np + bcol)] += block[(a, bcol)];
                    if ip != i {
                        gram[(ip * np + a, i * np + bcol)] += block[(bcol, a)];
                    }
                }
            }
        }
    }
    let mut rhs = DVector::zeros(dim);
    let mut u = DVector::zeros(n);
    for t in 0..m {
        for i in 0..n {
            u[i] = einv[(t, i)] * cache.y[(t, i)];
        }
        let v = &psi_inv * &u;
        for i in 0..n {
            let coef = v[i] * einv[(t, i)];
            if coef == 0.0 {
                continue;
            }
            for col in 0..np {
                rhs[i * np + col] += coef * cache.x[(t, col)];
            }
        }
    }
    Ok((gram, rhs))
}

pub(crate) fn posterior_from_gram(
    mut gram: DMatrix<f64>,
    rhs: &DVector<f64>,
    prior_variances: &[f64],
) -> Result<ThetaPosterior> {
    let dim = gram.nrows();
    if prior_variances.len() != dim {
        return Err(Error::Dimension(format!(
            "{} prior variances for {dim} coefficients",
            prior_variances.len()
        )));
    }
    for (d, &v) in prior_variances.iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "prior variance {v} at index {d}"
            )));
        }
        gram[(d, d)] += 1.0 / v.clamp(PRIOR_VAR_FLOOR, PRIOR_VAR_CAP);
    }
    let chol = gram.cholesky().ok_or_else(|| {
        Error::NotPositiveDefinite(
            "coefficient precision (broken Omega_t or zero prior variance)".into(),
        )
    })?;
    let l = chol.unpack();
    let half = l
        .solve_lower_triangular(rhs)
        .ok_or_else(|| Error::NotPositiveDefinite("precision factor".into()))?;
    let mean = l
        .tr_solve_lower_triangular(&half)
        .ok_or_else(|| Error::NotPositiveDefinite("precision factor".into()))?;
    Ok(ThetaPosterior { mean, chol_l: l })
}

/// Gaussian full conditional of the flattened coefficient vector given prior
/// variances and the volatility state.
pub fn theta_posterior(
    panel: &TimeSeriesPanel,
    shape: &VarShape,
    prior_variances: &[f64],
    vol: &VolatilityState,
) -> Result<ThetaPosterior> {
    let cache = DesignCache::new(panel, shape)?;
    theta_posterior_cached(&cache, shape, prior_variances, vol)
}

pub fn theta_posterior_cached(
    cache: &DesignCache,
    shape: &VarShape,
    prior_variances: &[f64],
    vol: &VolatilityState,
) -> Result<ThetaPosterior> {
    let (gram, rhs) = assemble_gram(cache, shape, vol)?;
    posterior_from_gram(gram, &rhs, prior_variances)
}

/// One exact draw of the full coefficient tensor from its Gaussian full
/// conditional.
pub fn sample_theta<R: Rng>(
    panel: &TimeSeriesPanel,
    shape: &VarShape,
    prior_variances: &[f64],
    vol: &VolatilityState,
    rng: &mut R,
) -> Result<CoefTensor> {
    let post = theta_posterior(panel, shape, prior_variances, vol)?;
    CoefTensor::from_flat(shape.n, shape.p, post.draw(rng).as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Normal;

    #[test]
    fn kappa_values() {
        assert_eq!(kappa_from_lambda(0.0).unwrap(), 1.0);
        assert_eq!(kappa_from_lambda(1.0).unwrap(), 0.5);
        assert!((kappa_from_lambda(3.0).unwrap() - 0.1).abs() < 1e-15);
        assert!(kappa_from_lambda(-1.0).is_err());
        assert!(kappa_from_lambda(f64::NAN).is_err());
    }

    #[test]
    fn normal_means_values() {
        assert_eq!(normal_means_oracle(2.0, 1.0).unwrap(), 1.0);
        assert_eq!(normal_means_oracle(2.0, 0.0).unwrap(), 0.0);
        assert_eq!(normal_means_oracle(5.0, 9.0).unwrap(), 4.5);
        assert!(normal_means_oracle(f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn map_kappa_point_mass() {
        let samples = vec![0.95; 200];
        let map = map_kappa(&samples).unwrap();
        assert!((map - 0.95).abs() <= 0.01);
    }

    #[test]
    fn map_kappa_uniform_smoke() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<f64> = (0..5000)
            .map(|_| (rng.random::<f64>()).max(1e-9))
            .collect();
        let map = map_kappa(&samples).unwrap();
        assert!(map > 0.0 && map <= 1.0);
        // must be one of the bin midpoints
        let scaled = map * 50.0 - 0.5;
        assert!((scaled - scaled.round()).abs() < 1e-9);
    }

    #[test]
    fn map_kappa_beta_half_boundary() {
        // Beta(0.5, 0.5) has modes at the boundary; the MAP should land in
        // the first or last bin.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let beta = rand_distr::Beta::new(0.5, 0.5).unwrap();
        let samples: Vec<f64> = (0..20_000)
            .map(|_| f64::clamp(beta.sample(&mut rng), 1e-12, 1.0))
            .collect();
        let map = map_kappa(&samples).unwrap();
        assert!(map == 0.01 || map == 0.99, "map = {map}");
    }

    #[test]
    fn map_kappa_requires_samples() {
        assert!(map_kappa(&vec![0.5; 99]).is_err());
        assert!(map_kappa(&vec![1.5; 200]).is_err());
    }

    #[test]
    fn ridge_update_is_identity() {
        let theta = CoefTensor::zeros(2, 1);
        let mut state = ScalarShrinkState::new(ScalarScheme::Ridge, 4);
        let before = state.lambda_sq.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        sample_scalar_scales(&theta, &mut state, &mut rng).unwrap();
        assert_eq!(state.lambda_sq, before);
        assert!(state.lambda_sq.iter().all(|&v| v == 9.0));
    }

    #[test]
    fn student_t_zero_theta_moment() {
        // theta = 0, a = b = 1/2: lambda^2 ~ IG(1, 1/2) so E[1/lambda^2] = 2.
        let theta = CoefTensor::zeros(1, 1);
        let mut state = ScalarShrinkState::new(ScalarScheme::StudentT, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sample_scalar_scales(&theta, &mut state, &mut rng).unwrap();
            sum += 1.0 / state.lambda_sq[0];
        }
        let mean = sum / n as f64;
        // 1/lambda^2 ~ Gamma(1, rate 1/2): variance 4, se = 2/sqrt(n)
        let se = 2.0 / (n as f64).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn horseshoe_zero_theta_conditional_moment() {
        // With theta = 0, tau and nu pinned at 1 the lambda^2 conditional is
        // IG(1, 1), so E[1/lambda^2] = 1.
        let theta = CoefTensor::zeros(1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 50_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let mut state = HorseshoeState::new(1, 1);
            sample_horseshoe_scales(&theta, &mut state, &mut rng).unwrap();
            let l2 = state.lambda[0] * state.lambda[0];
            sum += 1.0 / l2;
        }
        let mean = sum / n as f64;
        let se = 1.0 / (n as f64).sqrt(); // Gamma(1,1) variance 1
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn horseshoe_large_theta_inflates_lambda() {
        // |theta| >> tau: sampled lambda should sit far above the prior
        // half-Cauchy, which has median 1 and P(lambda > 3) ~ 0.2.
        let theta = CoefTensor::from_flat(1, 1, vec![10.0]).unwrap();
        let mut state = HorseshoeState::new(1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 20_000;
        let mut above_one = 0;
        let mut above_three = 0;
        for _ in 0..n {
            state.tau[0] = 1.0;
            state.xi[0] = 1.0;
            sample_horseshoe_scales(&theta, &mut state, &mut rng).unwrap();
            if state.lambda[0] > 1.0 {
                above_one += 1;
            }
            if state.lambda[0] > 3.0 {
                above_three += 1;
            }
        }
        assert!(above_one as f64 / n as f64 > 0.6);
        assert!(above_three as f64 / n as f64 > 0.3);
    }

    #[test]
    fn laplace_chain_has_double_exponential_marginal() {
        // Successive-conditional chain: theta ~ N(0, lambda^2) then
        // lambda^2 | theta. Its stationary theta marginal must be
        // Laplace(scale 1/2) for rate 2. KS test on thinned draws.
        let mut state = ScalarShrinkState::new(ScalarScheme::Laplace, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut draws = Vec::with_capacity(20_000);
        let mut theta = CoefTensor::zeros(1, 1);
        for sweep in 0..205_000usize {
            let sd = state.lambda_sq[0].sqrt();
            let th = Normal::new(0.0, sd).unwrap().sample(&mut rng);
            theta.as_mut_slice()[0] = th;
            sample_scalar_scales(&theta, &mut state, &mut rng).unwrap();
            if sweep >= 5000 && sweep % 10 == 0 {
                draws.push(th);
            }
        }
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cdf = |x: f64| {
            // Laplace(0, scale 1/2)
            if x < 0.0 {
                0.5 * (x / 0.5).exp()
            } else {
                1.0 - 0.5 * (-x / 0.5).exp()
            }
        };
        let n = draws.len() as f64;
        let mut ks: f64 = 0.0;
        for (i, &x) in draws.iter().enumerate() {
            let f = cdf(x);
            ks = ks.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
        }
        let crit = 1.6276 / n.sqrt(); // alpha = 0.01
        assert!(ks < crit, "ks {ks} vs crit {crit} (n = {n})");
    }

    fn unit_vol(n: usize, t: usize) -> VolatilityState {
        VolatilityState::new(n, t)
    }

    #[test]
    fn flat_prior_limit_matches_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 2;
        let p = 1;
        let rows = 60;
        let values = DMatrix::from_fn(rows, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let panel = TimeSeriesPanel::synthetic(values);
        let shape = VarShape::new(n, p, rows - p).unwrap();
        let ols = model::fit_ols(&panel, &shape).unwrap();
        let vol = unit_vol(n, rows - p);
        let prior = vec![PRIOR_VAR_CAP; shape.coef_count()];
        let post = theta_posterior(&panel, &shape, &prior, &vol).unwrap();
        for (m, o) in post.mean.iter().zip(ols.as_slice()) {
            assert!((m - o).abs() <= 1e-4 * (1.0 + o.abs()), "{m} vs {o}");
        }
    }

    #[test]
    fn dogmatic_prior_shrinks_draw_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 2;
        let rows = 40;
        let values = DMatrix::from_fn(rows, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let panel = TimeSeriesPanel::synthetic(values);
        let shape = VarShape::new(n, 1, rows - 1).unwrap();
        let vol = unit_vol(n, rows - 1);
        let prior = vec![0.0; shape.coef_count()]; // floored at 1e-12
        let theta = sample_theta(&panel, &shape, &prior, &vol, &mut rng).unwrap();
        assert!(theta.as_slice().iter().all(|v| v.abs() < 1e-4));
    }

    #[test]
    fn conjugate_scalar_regression_closed_form() {
        // n = 1, P = 1, unit noise: posterior precision = sum x^2 + 1/v,
        // mean = sum xy / precision.
        let ys = [0.8, -0.3, 1.2, 0.5, -0.1, 0.9];
        let values = DMatrix::from_fn(ys.len(), 1, |r, _| ys[r]);
        let panel = TimeSeriesPanel::synthetic(values);
        let shape = VarShape::new(1, 1, ys.len() - 1).unwrap();
        let vol = unit_vol(1, ys.len() - 1);
        let v = 0.7;
        let post = theta_posterior(&panel, &shape, &[v], &vol).unwrap();
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for t in 1..ys.len() {
            sxx += ys[t - 1] * ys[t - 1];
            sxy += ys[t - 1] * ys[t];
        }
        let precision = sxx + 1.0 / v;
        let mean = sxy / precision;
        assert!((post.mean[0] - mean).abs() < 1e-10);
        assert!((post.variance(0) - 1.0 / precision).abs() < 1e-10);
    }

    #[test]
    fn sample_theta_is_seed_reproducible() {
        let mut rng1 = ChaCha8Rng::seed_from_u64(12);
        let mut rng2 = ChaCha8Rng::seed_from_u64(12);
        let values = DMatrix::from_fn(30, 2, |r, c| ((r * 2 + c) as f64 * 0.7).sin());
        let panel = TimeSeriesPanel::synthetic(values);
        let shape = VarShape::new(2, 1, 29).unwrap();
        let vol = unit_vol(2, 29);
        let prior = vec![1.0; shape.coef_count()];
        let a = sample_theta(&panel, &shape, &prior, &vol, &mut rng1).unwrap();
        let b = sample_theta(&panel, &shape, &prior, &vol, &mut rng2).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    proptest! {
        #[test]
        fn kappa_monotone_decreasing(a in 0.0f64..50.0, b in 0.0f64..50.0) {
            prop_assume!(a != b);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(kappa_from_lambda(lo).unwrap() > kappa_from_lambda(hi).unwrap());
        }
    }
}
