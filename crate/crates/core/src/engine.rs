//! The full particle-Gibbs sampler: per-iteration sweep over coefficients,
//! prior latents, volatility paths, correlation matrix, and innovation
//! scales for any of the five prior schemes, with burn-in adaptation of the
//! Metropolis step scales, draw persistence, and posterior summaries.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesPanel;
use crate::error::{Error, Result};
use crate::mixture::{self, DiscreteMixtureState};
use crate::model::{self, CoefTensor, DesignCache, VarShape};
use crate::shrinkage::{
    self, HorseshoeState, ScalarScheme, ScalarShrinkState, ShrinkageProfile,
};
use crate::store::{ChainStore, ChainStoreWriter, FieldSpec, StoreManifest};
use crate::sv::{self, VolatilityState};

/// Coefficient prior scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    Horseshoe,
    DiscreteMixture,
    StudentT,
    Laplace,
    Ridge,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Horseshoe,
        Scheme::DiscreteMixture,
        Scheme::StudentT,
        Scheme::Laplace,
        Scheme::Ridge,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Horseshoe => "hs",
            Scheme::DiscreteMixture => "dm",
            Scheme::StudentT => "t",
            Scheme::Laplace => "lap",
            Scheme::Ridge => "ridge",
        }
    }

    pub fn is_mixture(&self) -> bool {
        matches!(self, Scheme::DiscreteMixture)
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hs" | "horseshoe" => Ok(Scheme::Horseshoe),
            "dm" | "mixture" => Ok(Scheme::DiscreteMixture),
            "t" | "student" | "student_t" => Ok(Scheme::StudentT),
            "lap" | "laplace" => Ok(Scheme::Laplace),
            "ridge" => Ok(Scheme::Ridge),
            other => Err(Error::InvalidArgument(format!(
                "unknown scheme `{other}` (expected hs|dm|t|lap|ridge)"
            ))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Initial values carried over from a previous chain (rolling-origin warm
/// starts): posterior means for theta, omega, and tau_omega, medians for the
/// heavy-tailed horseshoe scales, and the last Psi draw.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub theta: Vec<f64>,
    /// n x T_prev mean path; extended by repeating the last column when the
    /// new sample is longer.
    pub omega: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub tau_omega: Vec<f64>,
    pub lambda_median: Option<Vec<f64>>,
    pub tau_median: Option<Vec<f64>>,
    pub delta: Option<Vec<u8>>,
    pub pi: Option<Vec<f64>>,
}

/// Full sampler configuration.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub scheme: Scheme,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub particles: usize,
    pub seed: u64,
    /// RNG stream for concurrent chains under one seed.
    pub stream: u64,
    pub adapt_window: usize,
    /// LKJ shape for Psi.
    pub lkj_m: f64,
    /// Initial-state prior for the log-volatilities.
    pub init_mean: f64,
    pub init_sd: f64,
    /// Diagnostic mode: pin Omega_t = I and skip all volatility updates.
    pub fix_unit_variance: bool,
    /// Optional upper truncation of the half-Cauchy tau_omega prior.
    pub tau_upper: Option<f64>,
    pub warm_start: Option<WarmStart>,
}

impl SamplerConfig {
    /// Empirical-run defaults: 30,000 iterations, 5,000 burn-in, thin 25.
    pub fn new(scheme: Scheme) -> Self {
        Self {
            scheme,
            iterations: 30_000,
            burn_in: 5_000,
            thin: 25,
            particles: 100,
            seed: 0,
            stream: 0,
            adapt_window: 50,
            lkj_m: 1.0,
            init_mean: 0.0,
            init_sd: 1.0,
            fix_unit_variance: false,
            tau_upper: None,
            warm_start: None,
        }
    }

    /// Simulation-study defaults: 15,000 iterations, 5,000 burn-in, thin 1.
    pub fn simulation(scheme: Scheme) -> Self {
        Self {
            iterations: 15_000,
            burn_in: 5_000,
            thin: 1,
            ..Self::new(scheme)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidArgument(format!(
                "burn_in {} must be below iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidArgument("thin must be >= 1".into()));
        }
        if !self.fix_unit_variance && self.particles < 2 {
            return Err(Error::InvalidArgument(
                "particle Gibbs needs at least 2 particles".into(),
            ));
        }
        Ok(())
    }

    /// Retained frame count.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Scheme-specific latent prior state.
#[derive(Debug, Clone)]
pub enum PriorLatents {
    Horseshoe(HorseshoeState),
    Scalar(ScalarShrinkState),
    Mixture(DiscreteMixtureState),
}

/// Receives retained frames; the layout is [`frame_fields`].
pub trait DrawSink {
    fn record(&mut self, frame: &[f64]) -> Result<()>;
}

/// Frame layout for a scheme: concatenated little-endian f64 fields.
pub fn frame_fields(scheme: Scheme, shape: &VarShape) -> Vec<FieldSpec> {
    let c = shape.coef_count();
    let n = shape.n;
    let nt = shape.n * shape.t;
    let f = |name: &str, len: usize| FieldSpec {
        name: name.into(),
        len,
    };
    let mut fields = vec![f("theta", c)];
    match scheme {
        Scheme::Horseshoe => {
            fields.push(f("kappa", c));
            fields.push(f("tau", n));
        }
        Scheme::DiscreteMixture => {
            fields.push(f("delta", c));
            fields.push(f("beta", c));
            fields.push(f("pi", n));
        }
        _ => fields.push(f("kappa", c)),
    }
    fields.push(f("omega", nt));
    fields.push(f("psi", n * n));
    fields.push(f("tau_omega", n));
    fields
}

/// Acceptance-rate accounting from a finished run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunStats {
    pub iterations: usize,
    pub retained: usize,
    pub psi_acceptance: f64,
    pub tau_acceptance: f64,
    pub psi_step: f64,
    pub tau_steps: Vec<f64>,
}

/// One MCMC chain with explicit state, advanced a sweep at a time.
pub struct Chain {
    pub shape: VarShape,
    pub config: SamplerConfig,
    pub theta: CoefTensor,
    pub prior: PriorLatents,
    pub vol: VolatilityState,
    cache: DesignCache,
    rng: ChaCha8Rng,
    iter: usize,
    psi_step: f64,
    tau_steps: Vec<f64>,
    psi_accepts: usize,
    psi_window: usize,
    tau_accepts: Vec<usize>,
    tau_window: usize,
    psi_accepts_total: usize,
    psi_total: usize,
    tau_accepts_total: usize,
    tau_total: usize,
}

impl Chain {
    /// Initialize a chain: theta from OLS (zeros on singular designs),
    /// delta = 1, omega iid N(0,1), Psi = I, tau_omega = 0.1, unit scales.
    pub fn new(panel: &TimeSeriesPanel, shape: &VarShape, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        if panel.len() != shape.t + shape.p {
            return Err(Error::Dimension(format!(
                "panel length {} vs shape T + P = {}",
                panel.len(),
                shape.t + shape.p
            )));
        }
        if panel.n_series() != shape.n {
            return Err(Error::Dimension("panel width vs shape".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(config.stream);

        let cache = DesignCache::new(panel, shape)?;
        let ols = match model::fit_ols(panel, shape) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("OLS initialization failed ({e}); starting from zeros");
                CoefTensor::zeros(shape.n, shape.p)
            }
        };

        let mut vol = VolatilityState::new(shape.n, shape.t);
        vol.init_mean = config.init_mean;
        vol.init_sd = config.init_sd;
        if config.fix_unit_variance {
            // omega stays exactly zero: Omega_t = I throughout.
        } else {
            for v in vol.omega.iter_mut() {
                *v = rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal);
            }
        }

        let prior = match config.scheme {
            Scheme::Horseshoe => PriorLatents::Horseshoe(HorseshoeState::new(shape.n, shape.p)),
            Scheme::StudentT => PriorLatents::Scalar(ScalarShrinkState::new(
                ScalarScheme::StudentT,
                shape.coef_count(),
            )),
            Scheme::Laplace => PriorLatents::Scalar(ScalarShrinkState::new(
                ScalarScheme::Laplace,
                shape.coef_count(),
            )),
            Scheme::Ridge => PriorLatents::Scalar(ScalarShrinkState::new(
                ScalarScheme::Ridge,
                shape.coef_count(),
            )),
            Scheme::DiscreteMixture => {
                let mut dm = DiscreteMixtureState::new(shape.n, shape.p);
                dm.beta.copy_from_slice(ols.as_slice());
                PriorLatents::Mixture(dm)
            }
        };

        let mut chain = Self {
            shape: *shape,
            config,
            theta: ols,
            prior,
            vol,
            cache,
            rng,
            iter: 0,
            psi_step: 0.2,
            tau_steps: vec![0.5; shape.n],
            psi_accepts: 0,
            psi_window: 0,
            tau_accepts: vec![0; shape.n],
            tau_window: 0,
            psi_accepts_total: 0,
            psi_total: 0,
            tau_accepts_total: 0,
            tau_total: 0,
        };
        chain.apply_warm_start()?;
        Ok(chain)
    }

    fn apply_warm_start(&mut self) -> Result<()> {
        let Some(ws) = self.config.warm_start.clone() else {
            return Ok(());
        };
        let c = self.shape.coef_count();
        if ws.theta.len() != c {
            return Err(Error::Dimension("warm-start theta length".into()));
        }
        self.theta = CoefTensor::from_flat(self.shape.n, self.shape.p, ws.theta.clone())?;
        // Extend the previous mean path to the new length by repeating the
        // final column.
        let t_new = self.shape.t;
        let t_prev = ws.omega.ncols();
        for i in 0..self.shape.n {
            for t in 0..t_new {
                let src = t.min(t_prev - 1);
                self.vol.omega[(i, t)] = ws.omega[(i, src)];
            }
        }
        self.vol.psi = ws.psi.clone();
        for (dst, &src) in self.vol.tau_omega.iter_mut().zip(&ws.tau_omega) {
            *dst = src.max(1e-6);
        }
        match (&mut self.prior, &ws) {
            (PriorLatents::Horseshoe(hs), ws) => {
                if let Some(l) = &ws.lambda_median {
                    hs.lambda.copy_from_slice(l);
                }
                if let Some(t) = &ws.tau_median {
                    hs.tau.copy_from_slice(t);
                }
                hs.validate()?;
            }
            (PriorLatents::Mixture(dm), ws) => {
                dm.beta.copy_from_slice(&ws.theta);
                if let Some(d) = &ws.delta {
                    dm.delta.copy_from_slice(d);
                    // included slab values must carry the warm coefficients;
                    // excluded ones keep the previous magnitude as a seed
                    for (idx, &del) in d.iter().enumerate() {
                        if del == 1 && ws.theta[idx] != 0.0 {
                            dm.beta[idx] = ws.theta[idx];
                        }
                    }
                }
                if let Some(p) = &ws.pi {
                    dm.pi.copy_from_slice(p);
                    for v in dm.pi.iter_mut() {
                        *v = v.clamp(1e-6, 1.0 - 1e-6);
                    }
                }
            }
            _ => {}
        }
        self.vol.validate()?;
        Ok(())
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    /// Effective coefficient tensor (delta * beta for the mixture scheme).
    pub fn effective_theta(&self) -> CoefTensor {
        match &self.prior {
            PriorLatents::Mixture(dm) => mixture::effective_theta(dm),
            _ => self.theta.clone(),
        }
    }

    /// Replace the panel (the successive-conditional validation path needs
    /// to refresh data between sweeps).
    pub fn set_panel(&mut self, panel: &TimeSeriesPanel) -> Result<()> {
        if panel.len() != self.shape.t + self.shape.p || panel.n_series() != self.shape.n {
            return Err(Error::Dimension("replacement panel shape".into()));
        }
        self.cache = DesignCache::new(panel, &self.shape)?;
        Ok(())
    }

    fn abort(iteration: usize, component: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| Error::SamplerAbort {
            iteration,
            component,
            source: Box::new(e),
        }
    }

    /// One full Gibbs sweep: coefficients and prior latents, then the
    /// volatility block (PGBS paths, Psi, tau_omega). Metropolis step scales
    /// adapt during burn-in only.
    pub fn sweep(&mut self) -> Result<()> {
        let iter = self.iter;
        let shape = self.shape;
        match &mut self.prior {
            PriorLatents::Horseshoe(hs) => {
                let pv = hs.prior_variances();
                let post =
                    shrinkage::theta_posterior_cached(&self.cache, &shape, &pv, &self.vol)
                        .map_err(Self::abort(iter, "sample_theta"))?;
                let draw = post.draw(&mut self.rng);
                self.theta = CoefTensor::from_flat(shape.n, shape.p, draw.as_slice().to_vec())?;
                shrinkage::sample_horseshoe_scales(&self.theta, hs, &mut self.rng)
                    .map_err(Self::abort(iter, "horseshoe_scales"))?;
            }
            PriorLatents::Scalar(sc) => {
                let post = shrinkage::theta_posterior_cached(
                    &self.cache,
                    &shape,
                    &sc.lambda_sq,
                    &self.vol,
                )
                .map_err(Self::abort(iter, "sample_theta"))?;
                let draw = post.draw(&mut self.rng);
                self.theta = CoefTensor::from_flat(shape.n, shape.p, draw.as_slice().to_vec())?;
                shrinkage::sample_scalar_scales(&self.theta, sc, &mut self.rng)
                    .map_err(Self::abort(iter, "scalar_scales"))?;
            }
            PriorLatents::Mixture(dm) => {
                let effective = mixture::effective_theta(dm);
                let mut resid = model::residual_matrix(&self.cache, &effective);
                mixture::sample_delta(&self.cache, &shape, dm, &self.vol, &mut resid, &mut self.rng)
                    .map_err(Self::abort(iter, "sample_delta"))?;
                mixture::sample_beta(&self.cache, &shape, dm, &self.vol, &mut self.rng)
                    .map_err(Self::abort(iter, "sample_beta"))?;
                mixture::sample_pi(dm, &mut self.rng).map_err(Self::abort(iter, "sample_pi"))?;
                self.theta = mixture::effective_theta(dm);
            }
        }

        if !self.config.fix_unit_variance {
            let resid = model::residual_matrix(&self.cache, &self.theta);
            let slices = model::residual_slices(&resid, shape.p);
            sv::pgbs_update(&slices, &mut self.vol, self.config.particles, &mut self.rng)
                .map_err(Self::abort(iter, "pgbs_update"))?;
            let psi_acc = sv::sample_psi(
                &slices,
                &mut self.vol,
                self.config.lkj_m,
                self.psi_step,
                &mut self.rng,
            )
            .map_err(Self::abort(iter, "sample_psi"))?;
            let tau_acc = sv::sample_tau_omega(
                &mut self.vol,
                &self.tau_steps,
                self.config.tau_upper,
                &mut self.rng,
            )
            .map_err(Self::abort(iter, "sample_tau_omega"))?;

            self.psi_window += 1;
            self.tau_window += 1;
            self.psi_total += 1;
            self.tau_total += shape.n;
            if psi_acc {
                self.psi_accepts += 1;
                self.psi_accepts_total += 1;
            }
            for (i, &a) in tau_acc.iter().enumerate() {
                if a {
                    self.tau_accepts[i] += 1;
                    self.tau_accepts_total += 1;
                }
            }
            // Adapt scales strictly inside burn-in, frozen afterwards.
            if self.iter < self.config.burn_in
                && self.psi_window >= self.config.adapt_window
            {
                let rate = self.psi_accepts as f64 / self.psi_window as f64;
                self.psi_step = (self.psi_step * (1.5 * (rate - 0.3)).exp()).clamp(1e-3, 5.0);
                self.psi_accepts = 0;
                self.psi_window = 0;
                for i in 0..shape.n {
                    let r = self.tau_accepts[i] as f64 / self.tau_window as f64;
                    self.tau_steps[i] = (self.tau_steps[i] * (1.5 * (r - 0.3)).exp())
                        .clamp(1e-3, 5.0);
                    self.tau_accepts[i] = 0;
                }
                self.tau_window = 0;
            }
        }

        self.iter += 1;
        Ok(())
    }

    /// Assemble the retained-frame vector for the current state.
    pub fn frame(&self) -> Vec<f64> {
        let shape = &self.shape;
        let mut out = Vec::with_capacity(
            frame_fields(self.config.scheme, shape)
                .iter()
                .map(|f| f.len)
                .sum(),
        );
        out.extend_from_slice(self.effective_theta().as_slice());
        match &self.prior {
            PriorLatents::Horseshoe(hs) => {
                out.extend(hs.kappa());
                out.extend_from_slice(&hs.tau);
            }
            PriorLatents::Scalar(sc) => out.extend(sc.kappa()),
            PriorLatents::Mixture(dm) => {
                out.extend(dm.delta.iter().map(|&d| d as f64));
                out.extend_from_slice(&dm.beta);
                out.extend_from_slice(&dm.pi);
            }
        }
        for i in 0..shape.n {
            for t in 0..shape.t {
                out.push(self.vol.omega[(i, t)]);
            }
        }
        for i in 0..shape.n {
            for j in 0..shape.n {
                out.push(self.vol.psi[(i, j)]);
            }
        }
        out.extend(self.vol.tau_omega.iter());
        out
    }

    pub fn stats(&self) -> RunStats {
        RunStats {
            iterations: self.iter,
            retained: 0,
            psi_acceptance: if self.psi_total > 0 {
                self.psi_accepts_total as f64 / self.psi_total as f64
            } else {
                0.0
            },
            tau_acceptance: if self.tau_total > 0 {
                self.tau_accepts_total as f64 / self.tau_total as f64
            } else {
                0.0
            },
            psi_step: self.psi_step,
            tau_steps: self.tau_steps.clone(),
        }
    }
}

/// Run a full chain, pushing retained frames into `sink`.
pub fn run_chain_with(
    panel: &TimeSeriesPanel,
    shape: &VarShape,
    config: &SamplerConfig,
    sink: &mut dyn DrawSink,
) -> Result<RunStats> {
    let mut chain = Chain::new(panel, shape, config.clone())?;
    let mut retained = 0usize;
    for iter in 0..config.iterations {
        chain.sweep()?;
        if iter >= config.burn_in && (iter - config.burn_in) % config.thin == 0 {
            sink.record(&chain.frame())?;
            retained += 1;
        }
    }
    let mut stats = chain.stats();
    stats.retained = retained;
    Ok(stats)
}

struct StoreSink<'a>(&'a mut ChainStoreWriter);

impl DrawSink for StoreSink<'_> {
    fn record(&mut self, frame: &[f64]) -> Result<()> {
        self.0.append(frame)
    }
}

/// Run a chain and persist the retained draws under `out_dir`. On failure
/// the partial store is flushed with `complete: false` and the error
/// propagates.
pub fn run_chain(
    panel: &TimeSeriesPanel,
    shape: &VarShape,
    config: &SamplerConfig,
    out_dir: &Path,
) -> Result<ChainStore> {
    config.validate()?;
    let manifest = StoreManifest {
        format: String::new(),
        version: 0,
        scheme: config.scheme.as_str().to_string(),
        n: shape.n,
        p: shape.p,
        t_obs: shape.t,
        iterations: config.iterations,
        burn_in: config.burn_in,
        thin: config.thin,
        particles: config.particles,
        seed: config.seed,
        stream: config.stream,
        fields: frame_fields(config.scheme, shape),
        frame_len: 0,
        frames: 0,
        sha256: String::new(),
        complete: false,
        error: None,
    };
    let mut writer = ChainStoreWriter::create(out_dir, manifest)?;
    let mut sink = StoreSink(&mut writer);
    match run_chain_with(panel, shape, config, &mut sink) {
        Ok(_) => writer.finalize(),
        Err(e) => {
            let _ = writer.abort(&e.to_string())?;
            Err(e)
        }
    }
}

/// Posterior summaries of a stored chain.
#[derive(Debug, Clone, Serialize)]
pub struct ChainSummary {
    pub scheme: String,
    pub n: usize,
    pub p: usize,
    pub t_obs: usize,
    pub frames: usize,
    pub theta_mean: Vec<f64>,
    pub theta_q05: Vec<f64>,
    pub theta_q50: Vec<f64>,
    pub theta_q95: Vec<f64>,
    /// MAP shrinkage weight per coefficient (shrinkage schemes).
    pub kappa_map: Option<Vec<f64>>,
    /// 50-bin kappa histogram per coefficient (shrinkage schemes).
    pub kappa_hist: Option<Vec<Vec<u32>>>,
    /// Posterior inclusion probability per coefficient (mixture scheme).
    pub inclusion: Option<Vec<f64>>,
    /// 1 - inclusion, reported alongside.
    pub exclusion: Option<Vec<f64>>,
    /// 5/50/95% quantiles of each omega_it, flattened i-major.
    pub omega_q05: Vec<f64>,
    pub omega_q50: Vec<f64>,
    pub omega_q95: Vec<f64>,
    pub psi_mean: Vec<f64>,
    pub tau_omega_mean: Vec<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

fn column_quantiles(
    store: &ChainStore,
    field: &str,
    len: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let frames = store.manifest.frames;
    let mut mean = vec![0.0; len];
    let mut q05 = vec![0.0; len];
    let mut q50 = vec![0.0; len];
    let mut q95 = vec![0.0; len];
    // Cap resident memory around 4M doubles per block.
    let block = (4_000_000 / frames.max(1)).max(1);
    let mut start = 0;
    while start < len {
        let end = (start + block).min(len);
        let cols = store.column_block(field, start..end)?;
        for (k, col) in cols.into_iter().enumerate() {
            let mut sorted = col;
            let m: f64 = sorted.iter().sum::<f64>() / sorted.len() as f64;
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            mean[start + k] = m;
            q05[start + k] = quantile(&sorted, 0.05);
            q50[start + k] = quantile(&sorted, 0.50);
            q95[start + k] = quantile(&sorted, 0.95);
        }
        start = end;
    }
    Ok((mean, q05, q50, q95))
}

/// Summarize a stored chain: posterior moments and quantiles of the
/// coefficients, MAP kappa or inclusion probabilities, volatility-path
/// quantiles, and the posterior mean of Psi. Requires at least 100 frames.
pub fn summarize(store: &ChainStore) -> Result<ChainSummary> {
    let m = &store.manifest;
    if m.frames < 100 {
        return Err(Error::InvalidArgument(format!(
            "summaries need at least 100 frames, store holds {}",
            m.frames
        )));
    }
    let c = m.n * m.n * m.p;
    let (theta_mean, theta_q05, theta_q50, theta_q95) = column_quantiles(store, "theta", c)?;
    let nt = m.n * m.t_obs;
    let (_, omega_q05, omega_q50, omega_q95) = column_quantiles(store, "omega", nt)?;

    let mut psi_mean = vec![0.0; m.n * m.n];
    let mut tau_omega_mean = vec![0.0; m.n];
    {
        let psi_range = m.field_range("psi")?;
        let tau_range = m.field_range("tau_omega")?;
        store.for_each_frame(|_, frame| {
            for (a, &v) in psi_mean.iter_mut().zip(&frame[psi_range.clone()]) {
                *a += v;
            }
            for (a, &v) in tau_omega_mean.iter_mut().zip(&frame[tau_range.clone()]) {
                *a += v;
            }
        })?;
        let inv = 1.0 / m.frames as f64;
        psi_mean.iter_mut().for_each(|v| *v *= inv);
        tau_omega_mean.iter_mut().for_each(|v| *v *= inv);
    }

    let (kappa_map, kappa_hist, inclusion, exclusion) = if m.has_field("kappa") {
        let mut profile = ShrinkageProfile::new(c);
        let range = m.field_range("kappa")?;
        let mut record_err = None;
        store.for_each_frame(|_, frame| {
            if record_err.is_none() {
                if let Err(e) = profile.record(&frame[range.clone()]) {
                    record_err = Some(e);
                }
            }
        })?;
        if let Some(e) = record_err {
            return Err(e);
        }
        let hist: Vec<Vec<u32>> = (0..c).map(|i| profile.histogram(i).to_vec()).collect();
        (Some(profile.map_estimates()), Some(hist), None, None)
    } else {
        let range = m.field_range("delta")?;
        let mut acc = vec![0.0; c];
        store.for_each_frame(|_, frame| {
            for (a, &v) in acc.iter_mut().zip(&frame[range.clone()]) {
                *a += v;
            }
        })?;
        let inv = 1.0 / m.frames as f64;
        let inclusion: Vec<f64> = acc.iter().map(|v| v * inv).collect();
        let exclusion: Vec<f64> = inclusion.iter().map(|v| 1.0 - v).collect();
        (None, None, Some(inclusion), Some(exclusion))
    };

    Ok(ChainSummary {
        scheme: m.scheme.clone(),
        n: m.n,
        p: m.p,
        t_obs: m.t_obs,
        frames: m.frames,
        theta_mean,
        theta_q05,
        theta_q50,
        theta_q95,
        kappa_map,
        kappa_hist,
        inclusion,
        exclusion,
        omega_q05,
        omega_q50,
        omega_q95,
        psi_mean,
        tau_omega_mean,
    })
}

/// Write a summary as JSON plus plot-ready CSVs: coefficient table, omega
/// path quantiles, Psi mean, and the per-equation shrinkage-profile or
/// inclusion tables.
pub fn write_summary(
    summary: &ChainSummary,
    series_ids: Option<&[String]>,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(summary)?,
    )?;
    let n = summary.n;
    let p = summary.p;
    let ids: Vec<String> = match series_ids {
        Some(ids) if ids.len() == n => ids.to_vec(),
        _ => (0..n).map(|j| format!("ser_{}", j + 1)).collect(),
    };

    let mut theta_csv = String::from("equation,predictor,lag,mean,q05,q50,q95");
    let extra = if summary.kappa_map.is_some() {
        theta_csv.push_str(",map_kappa");
        true
    } else {
        theta_csv.push_str(",inclusion");
        false
    };
    theta_csv.push('\n');
    for i in 0..n {
        for j in 0..n {
            for k in 0..p {
                let idx = (i * n + j) * p + k;
                theta_csv.push_str(&format!(
                    "{},{},{},{},{},{},{}",
                    ids[i],
                    ids[j],
                    k + 1,
                    summary.theta_mean[idx],
                    summary.theta_q05[idx],
                    summary.theta_q50[idx],
                    summary.theta_q95[idx],
                ));
                let v = if extra {
                    summary.kappa_map.as_ref().unwrap()[idx]
                } else {
                    summary.inclusion.as_ref().unwrap()[idx]
                };
                theta_csv.push_str(&format!(",{v}\n"));
            }
        }
    }
    std::fs::write(dir.join("theta_summary.csv"), theta_csv)?;

    let mut omega_csv = String::from("series,t,q05,q50,q95\n");
    for i in 0..n {
        for t in 0..summary.t_obs {
            let idx = i * summary.t_obs + t;
            omega_csv.push_str(&format!(
                "{},{},{},{},{}\n",
                ids[i], t, summary.omega_q05[idx], summary.omega_q50[idx], summary.omega_q95[idx]
            ));
        }
    }
    std::fs::write(dir.join("omega_quantiles.csv"), omega_csv)?;

    let mut psi_csv = String::new();
    psi_csv.push_str("series");
    for id in &ids {
        psi_csv.push(',');
        psi_csv.push_str(id);
    }
    psi_csv.push('\n');
    for i in 0..n {
        psi_csv.push_str(&ids[i]);
        for j in 0..n {
            psi_csv.push_str(&format!(",{}", summary.psi_mean[i * n + j]));
        }
        psi_csv.push('\n');
    }
    std::fs::write(dir.join("psi_mean.csv"), psi_csv)?;

    if let (Some(map), Some(hist)) = (&summary.kappa_map, &summary.kappa_hist) {
        for i in 0..n {
            let mut csv = String::from("predictor,lag,map_kappa");
            for b in 0..50 {
                csv.push_str(&format!(",bin_{:02}", b + 1));
            }
            csv.push('\n');
            for j in 0..n {
                for k in 0..p {
                    let idx = (i * n + j) * p + k;
                    csv.push_str(&format!("{},{},{}", ids[j], k + 1, map[idx]));
                    for b in 0..50 {
                        csv.push_str(&format!(",{}", hist[idx][b]));
                    }
                    csv.push('\n');
                }
            }
            std::fs::write(dir.join(format!("shrinkage_profile_eq{}.csv", i + 1)), csv)?;
        }
    }
    if let (Some(incl), Some(excl)) = (&summary.inclusion, &summary.exclusion) {
        for (name, table) in [("inclusion", incl), ("exclusion", excl)] {
            for i in 0..n {
                let mut csv = String::from("lag");
                for id in &ids {
                    csv.push(',');
                    csv.push_str(id);
                }
                csv.push('\n');
                for k in 0..p {
                    csv.push_str(&format!("{}", k + 1));
                    for j in 0..n {
                        let idx = (i * n + j) * p + k;
                        csv.push_str(&format!(",{}", table[idx]));
                    }
                    csv.push('\n');
                }
                std::fs::write(dir.join(format!("{}_eq{}.csv", name, i + 1)), csv)?;
            }
        }
    }
    Ok(())
}
