//! Three-step MCMC for the semi-parametric accelerated failure time model.
//!
//! The model: complete log time = sum-of-trees mean + residual, with the
//! residual distribution under a median-zero Pólya-tree prior centered at
//! N(0, sigma^2). Each iteration runs
//!
//! 1. a Metropolis-Hastings update of the mean function, proposed by one
//!    plain Gaussian-model Gibbs sweep of the tree ensemble and accepted by
//!    the ratio of Pólya-tree correction factors (the Gaussian likelihood
//!    and the tree prior cancel between target and proposal);
//! 2. a Metropolis-Hastings update of sigma^2, proposed from the conjugate
//!    inverse-gamma conditional of the Gaussian working model and accepted
//!    by the correction-factor ratio across the two induced partitions;
//! 3. imputation of each censored residual from its Pólya-tree predictive
//!    truncated to the region above the censoring bound.
//!
//! Retained draws cache per-patient counterfactual means for both arms plus
//! the residual snapshot, which is all the decision layer needs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bart::{gibbs_sweep, Design, ForestFit, ForestHyper, ForestState};
use crate::data::{CompleteData, DrawMeta, PosteriorDraw, PosteriorDraws, TrialDataset};
use crate::polya::{correction_factor, PolyaTreeCounts, PolyaTreeSpec, PtPredictive};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("iterations ({iterations}) must exceed burn-in ({burn_in})")]
    BadRunLength { iterations: usize, burn_in: usize },
    #[error("thinning interval must be at least 1")]
    BadThin,
    #[error("no draws retained; lengthen the run or reduce thinning")]
    NoDraws,
}

/// Run-length, prior, and engine settings for one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Scaled-inverse-gamma shape for sigma^2.
    pub sigma2_shape: f64,
    /// Scaled-inverse-gamma scale; when absent it is set so the prior mode
    /// equals the residual variance of a log-time-on-arm regression.
    pub sigma2_scale: Option<f64>,
    /// Pólya-tree truncation depth M.
    pub pt_depth: usize,
    /// Pólya-tree precision constant c in alpha_m = c m^2.
    pub pt_c: f64,
    pub forest: ForestHyper,
    /// Also checkpoint full forest snapshots per retained draw.
    pub keep_forests: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            burn_in: 2500,
            thin: 5,
            seed: 0,
            sigma2_shape: 3.0,
            sigma2_scale: None,
            pt_depth: 3,
            pt_c: 5.0,
            forest: ForestHyper::default(),
            keep_forests: false,
        }
    }
}

impl SamplerConfig {
    fn validate(&self) -> Result<(), SamplerError> {
        if self.iterations <= self.burn_in {
            return Err(SamplerError::BadRunLength {
                iterations: self.iterations,
                burn_in: self.burn_in,
            });
        }
        if self.thin == 0 {
            return Err(SamplerError::BadThin);
        }
        Ok(())
    }
}

/// Acceptance-rate and variance-trace diagnostics for one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub accept_mu: f64,
    pub accept_sigma: f64,
    pub n_iterations: usize,
    pub sigma2_mean: f64,
    pub sigma2_sd: f64,
}

/// Full mutable state of one chain; public so tests and diagnostics can
/// drive individual steps.
pub struct AftChain<'a> {
    data: &'a TrialDataset,
    design: Design,
    pub forest: ForestState,
    fit: ForestFit,
    pub sigma2: f64,
    pub complete: CompleteData,
    pub spec: PolyaTreeSpec,
    pub counts: PolyaTreeCounts,
    residuals: Vec<f64>,
    corr: f64,
    sigma2_shape: f64,
    sigma2_scale: f64,
    rng: ChaCha8Rng,
    accepted_mu: usize,
    accepted_sigma: usize,
}

impl<'a> AftChain<'a> {
    pub fn new(data: &'a TrialDataset, config: &SamplerConfig) -> Self {
        let n = data.n();
        let design = Design::from_dataset(data);

        // Overdispersion-safe start: censored times pushed half a response
        // standard deviation past their censoring bound.
        let mean_y = data.y_obs_log.iter().sum::<f64>() / n as f64;
        let var_y = data
            .y_obs_log
            .iter()
            .map(|&v| (v - mean_y) * (v - mean_y))
            .sum::<f64>()
            / (n as f64 - 1.0).max(1.0);
        let kappa0 = var_y.sqrt() / 2.0;
        let mut y_log = data.y_obs_log.clone();
        let mut kappa = vec![0.0; n];
        for i in data.censored_indices() {
            kappa[i] = kappa0;
            y_log[i] += kappa0;
        }
        let complete = CompleteData { y_log, kappa };

        let forest = ForestState::new_regression(config.forest.clone(), &complete.y_log);
        let fit = ForestFit::new(&forest, &design);
        let residuals: Vec<f64> = (0..n)
            .map(|i| complete.y_log[i] - fit.eta(i, &forest.transform))
            .collect();
        let rbar = residuals.iter().sum::<f64>() / n as f64;
        let sigma2 = (residuals
            .iter()
            .map(|&u| (u - rbar) * (u - rbar))
            .sum::<f64>()
            / (n as f64 - 1.0).max(1.0))
        .max(1e-8);

        let sigma2_scale = config
            .sigma2_scale
            .unwrap_or_else(|| (config.sigma2_shape + 1.0) * arm_regression_variance(data));

        let spec = PolyaTreeSpec::new(config.pt_depth, config.pt_c, sigma2);
        let counts = PolyaTreeCounts::from_residuals(&spec, &residuals);
        let corr = correction_factor(&residuals, &spec);

        Self {
            data,
            design,
            forest,
            fit,
            sigma2,
            complete,
            spec,
            counts,
            residuals,
            corr,
            sigma2_shape: config.sigma2_shape,
            sigma2_scale,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            accepted_mu: 0,
            accepted_sigma: 0,
        }
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    /// Current fitted mean for patient i on the log-time scale.
    pub fn eta(&self, i: usize) -> f64 {
        self.fit.eta(i, &self.forest.transform)
    }

    /// Step 1: Metropolis-Hastings update of the mean function. The
    /// proposal is one full Gaussian-model Gibbs sweep; everything but the
    /// Pólya-tree correction factors cancels in the acceptance ratio.
    pub fn step_mu(&mut self) -> bool {
        let mut prop_forest = self.forest.clone();
        let mut prop_fit = self.fit.clone();
        gibbs_sweep(
            &mut prop_forest,
            &mut prop_fit,
            &self.design,
            &self.complete.y_log,
            self.sigma2,
            &mut self.rng,
        );
        let prop_residuals: Vec<f64> = (0..self.data.n())
            .map(|i| self.complete.y_log[i] - prop_fit.eta(i, &prop_forest.transform))
            .collect();
        let prop_corr = correction_factor(&prop_residuals, &self.spec);
        let accepted = self.accept(prop_corr - self.corr);
        if accepted {
            self.forest = prop_forest;
            self.fit = prop_fit;
            self.residuals = prop_residuals;
            self.counts = PolyaTreeCounts::from_residuals(&self.spec, &self.residuals);
            self.corr = prop_corr;
            self.accepted_mu += 1;
        }
        self.debug_check();
        accepted
    }

    /// Step 2: Metropolis-Hastings update of sigma^2 from the conjugate
    /// inverse-gamma proposal of the Gaussian working model. Both sides of
    /// the acceptance ratio use the same residuals, under the partitions
    /// induced by the two variances.
    pub fn step_sigma(&mut self) -> bool {
        let n = self.data.n() as f64;
        let rss: f64 = self.residuals.iter().map(|&u| u * u).sum();
        let shape = self.sigma2_shape + 0.5 * n;
        let scale = self.sigma2_scale + 0.5 * rss;
        let gamma = Gamma::new(shape, 1.0 / scale).expect("valid gamma parameters");
        let proposal = 1.0 / gamma.sample(&mut self.rng);
        assert!(proposal > 0.0, "inverse-gamma proposal must be positive");

        let prop_spec = self.spec.with_sigma2(proposal);
        let prop_corr = correction_factor(&self.residuals, &prop_spec);
        let accepted = self.accept(prop_corr - self.corr);
        if accepted {
            self.sigma2 = proposal;
            self.spec = prop_spec;
            self.counts = PolyaTreeCounts::from_residuals(&self.spec, &self.residuals);
            self.corr = prop_corr;
            self.accepted_sigma += 1;
        }
        self.debug_check();
        accepted
    }

    /// Step 3: one Gibbs scan over censored patients, redrawing each
    /// censored residual from the Pólya-tree predictive given all the
    /// others, truncated above the censoring bound.
    pub fn step_impute(&mut self) {
        for i in self.data.censored_indices() {
            let old_leaf = self.spec.leaf_index(self.residuals[i]);
            self.counts.remove_leaf(old_leaf);
            let eta = self.fit.eta(i, &self.forest.transform);
            let lower = self.data.y_obs_log[i] - eta;
            let pred = PtPredictive::new(&self.spec, &self.counts);
            let u_new = pred.sample_truncated(lower, &mut self.rng);
            self.residuals[i] = u_new;
            self.complete.y_log[i] = eta + u_new;
            self.complete.kappa[i] = self.complete.y_log[i] - self.data.y_obs_log[i];
            debug_assert!(self.complete.y_log[i] > self.data.y_obs_log[i]);
            self.counts.add_leaf(self.spec.leaf_index(u_new));
        }
        if self.data.n_censored() > 0 {
            self.corr = correction_factor(&self.residuals, &self.spec);
        }
        self.debug_check();
    }

    fn accept(&mut self, log_ratio: f64) -> bool {
        log_ratio >= 0.0 || self.rng.random::<f64>().ln() < log_ratio
    }

    /// Counts must always match the current residuals under the current
    /// partition; checked in debug builds after every step.
    fn debug_check(&self) {
        #[cfg(debug_assertions)]
        {
            assert!(self.counts.is_consistent());
            let fresh = PolyaTreeCounts::from_residuals(&self.spec, &self.residuals);
            assert_eq!(fresh, self.counts, "counts diverged from residuals");
        }
    }
}

/// Pooled residual variance of a two-group (log time on arm) regression;
/// the default prior mode for sigma^2.
fn arm_regression_variance(data: &TrialDataset) -> f64 {
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for i in 0..data.n() {
        sums[data.z[i] as usize] += data.y_obs_log[i];
        counts[data.z[i] as usize] += 1;
    }
    let means = [
        if counts[0] > 0 { sums[0] / counts[0] as f64 } else { 0.0 },
        if counts[1] > 0 { sums[1] / counts[1] as f64 } else { 0.0 },
    ];
    let rss: f64 = (0..data.n())
        .map(|i| {
            let r = data.y_obs_log[i] - means[data.z[i] as usize];
            r * r
        })
        .sum();
    (rss / (data.n() as f64 - 2.0).max(1.0)).max(1e-8)
}

/// Runs one chain and returns the thinned post-burn-in draws plus
/// diagnostics. Deterministic in the config seed.
pub fn run_chain(
    data: &TrialDataset,
    config: &SamplerConfig,
) -> Result<(PosteriorDraws, ChainDiagnostics), SamplerError> {
    let (draws, diag, _) = run_chain_keeping_forests(data, config)?;
    Ok((draws, diag))
}

/// Like [`run_chain`], additionally returning forest snapshots per retained
/// draw when the config asks for them.
pub fn run_chain_keeping_forests(
    data: &TrialDataset,
    config: &SamplerConfig,
) -> Result<(PosteriorDraws, ChainDiagnostics, Vec<ForestState>), SamplerError> {
    config.validate()?;
    let mut chain = AftChain::new(data, config);
    let mut draws = Vec::new();
    let mut forests = Vec::new();
    let mut sigma2_trace = Vec::new();
    for it in 0..config.iterations {
        chain.step_mu();
        chain.step_sigma();
        chain.step_impute();
        if it >= config.burn_in {
            sigma2_trace.push(chain.sigma2);
            if (it - config.burn_in) % config.thin == 0 {
                draws.push(record_draw(&chain));
                if config.keep_forests {
                    forests.push(chain.forest.clone());
                }
            }
        }
    }
    if draws.is_empty() {
        return Err(SamplerError::NoDraws);
    }
    let diag = ChainDiagnostics {
        accept_mu: chain.accepted_mu as f64 / config.iterations as f64,
        accept_sigma: chain.accepted_sigma as f64 / config.iterations as f64,
        n_iterations: config.iterations,
        sigma2_mean: mean(&sigma2_trace),
        sigma2_sd: sd(&sigma2_trace),
    };
    let draws = PosteriorDraws {
        draws,
        meta: DrawMeta {
            n: data.n(),
            iterations: config.iterations,
            burn_in: config.burn_in,
            thin: config.thin,
            seed: config.seed,
            pt_depth: config.pt_depth,
            pt_c: config.pt_c,
        },
    };
    Ok((draws, diag, forests))
}

fn record_draw(chain: &AftChain) -> PosteriorDraw {
    let n = chain.data.n();
    let mut eta_ctrl = Vec::with_capacity(n);
    let mut eta_trt = Vec::with_capacity(n);
    for i in 0..n {
        let x = chain.data.covariate_row(i);
        eta_ctrl.push(chain.forest.predict(0, x));
        eta_trt.push(chain.forest.predict(1, x));
    }
    PosteriorDraw {
        eta_ctrl,
        eta_trt,
        sigma2: chain.sigma2,
        residuals: chain.residuals.clone(),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

/// Posterior predictive survival machinery over a set of retained draws:
/// per-draw residual predictive tables are built once and reused across
/// patients, arms, and horizons.
pub struct SurvivalCurves<'a> {
    draws: &'a PosteriorDraws,
    tables: Vec<PtPredictive>,
}

impl<'a> SurvivalCurves<'a> {
    pub fn new(draws: &'a PosteriorDraws) -> Self {
        let tables = draws
            .draws
            .iter()
            .map(|d| {
                let spec = PolyaTreeSpec::new(draws.meta.pt_depth, draws.meta.pt_c, d.sigma2);
                let counts = PolyaTreeCounts::from_residuals(&spec, &d.residuals);
                PtPredictive::new(&spec, &counts)
            })
            .collect();
        Self { draws, tables }
    }

    /// P(T > tau | arm z, covariates of patient i), averaged over draws.
    pub fn survival(&self, tau: f64, z: u8, patient: usize) -> f64 {
        assert!(tau > 0.0, "time horizon must be positive");
        let log_tau = tau.ln();
        let mut acc = 0.0;
        for (draw, table) in self.draws.draws.iter().zip(self.tables.iter()) {
            let eta = if z == 1 { draw.eta_trt[patient] } else { draw.eta_ctrl[patient] };
            acc += table.tail(log_tau - eta);
        }
        acc / self.draws.len() as f64
    }

    /// Per-draw survival estimates at one probe; the spread across draws is
    /// the posterior uncertainty of the survival functional.
    pub fn survival_per_draw(&self, tau: f64, z: u8, patient: usize) -> Vec<f64> {
        assert!(tau > 0.0);
        let log_tau = tau.ln();
        self.draws
            .draws
            .iter()
            .zip(self.tables.iter())
            .map(|(draw, table)| {
                let eta = if z == 1 { draw.eta_trt[patient] } else { draw.eta_ctrl[patient] };
                table.tail(log_tau - eta)
            })
            .collect()
    }

    /// Predictive conditional treatment effect per patient: the difference
    /// in survival probabilities at `tau` between arms. Exactly one pair of
    /// predictive evaluations per patient per draw.
    pub fn pcte_table(&self, tau: f64) -> Vec<f64> {
        assert!(tau > 0.0);
        let log_tau = tau.ln();
        let n = self.draws.meta.n;
        let mut out = vec![0.0; n];
        for (draw, table) in self.draws.draws.iter().zip(self.tables.iter()) {
            for i in 0..n {
                out[i] += table.tail(log_tau - draw.eta_trt[i]) - table.tail(log_tau - draw.eta_ctrl[i]);
            }
        }
        let scale = 1.0 / self.draws.len() as f64;
        out.iter_mut().for_each(|v| *v *= scale);
        out
    }
}

/// Convenience wrapper: posterior predictive P(T > tau) for one arm and one
/// observed patient's covariates.
pub fn survival_probability(draws: &PosteriorDraws, tau: f64, z: u8, patient: usize) -> f64 {
    SurvivalCurves::new(draws).survival(tau, z, patient)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CovariateMeta;
    use rand_distr::StandardNormal;

    /// n patients, one standard-normal covariate, log times from
    /// y = mu0 + shift * z + s * e, with uniform censoring of a fixed
    /// fraction.
    fn lognormal_dataset(
        n: usize,
        shift: f64,
        s: f64,
        censor_frac: f64,
        seed: u64,
    ) -> TrialDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = vec![0u8; n];
        for zi in z.iter_mut().skip(n / 2) {
            *zi = 1;
        }
        let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mu0 = 4.0;
        let y_true: Vec<f64> = (0..n)
            .map(|i| mu0 + shift * z[i] as f64 + s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut y_obs = y_true.clone();
        let mut gamma = vec![1u8; n];
        let n_cens = (censor_frac * n as f64).floor() as usize;
        for i in 0..n_cens {
            // Censor evenly spread patients at a uniform fraction of T.
            let idx = i * n / n_cens.max(1);
            let t = y_true[idx].exp();
            let c = rng.random_range(0.0..1.0) * t;
            y_obs[idx] = c.ln();
            gamma[idx] = 0;
        }
        TrialDataset::from_parts(
            z,
            x,
            vec![CovariateMeta { name: "x1".into() }],
            y_obs,
            gamma,
            None,
        )
        .unwrap()
    }

    fn quick_config(seed: u64) -> SamplerConfig {
        SamplerConfig {
            iterations: 400,
            burn_in: 200,
            thin: 2,
            seed,
            forest: ForestHyper { n_trees: 20, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn fixed_seed_reproduces_draws_bit_exactly() {
        let data = lognormal_dataset(80, 0.5, 1.0, 0.1, 7);
        let cfg = quick_config(42);
        let (a, da) = run_chain(&data, &cfg).unwrap();
        let (b, db) = run_chain(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(da, db);
    }

    #[test]
    fn depth_one_accepts_every_step() {
        let data = lognormal_dataset(60, 0.3, 1.0, 0.15, 11);
        let cfg = SamplerConfig {
            pt_depth: 1,
            iterations: 300,
            burn_in: 100,
            thin: 2,
            forest: ForestHyper { n_trees: 10, ..Default::default() },
            ..Default::default()
        };
        let mut chain = AftChain::new(&data, &cfg);
        for _ in 0..200 {
            assert!(chain.step_mu(), "depth-1 correction must vanish");
            assert!(chain.step_sigma());
            chain.step_impute();
        }
    }

    #[test]
    fn equal_corrections_always_accept() {
        let data = lognormal_dataset(40, 0.0, 1.0, 0.0, 3);
        let cfg = quick_config(5);
        let mut chain = AftChain::new(&data, &cfg);
        // log-ratio zero goes through the deterministic branch.
        assert!(chain.accept(0.0));
    }

    #[test]
    fn imputation_preserves_uncensored_and_bounds_censored() {
        let data = lognormal_dataset(100, 0.4, 1.0, 0.2, 13);
        let cfg = quick_config(17);
        let mut chain = AftChain::new(&data, &cfg);
        let uncensored: Vec<usize> = (0..data.n()).filter(|&i| data.gamma[i] == 1).collect();
        for _ in 0..50 {
            chain.step_mu();
            chain.step_sigma();
            let before: Vec<f64> = uncensored.iter().map(|&i| chain.complete.y_log[i]).collect();
            chain.step_impute();
            for (k, &i) in uncensored.iter().enumerate() {
                assert_eq!(chain.complete.y_log[i], before[k]);
            }
            for i in data.censored_indices() {
                assert!(chain.complete.y_log[i] > data.y_obs_log[i]);
                assert!(chain.complete.kappa[i] > 0.0);
            }
        }
    }

    #[test]
    fn impute_is_identity_without_censoring() {
        let data = lognormal_dataset(50, 0.2, 1.0, 0.0, 19);
        let cfg = quick_config(23);
        let mut chain = AftChain::new(&data, &cfg);
        let before = chain.complete.y_log.clone();
        chain.step_impute();
        assert_eq!(chain.complete.y_log, before);
    }

    #[test]
    fn null_data_has_no_spurious_arm_effect() {
        let data = lognormal_dataset(200, 0.0, 1.0, 0.1, 29);
        let cfg = SamplerConfig {
            iterations: 900,
            burn_in: 400,
            thin: 2,
            seed: 31,
            forest: ForestHyper { n_trees: 30, ..Default::default() },
            ..Default::default()
        };
        let (draws, _) = run_chain(&data, &cfg).unwrap();
        let shifts: Vec<f64> = draws
            .draws
            .iter()
            .map(|d| {
                (0..data.n())
                    .map(|i| d.eta_trt[i] - d.eta_ctrl[i])
                    .sum::<f64>()
                    / data.n() as f64
            })
            .collect();
        let m = mean(&shifts);
        let s = sd(&shifts);
        assert!(m.abs() < 3.0 * s.max(0.02), "shift {m} too far from 0 (sd {s})");
    }

    #[test]
    fn recovers_known_treatment_shift() {
        let shift = 0.5;
        let data = lognormal_dataset(300, shift, 1.0, 0.1, 37);
        let cfg = SamplerConfig {
            iterations: 1200,
            burn_in: 600,
            thin: 3,
            seed: 41,
            forest: ForestHyper { n_trees: 40, ..Default::default() },
            ..Default::default()
        };
        let (draws, _) = run_chain(&data, &cfg).unwrap();
        let shifts: Vec<f64> = draws
            .draws
            .iter()
            .map(|d| {
                (0..data.n())
                    .map(|i| d.eta_trt[i] - d.eta_ctrl[i])
                    .sum::<f64>()
                    / data.n() as f64
            })
            .collect();
        let m = mean(&shifts);
        let s = sd(&shifts);
        assert!(
            (m - shift).abs() < 3.0 * s,
            "posterior mean shift {m} vs truth {shift} (sd {s})"
        );
    }

    #[test]
    fn survival_limits_and_monotonicity() {
        let data = lognormal_dataset(60, 0.3, 1.0, 0.1, 43);
        let cfg = quick_config(47);
        let (draws, _) = run_chain(&data, &cfg).unwrap();
        let curves = SurvivalCurves::new(&draws);
        // tau -> 0+ gives probability 1.
        assert!((curves.survival(1e-300, 1, 0) - 1.0).abs() < 1e-12);
        // Nonincreasing in tau.
        let taus = [10.0, 30.0, 60.0, 90.0, 150.0, 400.0];
        for i in 0..data.n().min(5) {
            let mut prev = 1.0 + 1e-12;
            for &tau in &taus {
                let s = curves.survival(tau, 1, i);
                assert!((0.0..=1.0).contains(&s));
                assert!(s <= prev + 1e-12);
                prev = s;
            }
        }
    }

    #[test]
    fn survival_single_draw_median_at_eta() {
        // One draw whose mean equals log tau and whose residual snapshot is
        // empty: the predictive is the centering distribution, so survival
        // at tau is exactly the pinned median mass, 0.5.
        let draws = PosteriorDraws {
            draws: vec![PosteriorDraw {
                eta_ctrl: vec![2.0],
                eta_trt: vec![2.0],
                sigma2: 1.0,
                residuals: vec![],
            }],
            meta: DrawMeta {
                n: 1,
                iterations: 1,
                burn_in: 0,
                thin: 1,
                seed: 0,
                pt_depth: 4,
                pt_c: 1.0,
            },
        };
        let tau = 2.0f64.exp();
        assert!((survival_probability(&draws, tau, 1, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn survival_matches_lognormal_truth() {
        let (mu0, shift, s) = (4.0, 0.5, 1.0);
        let data = lognormal_dataset(300, shift, s, 0.1, 53);
        let cfg = SamplerConfig {
            iterations: 1200,
            burn_in: 600,
            thin: 3,
            seed: 59,
            forest: ForestHyper { n_trees: 40, ..Default::default() },
            ..Default::default()
        };
        let (draws, _) = run_chain(&data, &cfg).unwrap();
        let curves = SurvivalCurves::new(&draws);
        let tau: f64 = 90.0;
        for (z, g) in [(0u8, mu0), (1u8, mu0 + shift)] {
            let truth = crate::stats::std_normal_cdf((g - tau.ln()) / s);
            let per_draw = curves.survival_per_draw(tau, z, 0);
            let m = mean(&per_draw);
            let sdv = sd(&per_draw);
            assert!(
                (m - truth).abs() < 3.0 * sdv.max(0.02),
                "arm {z}: {m} vs truth {truth} (sd {sdv})"
            );
        }
    }

    #[test]
    fn patient_order_invariance_of_posterior_law() {
        // Summary distributions from 10 chains on the original data and 10
        // on row-permuted data must agree (two-sample KS at 1%).
        let data = lognormal_dataset(80, 0.4, 1.0, 0.15, 61);
        let n = data.n();
        let perm: Vec<usize> = (0..n).map(|i| (i * 37 + 11) % n).collect();
        let permuted = TrialDataset::from_parts(
            perm.iter().map(|&i| data.z[i]).collect(),
            perm.iter().flat_map(|&i| data.covariate_row(i).to_vec()).collect(),
            data.covariates.clone(),
            perm.iter().map(|&i| data.y_obs_log[i]).collect(),
            perm.iter().map(|&i| data.gamma[i]).collect(),
            None,
        )
        .unwrap();

        let summarize = |d: &TrialDataset, seed: u64| -> f64 {
            let cfg = SamplerConfig {
                iterations: 260,
                burn_in: 130,
                thin: 2,
                seed,
                forest: ForestHyper { n_trees: 12, ..Default::default() },
                ..Default::default()
            };
            let (draws, _) = run_chain(d, &cfg).unwrap();
            // Mean survival difference at tau = 90 over all patients.
            SurvivalCurves::new(&draws).pcte_table(90.0).iter().sum::<f64>() / d.n() as f64
        };
        let a: Vec<f64> = (0..10).map(|k| summarize(&data, 100 + k)).collect();
        let b: Vec<f64> = (0..10).map(|k| summarize(&permuted, 200 + k)).collect();
        let d_stat = ks_statistic(&a, &b);
        // Critical value at alpha = 0.01 for n = m = 10.
        let crit = 1.628 * (2.0f64 / 10.0).sqrt();
        assert!(d_stat < crit, "KS statistic {d_stat} exceeds {crit}");
    }

    fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
        let mut sa = a.to_vec();
        let mut sb = b.to_vec();
        sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
        sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let mut d: f64 = 0.0;
        for &v in sa.iter().chain(sb.iter()) {
            let fa = sa.iter().filter(|&&x| x <= v).count() as f64 / sa.len() as f64;
            let fb = sb.iter().filter(|&&x| x <= v).count() as f64 / sb.len() as f64;
            d = d.max((fa - fb).abs());
        }
        d
    }

    #[test]
    fn sigma_step_matches_quadrature_target() {
        // With the forest frozen and nothing to impute, step_sigma's
        // stationary law is p(s2) * G_mg(u | s2); compare the chain
        // against trapezoid quadrature of that density.
        let n = 20;
        let us: Vec<f64> = (0..n)
            .map(|i| {
                let t = (i as f64 / n as f64) * 2.0 - 1.0;
                1.2 * t + 0.3 * (7.0 * t).sin()
            })
            .collect();
        let y: Vec<f64> = us.iter().map(|u| u + 4.0).collect();
        let data = TrialDataset::from_parts(
            vec![0; n],
            vec![0.0; n],
            vec![CovariateMeta { name: "x".into() }],
            y,
            vec![1; n],
            None,
        )
        .unwrap();
        let (depth, c, shape, scale) = (3usize, 1.0, 3.0, 2.0);
        let cfg = SamplerConfig {
            pt_depth: depth,
            pt_c: c,
            sigma2_shape: shape,
            sigma2_scale: Some(scale),
            seed: 404,
            forest: ForestHyper { n_trees: 1, ..Default::default() },
            ..Default::default()
        };
        let mut chain = AftChain::new(&data, &cfg);
        let u0: Vec<f64> = chain.residuals().to_vec();
        let mut samples = Vec::new();
        for _ in 0..60_000 {
            chain.step_sigma();
            samples.push(chain.sigma2);
        }

        let grid: Vec<f64> = (0..3000).map(|k| 0.02 * (1.004f64).powi(k)).collect();
        let logpost: Vec<f64> = grid
            .iter()
            .map(|&s2| {
                let spec = PolyaTreeSpec::new(depth, c, s2);
                -(shape + 1.0) * s2.ln() - scale / s2
                    + crate::polya::marginal_loglik(&u0, &spec)
            })
            .collect();
        let maxlp = logpost.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dens: Vec<f64> = logpost.iter().map(|lp| (lp - maxlp).exp()).collect();
        let mut cdf = vec![0.0];
        for k in 1..grid.len() {
            cdf.push(cdf[k - 1] + 0.5 * (dens[k] + dens[k - 1]) * (grid[k] - grid[k - 1]));
        }
        let total = *cdf.last().unwrap();
        let target_cdf = |s2: f64| -> f64 {
            let k = grid.partition_point(|g| *g <= s2);
            if k == 0 {
                return 0.0;
            }
            if k >= grid.len() {
                return 1.0;
            }
            let f = (s2 - grid[k - 1]) / (grid[k] - grid[k - 1]);
            (cdf[k - 1] + f * (cdf[k] - cdf[k - 1])) / total
        };
        let mut sorted = samples;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for q in 1..10 {
            let p = q as f64 / 10.0;
            let emp = sorted[(p * sorted.len() as f64) as usize];
            let gap = (target_cdf(emp) - p).abs();
            assert!(gap < 0.03, "CDF gap {gap:.4} at p = {p}");
        }
    }

    #[test]
    fn run_length_validation() {
        let data = lognormal_dataset(30, 0.0, 1.0, 0.0, 71);
        let bad = SamplerConfig { iterations: 10, burn_in: 10, ..Default::default() };
        assert!(matches!(run_chain(&data, &bad), Err(SamplerError::BadRunLength { .. })));
        let bad2 = SamplerConfig { thin: 0, ..Default::default() };
        assert!(matches!(run_chain(&data, &bad2), Err(SamplerError::BadThin)));
    }
}
