//! Binary toxicity regression: a sum-of-trees probit with latent-variable
//! augmentation.
//!
//! Each patient gets a continuous auxiliary variable w with
//! y_tox = 1 exactly when w > 0; conditional on the forest, w is normal
//! with unit variance around the fitted mean, truncated to the side the
//! observed outcome dictates. Conditional on w, the forest update is one
//! ordinary Gaussian Gibbs sweep with the residual variance pinned at one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bart::{gibbs_sweep, Design, ForestFit, ForestHyper, ForestState};
use crate::data::{DrawMeta, PosteriorDraw, PosteriorDraws, TrialDataset};
use crate::stats::{sample_std_normal_truncated, std_normal_cdf};

#[derive(Debug, Error)]
pub enum ToxError {
    #[error("dataset has no toxicity column")]
    MissingToxicity,
    #[error("iterations ({iterations}) must exceed burn-in ({burn_in})")]
    BadRunLength { iterations: usize, burn_in: usize },
    #[error("thinning interval must be at least 1")]
    BadThin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToxConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub forest: ForestHyper,
}

impl Default for ToxConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            burn_in: 1000,
            thin: 4,
            seed: 0,
            forest: ForestHyper::default(),
        }
    }
}

/// Latent state of the probit chain; public for tests.
pub struct ToxChain<'a> {
    data: &'a TrialDataset,
    y_tox: &'a [u8],
    design: Design,
    pub forest: ForestState,
    fit: ForestFit,
    /// Per-patient latent auxiliaries; sign always matches the outcome.
    pub latent: Vec<f64>,
    rng: ChaCha8Rng,
}

impl<'a> ToxChain<'a> {
    pub fn new(data: &'a TrialDataset, config: &ToxConfig) -> Result<Self, ToxError> {
        let y_tox = data.y_tox.as_deref().ok_or(ToxError::MissingToxicity)?;
        let design = Design::from_dataset(data);
        let forest = ForestState::new_probit(config.forest.clone());
        let fit = ForestFit::new(&forest, &design);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let latent = y_tox
            .iter()
            .map(|&y| {
                if y == 1 {
                    sample_std_normal_truncated(0.0, f64::INFINITY, &mut rng)
                } else {
                    sample_std_normal_truncated(f64::NEG_INFINITY, 0.0, &mut rng)
                }
            })
            .collect();
        Ok(Self {
            data,
            y_tox,
            design,
            forest,
            fit,
            latent,
            rng,
        })
    }

    /// One iteration: redraw every latent, then one forest sweep on the
    /// latents with unit residual variance.
    pub fn step(&mut self) {
        for i in 0..self.data.n() {
            let eta = self.fit.eta(i, &self.forest.transform);
            let w = if self.y_tox[i] == 1 {
                eta + sample_std_normal_truncated(-eta, f64::INFINITY, &mut self.rng)
            } else {
                eta + sample_std_normal_truncated(f64::NEG_INFINITY, -eta, &mut self.rng)
            };
            self.latent[i] = w;
        }
        gibbs_sweep(
            &mut self.forest,
            &mut self.fit,
            &self.design,
            &self.latent,
            1.0,
            &mut self.rng,
        );
        debug_assert!(self.latent_signs_consistent());
    }

    pub fn latent_signs_consistent(&self) -> bool {
        self.latent
            .iter()
            .zip(self.y_tox.iter())
            .all(|(&w, &y)| if y == 1 { w > 0.0 } else { w <= 0.0 })
    }
}

/// Runs the probit chain; returned draws hold per-patient probit linear
/// predictors for both arms (sigma2 fixed at one, no residual snapshots).
pub fn run_tox_chain(data: &TrialDataset, config: &ToxConfig) -> Result<PosteriorDraws, ToxError> {
    if config.iterations <= config.burn_in {
        return Err(ToxError::BadRunLength {
            iterations: config.iterations,
            burn_in: config.burn_in,
        });
    }
    if config.thin == 0 {
        return Err(ToxError::BadThin);
    }
    let mut chain = ToxChain::new(data, config)?;
    let mut draws = Vec::new();
    for it in 0..config.iterations {
        chain.step();
        if it >= config.burn_in && (it - config.burn_in) % config.thin == 0 {
            let n = data.n();
            let mut eta_ctrl = Vec::with_capacity(n);
            let mut eta_trt = Vec::with_capacity(n);
            for i in 0..n {
                let x = data.covariate_row(i);
                eta_ctrl.push(chain.forest.predict(0, x));
                eta_trt.push(chain.forest.predict(1, x));
            }
            draws.push(PosteriorDraw {
                eta_ctrl,
                eta_trt,
                sigma2: 1.0,
                residuals: Vec::new(),
            });
        }
    }
    Ok(PosteriorDraws {
        draws,
        meta: DrawMeta {
            n: data.n(),
            iterations: config.iterations,
            burn_in: config.burn_in,
            thin: config.thin,
            seed: config.seed,
            pt_depth: 1,
            pt_c: 1.0,
        },
    })
}

/// Posterior predictive toxicity probability for one arm and one observed
/// patient's covariates.
pub fn tox_probability(draws: &PosteriorDraws, z: u8, patient: usize) -> f64 {
    let mut acc = 0.0;
    for d in &draws.draws {
        let eta = if z == 1 { d.eta_trt[patient] } else { d.eta_ctrl[patient] };
        acc += std_normal_cdf(eta);
    }
    acc / draws.len() as f64
}

/// Per-patient difference in predictive toxicity probabilities between
/// arms.
pub fn tox_pcte_table(draws: &PosteriorDraws) -> Vec<f64> {
    let n = draws.meta.n;
    let mut out = vec![0.0; n];
    for d in &draws.draws {
        for i in 0..n {
            out[i] += std_normal_cdf(d.eta_trt[i]) - std_normal_cdf(d.eta_ctrl[i]);
        }
    }
    let scale = 1.0 / draws.len() as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    out
}
