//! Simulation harness: scenario battery, marginal calibration, data
//! generation, the truth-utility oracle that defines each scenario's true
//! report, replicated end-to-end analyses, and the frequentist operating
//! characteristics with their tuning workflow.
//!
//! The battery is one null scenario, ten efficacy scenarios with sensitive
//! regions of different sizes and shapes on (x1, x2), two toxicity
//! scenarios on x6, and six efficacy-toxicity products. Log event times
//! follow a log-linear truth with a fixed covariate surface and an
//! arm-by-region interaction; binary toxicity follows a logistic truth.
//! Intercepts and interaction coefficients are calibrated by bisection
//! against Monte Carlo marginals so the implied survival and toxicity
//! probabilities hit their targets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{
    enumerate_actions, fit_bins, BinCodes, BinKind, BinPolicy, CovBin, CovariateBins, Shape,
    SubgroupAction,
};
use crate::aft::{run_chain, SamplerConfig, SurvivalCurves};
use crate::data::{CovariateMeta, TrialDataset};
use crate::decision::{rank_actions, utility, RankedReport, TradeoffSpec, UtilityParams};
use crate::stats::{derive_seed, empirical_quantile, logistic, std_normal_cdf, std_normal_quantile};
use crate::tox::{run_tox_chain, tox_pcte_table, ToxConfig};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown scenario id `{0}`")]
    UnknownScenario(String),
    #[error("sample size must be even for 1:1 allocation, got {0}")]
    OddSampleSize(usize),
    #[error("canonical scenarios need at least 10 covariates, got {0}")]
    TooFewCovariates(usize),
    #[error("censoring proportion must lie in [0, 1), got {0}")]
    BadCensoring(f64),
    #[error("{reps} replicates cannot resolve a {target} type-I-error quantile")]
    TooFewReplicates { reps: usize, target: f64 },
    #[error("calibration did not converge for {0}")]
    CalibrationFailed(&'static str),
    #[error(transparent)]
    Sampler(#[from] crate::aft::SamplerError),
    #[error(transparent)]
    Tox(#[from] crate::tox::ToxError),
    #[error(transparent)]
    Action(#[from] crate::actions::ActionError),
    #[error(transparent)]
    Decision(#[from] crate::decision::DecisionError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

/// Scenario identifier: the null case, efficacy scenarios E1-E10, toxicity
/// scenarios T1-T2, and the six efficacy-toxicity products.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    Null,
    E(u8),
    T(u8),
    Combo { e: u8, t: u8 },
}

impl std::fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScenarioId::Null => write!(f, "0"),
            ScenarioId::E(k) => write!(f, "E{k}"),
            ScenarioId::T(k) => write!(f, "T{k}"),
            ScenarioId::Combo { e, t } => write!(f, "E{e}*T{t}"),
        }
    }
}

impl std::str::FromStr for ScenarioId {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        let norm = s.trim().to_uppercase().replace(['*', 'X'], "");
        if norm == "0" {
            return Ok(ScenarioId::Null);
        }
        let err = || SimError::UnknownScenario(s.to_string());
        let parse_tail = |tail: &str, max: u8| -> Option<u8> {
            tail.parse::<u8>().ok().filter(|k| (1..=max).contains(k))
        };
        if let Some(rest) = norm.strip_prefix('E') {
            if let Some(pos) = rest.find('T') {
                let e = parse_tail(&rest[..pos], 10).ok_or_else(err)?;
                let t = parse_tail(&rest[pos + 1..], 2).ok_or_else(err)?;
                // Only E1, E2, and E4 pair with the toxicity scenarios.
                if matches!(e, 1 | 2 | 4) {
                    return Ok(ScenarioId::Combo { e, t });
                }
                return Err(err());
            }
            if let Some(e) = parse_tail(rest, 10) {
                return Ok(ScenarioId::E(e));
            }
        } else if let Some(rest) = norm.strip_prefix('T') {
            if let Some(t) = parse_tail(rest, 2) {
                return Ok(ScenarioId::T(t));
            }
        }
        Err(err())
    }
}

/// A sensitive-region indicator over the covariate vector, with cutoffs on
/// the raw N(0,1) scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Region {
    /// No sensitive region (null scenario).
    None,
    /// The whole population.
    AllPatients,
    /// x_cov >= cut.
    Above { cov: usize, cut: f64 },
    /// x_cov <= cut.
    AtOrBelow { cov: usize, cut: f64 },
    /// Rectangular intersection of two lower bounds.
    AboveBoth { cov_a: usize, cut_a: f64, cov_b: usize, cut_b: f64 },
    /// L-shaped union of two lower bounds.
    AboveEither { cov_a: usize, cut_a: f64, cov_b: usize, cut_b: f64 },
    /// Inward band lo <= x_cov < hi.
    Band { cov: usize, lo: f64, hi: f64 },
    /// Distant tails x_cov < lo or x_cov >= hi.
    Tails { cov: usize, lo: f64, hi: f64 },
}

impl Region {
    pub fn contains(&self, x: &[f64]) -> bool {
        match *self {
            Region::None => false,
            Region::AllPatients => true,
            Region::Above { cov, cut } => x[cov] >= cut,
            Region::AtOrBelow { cov, cut } => x[cov] <= cut,
            Region::AboveBoth { cov_a, cut_a, cov_b, cut_b } => x[cov_a] >= cut_a && x[cov_b] >= cut_b,
            Region::AboveEither { cov_a, cut_a, cov_b, cut_b } => {
                x[cov_a] >= cut_a || x[cov_b] >= cut_b
            }
            Region::Band { cov, lo, hi } => x[cov] >= lo && x[cov] < hi,
            Region::Tails { cov, lo, hi } => x[cov] < lo || x[cov] >= hi,
        }
    }
}

/// Fixed covariate surface of the time-to-event truth.
fn h_tte(x: &[f64]) -> f64 {
    0.1 * x[0] + 0.05 * x[1] - 0.1 * x[2] - 0.1 * x[3] + 0.05 * x[4] - 0.05 * x[0] * x[2]
}

/// Fixed covariate surface of the toxicity truth.
fn h_tox(x: &[f64]) -> f64 {
    0.05 * x[5] - 0.1 * x[6] - 0.1 * x[7] + 0.05 * x[8] + 0.1 * x[9] - 0.05 * x[5] * x[7]
}

/// One simulation truth: regions, targets, and (after calibration) the
/// log-linear and logistic coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    /// Efficacy horizon used by the implied-probability targets.
    pub tau: f64,
    /// Residual standard deviation of the log-linear truth.
    pub s: f64,
    pub eff_region: Region,
    pub tox_region: Region,
    /// Target survival difference between arms in the sensitive region.
    pub d_eff: f64,
    /// Target toxicity difference between arms in the toxic region.
    pub d_tox: f64,
    pub target_s_ctrl: f64,
    pub target_s_trt_nonsens: f64,
    pub target_tox_ctrl: f64,
    /// Whether the scenario carries a toxicity outcome.
    pub has_tox: bool,
    pub beta_c: f64,
    pub beta0: f64,
    pub gamma_eff: f64,
    pub alpha_c: f64,
    pub gamma_tox: f64,
    pub calibrated: bool,
}

const Q_TERCILE_LO: f64 = 1.0 / 3.0;
const Q_TERCILE_HI: f64 = 2.0 / 3.0;

/// Builds the canonical (uncalibrated) scenario. Regions follow the
/// published sizes: one-covariate scenarios cut x1 at its terciles or
/// median, two-covariate ones intersect or union cuts on (x1, x2), and the
/// toxicity scenarios cut x6. All are plain struct fields, so callers can
/// override a region before calibrating.
pub fn scenario(id: ScenarioId, d_eff: f64, d_tox: f64) -> ScenarioSpec {
    let q_lo = std_normal_quantile(Q_TERCILE_LO);
    let q_hi = std_normal_quantile(Q_TERCILE_HI);
    let eff_region = |e: u8| -> Region {
        match e {
            1 => Region::AllPatients,
            2 => Region::Above { cov: 0, cut: q_lo },
            3 => Region::Above { cov: 0, cut: 0.0 },
            4 => Region::Above { cov: 0, cut: q_hi },
            5 => Region::AboveBoth { cov_a: 0, cut_a: q_lo, cov_b: 1, cut_b: q_lo },
            6 => Region::AboveBoth { cov_a: 0, cut_a: 0.0, cov_b: 1, cut_b: 0.0 },
            7 => Region::AboveBoth { cov_a: 0, cut_a: q_lo, cov_b: 1, cut_b: q_hi },
            8 => Region::Band { cov: 0, lo: q_lo, hi: q_hi },
            9 => Region::Tails {
                cov: 0,
                lo: std_normal_quantile(0.25),
                hi: std_normal_quantile(0.75),
            },
            10 => Region::AboveEither { cov_a: 0, cut_a: q_hi, cov_b: 1, cut_b: q_hi },
            _ => unreachable!(),
        }
    };
    let tox_region = |t: u8| -> Region {
        match t {
            1 => Region::AtOrBelow { cov: 5, cut: q_lo },
            2 => Region::AtOrBelow { cov: 5, cut: q_hi },
            _ => unreachable!(),
        }
    };
    let (eff, tox, has_tox) = match id {
        ScenarioId::Null => (Region::None, Region::None, false),
        ScenarioId::E(e) => (eff_region(e), Region::None, false),
        ScenarioId::T(t) => (Region::None, tox_region(t), true),
        ScenarioId::Combo { e, t } => (eff_region(e), tox_region(t), true),
    };
    ScenarioSpec {
        id,
        tau: 90.0,
        s: 1.0,
        eff_region: eff,
        tox_region: tox,
        d_eff,
        d_tox,
        target_s_ctrl: 0.20,
        target_s_trt_nonsens: 0.30,
        target_tox_ctrl: 0.10,
        has_tox,
        beta_c: 0.0,
        beta0: 0.0,
        gamma_eff: 0.0,
        alpha_c: 0.0,
        gamma_tox: 0.0,
        calibrated: false,
    }
}

impl ScenarioSpec {
    /// Linear predictor of the time-to-event truth.
    pub fn g_tte(&self, z: u8, x: &[f64]) -> f64 {
        self.beta_c
            + self.beta0 * z as f64
            + h_tte(x)
            + self.gamma_eff * z as f64 * (self.eff_region.contains(x) as u8 as f64)
    }

    /// Linear predictor of the logistic toxicity truth.
    pub fn lin_tox(&self, z: u8, x: &[f64]) -> f64 {
        self.alpha_c
            + h_tox(x)
            + self.gamma_tox * z as f64 * (self.tox_region.contains(x) as u8 as f64)
    }

    /// True conditional survival probability at the scenario horizon.
    pub fn true_survival(&self, z: u8, x: &[f64]) -> f64 {
        std_normal_cdf((self.g_tte(z, x) - self.tau.ln()) / self.s)
    }

    /// True survival-difference effect per covariate row.
    pub fn true_pcte_eff(&self, x: &[f64]) -> f64 {
        self.true_survival(1, x) - self.true_survival(0, x)
    }

    /// True toxicity-difference effect per covariate row.
    pub fn true_pcte_tox(&self, x: &[f64]) -> f64 {
        logistic(self.lin_tox(1, x)) - logistic(self.lin_tox(0, x))
    }
}

/// Bisection on a monotone-increasing function of one coefficient.
fn bisect(mut f: impl FnMut(f64) -> f64, label: &'static str) -> Result<f64, SimError> {
    let (mut lo, mut hi) = (-30.0, 30.0);
    if f(lo) > 0.0 || f(hi) < 0.0 {
        return Err(SimError::CalibrationFailed(label));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Calibrates the intercepts and interaction coefficients so the implied
/// marginals hit their targets: control-arm survival, treated-arm survival
/// in the non-sensitive region, treated-arm survival in the sensitive
/// region at `target + d_eff`, control-arm toxicity, and treated-arm
/// toxicity in the toxic region at `target + d_tox`. The Monte Carlo
/// covariate sample is fixed by `seed`, so calibration is deterministic
/// and exactly idempotent.
pub fn calibrate_scenario(spec: &mut ScenarioSpec, mc_size: usize, seed: u64) -> Result<(), SimError> {
    let p = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h_eff = Vec::with_capacity(mc_size);
    let mut in_eff = Vec::with_capacity(mc_size);
    let mut h_toxv = Vec::with_capacity(mc_size);
    let mut in_tox = Vec::with_capacity(mc_size);
    let mut x = vec![0.0; p];
    for _ in 0..mc_size {
        for v in x.iter_mut() {
            *v = rng.sample::<f64, _>(StandardNormal);
        }
        h_eff.push(h_tte(&x));
        in_eff.push(spec.eff_region.contains(&x));
        h_toxv.push(h_tox(&x));
        in_tox.push(spec.tox_region.contains(&x));
    }
    let log_tau = spec.tau.ln();
    let s = spec.s;

    // Control-arm survival over everyone.
    let target = spec.target_s_ctrl;
    spec.beta_c = bisect(
        |b| {
            h_eff.iter().map(|&h| std_normal_cdf((b + h - log_tau) / s)).sum::<f64>()
                / mc_size as f64
                - target
        },
        "beta_c",
    )?;

    match spec.id {
        ScenarioId::Null | ScenarioId::T(_) => {
            spec.beta0 = 0.0;
            spec.gamma_eff = 0.0;
        }
        ScenarioId::E(1) | ScenarioId::Combo { e: 1, .. } => {
            // Uniform benefit: a single arm effect hits the sensitive
            // target everywhere.
            let beta_c = spec.beta_c;
            let target = spec.target_s_ctrl + spec.d_eff;
            spec.beta0 = bisect(
                |b0| {
                    h_eff
                        .iter()
                        .map(|&h| std_normal_cdf((beta_c + b0 + h - log_tau) / s))
                        .sum::<f64>()
                        / mc_size as f64
                        - target
                },
                "beta0",
            )?;
            spec.gamma_eff = 0.0;
        }
        _ => {
            let beta_c = spec.beta_c;
            let nonsens: Vec<f64> = h_eff
                .iter()
                .zip(in_eff.iter())
                .filter(|&(_, &m)| !m)
                .map(|(&h, _)| h)
                .collect();
            let target = spec.target_s_trt_nonsens;
            spec.beta0 = bisect(
                |b0| {
                    nonsens
                        .iter()
                        .map(|&h| std_normal_cdf((beta_c + b0 + h - log_tau) / s))
                        .sum::<f64>()
                        / nonsens.len() as f64
                        - target
                },
                "beta0",
            )?;
            let beta0 = spec.beta0;
            let sens: Vec<f64> = h_eff
                .iter()
                .zip(in_eff.iter())
                .filter(|&(_, &m)| m)
                .map(|(&h, _)| h)
                .collect();
            let target = spec.target_s_ctrl + spec.d_eff;
            spec.gamma_eff = bisect(
                |g| {
                    sens.iter()
                        .map(|&h| std_normal_cdf((beta_c + beta0 + g + h - log_tau) / s))
                        .sum::<f64>()
                        / sens.len() as f64
                        - target
                },
                "gamma_eff",
            )?;
        }
    }

    // Toxicity side.
    let target = spec.target_tox_ctrl;
    spec.alpha_c = bisect(
        |a| h_toxv.iter().map(|&h| logistic(a + h)).sum::<f64>() / mc_size as f64 - target,
        "alpha_c",
    )?;
    if spec.has_tox && spec.tox_region != Region::None {
        let alpha_c = spec.alpha_c;
        let toxic: Vec<f64> = h_toxv
            .iter()
            .zip(in_tox.iter())
            .filter(|&(_, &m)| m)
            .map(|(&h, _)| h)
            .collect();
        let target = spec.target_tox_ctrl + spec.d_tox;
        spec.gamma_tox = bisect(
            |g| {
                toxic.iter().map(|&h| logistic(alpha_c + g + h)).sum::<f64>() / toxic.len() as f64
                    - target
            },
            "gamma_tox",
        )?;
    } else {
        spec.gamma_tox = 0.0;
    }
    spec.calibrated = true;
    Ok(())
}

/// Generates one trial: balanced 1:1 arms, iid standard-normal covariates,
/// log-linear event times, uniform-on-(0, T) censoring of a fixed random
/// fraction, and a Bernoulli toxicity column when the scenario carries one.
pub fn generate_dataset(
    spec: &ScenarioSpec,
    n: usize,
    p: usize,
    censor_q: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TrialDataset, SimError> {
    if n % 2 != 0 {
        return Err(SimError::OddSampleSize(n));
    }
    if p < 10 {
        return Err(SimError::TooFewCovariates(p));
    }
    if !(0.0..1.0).contains(&censor_q) {
        return Err(SimError::BadCensoring(censor_q));
    }
    let mut z: Vec<u8> = (0..n).map(|i| (i >= n / 2) as u8).collect();
    z.shuffle(rng);
    let mut x = vec![0.0; n * p];
    for v in x.iter_mut() {
        *v = rng.sample::<f64, _>(StandardNormal);
    }
    let mut y_log = Vec::with_capacity(n);
    for i in 0..n {
        let row = &x[i * p..(i + 1) * p];
        y_log.push(spec.g_tte(z[i], row) + spec.s * rng.sample::<f64, _>(StandardNormal));
    }
    let mut gamma = vec![1u8; n];
    let mut y_obs_log = y_log.clone();
    let n_censored = (censor_q * n as f64).floor() as usize;
    if n_censored > 0 {
        let picks = rand::seq::index::sample(rng, n, n_censored);
        for i in picks {
            // Uniform censoring time on (0, T): log C = log T + log U.
            let u: f64 = rng.random_range(0.0..1.0);
            y_obs_log[i] = y_log[i] + u.ln();
            gamma[i] = 0;
        }
    }
    let y_tox = if spec.has_tox {
        Some(
            (0..n)
                .map(|i| {
                    let row = &x[i * p..(i + 1) * p];
                    u8::from(rng.random::<f64>() < logistic(spec.lin_tox(z[i], row)))
                })
                .collect(),
        )
    } else {
        None
    };
    let covariates = (1..=p).map(|j| CovariateMeta { name: format!("x{j}") }).collect();
    Ok(TrialDataset::from_parts(z, x, covariates, y_obs_log, gamma, y_tox)?)
}

/// Theoretical tercile bins for every covariate; the truth-side analogue of
/// the empirical bins the fitted analyses use.
pub fn theoretical_bins(p: usize) -> CovariateBins {
    let q_lo = std_normal_quantile(Q_TERCILE_LO);
    let q_hi = std_normal_quantile(Q_TERCILE_HI);
    CovariateBins {
        per_cov: (1..=p)
            .map(|j| CovBin {
                name: format!("x{j}"),
                kind: BinKind::Continuous { q_lo, q_hi },
                labels: None,
            })
            .collect(),
    }
}

/// Cell-aggregated truth statistics: per covariate pair and tercile cell,
/// the Monte Carlo count and the summed true effects. Any action's true
/// PATE and population share then come from at most nine cell lookups.
struct TruthCells {
    p: usize,
    total: f64,
    sum_eff_all: f64,
    sum_tox_all: f64,
    per_cov: Vec<[CellStat; 3]>,
    per_pair: Vec<[CellStat; 9]>,
}

#[derive(Debug, Clone, Copy, Default)]
struct CellStat {
    count: f64,
    sum_eff: f64,
    sum_tox: f64,
}

impl CellStat {
    fn absorb(&mut self, eff: f64, tox: f64) {
        self.count += 1.0;
        self.sum_eff += eff;
        self.sum_tox += tox;
    }

    fn merge(self, other: CellStat) -> CellStat {
        CellStat {
            count: self.count + other.count,
            sum_eff: self.sum_eff + other.sum_eff,
            sum_tox: self.sum_tox + other.sum_tox,
        }
    }
}

#[inline]
fn pair_index(p: usize, a: usize, b: usize) -> usize {
    // Position of (a, b), a < b, in lexicographic pair order.
    a * (2 * p - a - 1) / 2 + (b - a - 1)
}

impl TruthCells {
    fn build(spec: &ScenarioSpec, p: usize, mc_size: usize, seed: u64) -> Self {
        let q_lo = std_normal_quantile(Q_TERCILE_LO);
        let q_hi = std_normal_quantile(Q_TERCILE_HI);
        let n_pairs = p * (p - 1) / 2;
        let mut cells = TruthCells {
            p,
            total: 0.0,
            sum_eff_all: 0.0,
            sum_tox_all: 0.0,
            per_cov: vec![[CellStat::default(); 3]; p],
            per_pair: vec![[CellStat::default(); 9]; n_pairs],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = vec![0.0; p];
        let mut code = vec![0usize; p];
        for _ in 0..mc_size {
            for v in x.iter_mut() {
                *v = rng.sample::<f64, _>(StandardNormal);
            }
            for (c, &v) in code.iter_mut().zip(x.iter()) {
                *c = if v < q_lo {
                    0
                } else if v < q_hi {
                    1
                } else {
                    2
                };
            }
            let eff = spec.true_pcte_eff(&x);
            let tox = if spec.has_tox { spec.true_pcte_tox(&x) } else { 0.0 };
            cells.total += 1.0;
            cells.sum_eff_all += eff;
            cells.sum_tox_all += tox;
            for j in 0..p {
                cells.per_cov[j][code[j]].absorb(eff, tox);
            }
            for a in 0..p {
                for b in (a + 1)..p {
                    cells.per_pair[pair_index(p, a, b)][3 * code[a] + code[b]].absorb(eff, tox);
                }
            }
        }
        cells
    }

    fn action_stat(&self, a: &SubgroupAction) -> CellStat {
        match a {
            SubgroupAction::Null => CellStat::default(),
            SubgroupAction::All => CellStat {
                count: self.total,
                sum_eff: self.sum_eff_all,
                sum_tox: self.sum_tox_all,
            },
            SubgroupAction::OneCov { cov, subset } => (0..3)
                .filter(|&b| subset.contains(b))
                .map(|b| self.per_cov[*cov][b])
                .fold(CellStat::default(), CellStat::merge),
            SubgroupAction::TwoCov { cov_a, cov_b, subset_a, subset_b, shape } => {
                let cells = &self.per_pair[pair_index(self.p, *cov_a, *cov_b)];
                let mut acc = CellStat::default();
                for ba in 0..3 {
                    for bb in 0..3 {
                        let hit = match shape {
                            Shape::Rectangular => subset_a.contains(ba) && subset_b.contains(bb),
                            Shape::LShaped => subset_a.contains(ba) || subset_b.contains(bb),
                        };
                        if hit {
                            acc = acc.merge(cells[3 * ba + bb]);
                        }
                    }
                }
                acc
            }
        }
    }
}

/// One action's truth score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueScore {
    pub action: SubgroupAction,
    pub utility: f64,
    pub pate_eff: f64,
    pub pate_tox: f64,
    pub population_share: f64,
}

/// Scores every action under the simulation truth: posterior predictive
/// quantities are replaced by the true conditional effects, averaged over
/// a Monte Carlo covariate sample on theoretical tercile bins, and the
/// size factor uses the expected subgroup size at the trial's n.
pub fn true_scores(
    spec: &ScenarioSpec,
    p: usize,
    n_trial: usize,
    tradeoff: &TradeoffSpec,
    params: &UtilityParams,
    mc_size: usize,
    seed: u64,
) -> Vec<TrueScore> {
    assert!(spec.calibrated, "calibrate the scenario before truth scoring");
    let cells = TruthCells::build(spec, p, mc_size, seed);
    let bins = theoretical_bins(p);
    let actions = enumerate_actions(&bins);
    actions
        .iter()
        .map(|a| {
            if *a == SubgroupAction::Null {
                return TrueScore {
                    action: *a,
                    utility: params.u0,
                    pate_eff: 0.0,
                    pate_tox: 0.0,
                    population_share: 0.0,
                };
            }
            let stat = cells.action_stat(a);
            let share = stat.count / cells.total;
            let pate_eff = if stat.count > 0.0 { stat.sum_eff / stat.count } else { 0.0 };
            let pate_tox = if stat.count > 0.0 { stat.sum_tox / stat.count } else { 0.0 };
            let deltabar = tradeoff.delta0 + tradeoff.delta1 * pate_tox;
            let size = n_trial as f64 * share;
            let u = if stat.count > 0.0 {
                utility(pate_eff, deltabar, size, a.n_covariates(), params)
            } else {
                f64::NEG_INFINITY
            };
            TrueScore {
                action: *a,
                utility: u,
                pate_eff,
                pate_tox,
                population_share: share,
            }
        })
        .collect()
}

/// The true report: the action maximizing true utility (enumeration order
/// breaks ties).
pub fn true_subgroup(
    spec: &ScenarioSpec,
    p: usize,
    n_trial: usize,
    tradeoff: &TradeoffSpec,
    params: &UtilityParams,
    mc_size: usize,
    seed: u64,
) -> SubgroupAction {
    let scores = true_scores(spec, p, n_trial, tradeoff, params, mc_size, seed);
    scores
        .iter()
        .max_by(|a, b| a.utility.partial_cmp(&b.utility).unwrap())
        .map(|s| s.action)
        .unwrap()
}

/// Everything one simulated analysis needs besides the scenario itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub n: usize,
    pub p: usize,
    pub censor: f64,
    pub reps: usize,
    pub seed: u64,
    pub mcmc: SamplerConfig,
    pub tox_mcmc: ToxConfig,
    pub tradeoff: TradeoffSpec,
    pub utility: UtilityParams,
    /// Monte Carlo sample size behind calibration and truth scoring.
    pub truth_mc: usize,
    /// Report length (the paper's top five).
    pub top_k: usize,
}

impl HarnessConfig {
    /// Desk-scale defaults: 200 replicates and shortened chains. The
    /// published study ran 1,000 replicates with longer chains; everything
    /// here is a plain field, so scale up as needed.
    pub fn desk_scale(seed: u64) -> Self {
        Self {
            n: 400,
            p: 10,
            censor: 0.10,
            reps: 200,
            seed,
            mcmc: SamplerConfig {
                iterations: 1500,
                burn_in: 750,
                thin: 3,
                ..Default::default()
            },
            tox_mcmc: ToxConfig {
                iterations: 1200,
                burn_in: 600,
                thin: 3,
                ..Default::default()
            },
            tradeoff: TradeoffSpec::new(0.2, 0.0, 90.0),
            utility: UtilityParams::new(0.25, 0.15, -0.304),
            truth_mc: 1_000_000,
            top_k: 5,
        }
    }
}

/// Outcome of one simulated trial analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub null_in_top: bool,
    pub all_in_top: bool,
    pub true_in_top: bool,
    pub best_action: SubgroupAction,
    pub max_nonnull_utility: f64,
    pub accept_mu: f64,
    pub accept_sigma: f64,
}

/// Runs one full simulated analysis: generate, fit, rank, and compare the
/// top-k report against the sentinels and the true action.
pub fn run_one_replicate(
    spec: &ScenarioSpec,
    cfg: &HarnessConfig,
    true_action: &SubgroupAction,
    replicate: usize,
) -> Result<ReplicateOutcome, SimError> {
    let rep_seed = derive_seed(cfg.seed, replicate as u64);
    let mut data_rng = ChaCha8Rng::seed_from_u64(derive_seed(rep_seed, 0));
    let data = generate_dataset(spec, cfg.n, cfg.p, cfg.censor, &mut data_rng)?;

    let bins = fit_bins(&data, &BinPolicy::new())?;
    let codes = BinCodes::compute(&data, &bins)?;
    let actions = enumerate_actions(&bins);

    let mut mcmc = cfg.mcmc.clone();
    mcmc.seed = derive_seed(rep_seed, 1);
    let (draws, diag) = run_chain(&data, &mcmc)?;
    let pcte_tte = SurvivalCurves::new(&draws).pcte_table(cfg.tradeoff.tau);

    let pcte_tox = if cfg.tradeoff.delta1 != 0.0 {
        let mut tox_cfg = cfg.tox_mcmc.clone();
        tox_cfg.seed = derive_seed(rep_seed, 2);
        let tox_draws = run_tox_chain(&data, &tox_cfg)?;
        Some(tox_pcte_table(&tox_draws))
    } else {
        None
    };

    let report = rank_actions(
        &actions,
        &codes,
        &pcte_tte,
        pcte_tox.as_deref(),
        &cfg.tradeoff,
        &cfg.utility,
    )?;
    Ok(outcome_from_report(&report, cfg.top_k, true_action, replicate, diag.accept_mu, diag.accept_sigma))
}

fn outcome_from_report(
    report: &RankedReport,
    top_k: usize,
    true_action: &SubgroupAction,
    replicate: usize,
    accept_mu: f64,
    accept_sigma: f64,
) -> ReplicateOutcome {
    ReplicateOutcome {
        replicate,
        null_in_top: report.contains_in_top(top_k, &SubgroupAction::Null),
        all_in_top: report.contains_in_top(top_k, &SubgroupAction::All),
        true_in_top: report.contains_in_top(top_k, true_action),
        best_action: report.best().action,
        max_nonnull_utility: report.max_nonnull_utility(),
        accept_mu,
        accept_sigma,
    }
}

/// Which sentinel the truth oracle picked; fixes which operating
/// characteristics apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TruthKind {
    Null,
    All,
    Subgroup,
}

impl TruthKind {
    fn of(action: &SubgroupAction) -> Self {
        match action {
            SubgroupAction::Null => TruthKind::Null,
            SubgroupAction::All => TruthKind::All,
            _ => TruthKind::Subgroup,
        }
    }
}

/// Frequentist operating characteristics over replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OCSummary {
    pub scenario: String,
    pub d_eff: f64,
    pub d_tox: f64,
    pub n: usize,
    pub p: usize,
    pub censor: f64,
    pub reps: usize,
    pub failures: usize,
    pub truth_kind: TruthKind,
    pub true_action: SubgroupAction,
    /// True decision rate: TNR under a null truth, TPR under a uniform
    /// truth, TSR under a subgroup truth.
    pub tdr: f64,
    pub tdr_se: f64,
    pub fnr: Option<f64>,
    pub fpr: Option<f64>,
    pub fsr: Option<f64>,
    pub fdr: Option<f64>,
    pub t1e: Option<f64>,
    pub mean_accept_mu: f64,
    pub mean_accept_sigma: f64,
}

/// Aggregates replicate outcomes into the applicable error rates.
pub fn aggregate(
    spec: &ScenarioSpec,
    cfg: &HarnessConfig,
    true_action: &SubgroupAction,
    outcomes: &[ReplicateOutcome],
    failures: usize,
) -> OCSummary {
    let reps = outcomes.len();
    let m = reps as f64;
    let frac = |pred: &dyn Fn(&ReplicateOutcome) -> bool| -> f64 {
        outcomes.iter().filter(|o| pred(o)).count() as f64 / m
    };
    let truth_kind = TruthKind::of(true_action);
    let (tdr, fnr, fpr, fsr, t1e) = match truth_kind {
        TruthKind::Null => {
            let tnr = frac(&|o| o.null_in_top);
            (tnr, None, None, None, Some(1.0 - tnr))
        }
        TruthKind::All => {
            let tpr = frac(&|o| o.all_in_top);
            let fnr = frac(&|o| o.null_in_top && !o.all_in_top);
            let fsr = 1.0 - frac(&|o| o.null_in_top || o.all_in_top);
            (tpr, Some(fnr), None, Some(fsr), None)
        }
        TruthKind::Subgroup => {
            let tsr = frac(&|o| o.true_in_top);
            let fnr = frac(&|o| o.null_in_top && !o.true_in_top);
            let fpr = frac(&|o| o.all_in_top && !o.true_in_top);
            let fsr = 1.0 - frac(&|o| o.true_in_top || o.null_in_top || o.all_in_top);
            (tsr, Some(fnr), Some(fpr), Some(fsr), None)
        }
    };
    let fdr = match truth_kind {
        TruthKind::Null => None,
        _ => Some(fnr.unwrap_or(0.0) + fpr.unwrap_or(0.0) + fsr.unwrap_or(0.0)),
    };
    OCSummary {
        scenario: spec.id.to_string(),
        d_eff: spec.d_eff,
        d_tox: spec.d_tox,
        n: cfg.n,
        p: cfg.p,
        censor: cfg.censor,
        reps,
        failures,
        truth_kind,
        true_action: *true_action,
        tdr,
        tdr_se: (tdr * (1.0 - tdr) / m).sqrt(),
        fnr,
        fpr,
        fsr,
        fdr,
        t1e,
        mean_accept_mu: outcomes.iter().map(|o| o.accept_mu).sum::<f64>() / m,
        mean_accept_sigma: outcomes.iter().map(|o| o.accept_sigma).sum::<f64>() / m,
    }
}

/// Calibrates the scenario (if needed), resolves the true action, runs the
/// replicates in parallel, and aggregates. Per-replicate failures are
/// counted and excluded. Deterministic in the master seed.
pub fn run_replicates(
    spec: &ScenarioSpec,
    cfg: &HarnessConfig,
) -> Result<(OCSummary, Vec<ReplicateOutcome>), SimError> {
    let mut spec = spec.clone();
    if !spec.calibrated {
        calibrate_scenario(&mut spec, cfg.truth_mc, derive_seed(cfg.seed, 0xCA11))?;
    }
    let true_action = true_subgroup(
        &spec,
        cfg.p,
        cfg.n,
        &cfg.tradeoff,
        &cfg.utility,
        cfg.truth_mc,
        derive_seed(cfg.seed, 0x0A11),
    );
    let results: Vec<Result<ReplicateOutcome, SimError>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| run_one_replicate(&spec, cfg, &true_action, r))
        .collect();
    let mut outcomes = Vec::with_capacity(cfg.reps);
    let mut failures = 0usize;
    for r in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(_) => failures += 1,
        }
    }
    let summary = aggregate(&spec, cfg, &true_action, &outcomes, failures);
    Ok((summary, outcomes))
}

/// Calibrates u0 against a null-scenario type-I-error target: per null
/// replicate record the maximum utility over non-null actions; u0 is the
/// (1 - target) empirical quantile of those maxima, so the null report
/// drops out of the top spot with the target frequency.
pub fn tune_u0(
    spec0: &ScenarioSpec,
    cfg: &HarnessConfig,
    target_t1e: f64,
) -> Result<f64, SimError> {
    assert!(target_t1e > 0.0 && target_t1e <= 1.0);
    if target_t1e >= 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if (cfg.reps as f64) * target_t1e < 1.0 {
        return Err(SimError::TooFewReplicates { reps: cfg.reps, target: target_t1e });
    }
    let mut spec = spec0.clone();
    if !spec.calibrated {
        calibrate_scenario(&mut spec, cfg.truth_mc, derive_seed(cfg.seed, 0xCA11))?;
    }
    // The recorded maxima do not depend on u0 or on the true action.
    let placeholder = SubgroupAction::All;
    let results: Vec<Result<ReplicateOutcome, SimError>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| run_one_replicate(&spec, cfg, &placeholder, r))
        .collect();
    let maxima: Vec<f64> = results
        .into_iter()
        .filter_map(|r| r.ok().map(|o| o.max_nonnull_utility))
        .collect();
    if (maxima.len() as f64) * target_t1e < 1.0 {
        return Err(SimError::TooFewReplicates { reps: maxima.len(), target: target_t1e });
    }
    Ok(empirical_quantile(&maxima, 1.0 - target_t1e))
}
