//! Turns posterior draws into decision quantities and ranks the candidate
//! subgroup reports.
//!
//! Per patient: the predictive conditional treatment effect (PCTE), a
//! difference in posterior predictive survival probabilities at the chosen
//! horizon (and, when toxicity matters, in predictive toxicity
//! probabilities). Per action: the subgroup average (PATE), the average
//! minimum clinically meaningful difference delta-bar = delta0 + delta1 *
//! PATE_tox, and the expected utility
//!
//!   U(a) = [PATE_tte(a) - deltabar(a)] * (|SG(a)|+1)^nu / (|J|+1)^zeta
//!
//! with U(null) = u0. The report is every action scored and sorted, with
//! the top five flagged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{membership_coded, BinCodes, SubgroupAction};

#[derive(Debug, Error)]
pub enum DecisionError {
    #[error("toxicity draws are required when delta1 != 0")]
    MissingToxicityDraws,
    #[error("no scorable action (every subgroup is empty)")]
    NoScorableAction,
    #[error("pcte table length {got} does not match patient count {expected}")]
    TableLength { got: usize, expected: usize },
}

/// Efficacy-toxicity trade-off constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffSpec {
    /// Minimum clinically meaningful survival-probability difference under
    /// no toxicity difference.
    pub delta0: f64,
    /// Slope per unit toxicity-probability difference.
    pub delta1: f64,
    /// Efficacy horizon (days).
    pub tau: f64,
}

impl TradeoffSpec {
    pub fn new(delta0: f64, delta1: f64, tau: f64) -> Self {
        assert!(delta0 >= 0.0, "delta0 must be nonnegative");
        assert!(tau > 0.0, "tau must be positive");
        Self { delta0, delta1, tau }
    }
}

/// Utility tuning constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityParams {
    /// Subgroup-size exponent.
    pub nu: f64,
    /// Parsimony exponent.
    pub zeta: f64,
    /// Utility of reporting no benefit anywhere.
    pub u0: f64,
}

impl UtilityParams {
    pub fn new(nu: f64, zeta: f64, u0: f64) -> Self {
        assert!(nu > 0.0, "nu must be positive");
        assert!(zeta > 0.0, "zeta must be positive");
        Self { nu, zeta, u0 }
    }
}

/// Average minimum clinically meaningful difference over a subgroup.
pub fn average_mcmd(pate_tox: f64, spec: &TradeoffSpec) -> f64 {
    spec.delta0 + spec.delta1 * pate_tox
}

/// Expected utility of a non-null action given its subgroup statistics.
/// `n_covariates` is 0 for the whole-population report. The size argument
/// is real-valued so population-expected sizes work too.
pub fn utility(
    pate_tte: f64,
    deltabar: f64,
    subgroup_size: f64,
    n_covariates: usize,
    params: &UtilityParams,
) -> f64 {
    (pate_tte - deltabar) * (subgroup_size + 1.0).powf(params.nu)
        / ((n_covariates + 1) as f64).powf(params.zeta)
}

/// Subgroup average of per-patient values over the members of `a`. Returns
/// the member count alongside; `None` mean for an empty subgroup.
pub fn pate(a: &SubgroupAction, values: &[f64], codes: &BinCodes) -> (Option<f64>, usize) {
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..codes.n() {
        if membership_coded(codes.row(i), a) {
            sum += values[i];
            count += 1;
        }
    }
    if count == 0 {
        (None, 0)
    } else {
        (Some(sum / count as f64), count)
    }
}

/// One scored action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionScore {
    pub action: SubgroupAction,
    /// Position in the deterministic enumeration; ties in utility break
    /// toward the lower index.
    pub enumeration_index: usize,
    pub utility: f64,
    pub pate_tte: Option<f64>,
    pub pate_tox: Option<f64>,
    pub deltabar: Option<f64>,
    pub subgroup_size: usize,
    pub n_covariates: usize,
}

/// Every action scored and sorted by descending utility. Actions whose
/// subgroup is empty in the observed data are excluded from the ranking and
/// listed separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedReport {
    pub ranked: Vec<ActionScore>,
    pub excluded_empty: Vec<SubgroupAction>,
    pub n_patients: usize,
}

impl RankedReport {
    /// The formal optimum.
    pub fn best(&self) -> &ActionScore {
        &self.ranked[0]
    }

    pub fn top(&self, k: usize) -> &[ActionScore] {
        &self.ranked[..k.min(self.ranked.len())]
    }

    pub fn contains_in_top(&self, k: usize, action: &SubgroupAction) -> bool {
        self.top(k).iter().any(|s| s.action == *action)
    }

    /// Highest utility among non-null actions; used when calibrating u0.
    pub fn max_nonnull_utility(&self) -> f64 {
        self.ranked
            .iter()
            .filter(|s| s.action != SubgroupAction::Null)
            .map(|s| s.utility)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Scores every enumerated action from cached per-patient effect tables.
/// `pcte_tte` and (when needed) `pcte_tox` have one entry per patient, so
/// scoring the whole action space reuses exactly one predictive evaluation
/// pair per patient.
pub fn rank_actions(
    actions: &[SubgroupAction],
    codes: &BinCodes,
    pcte_tte: &[f64],
    pcte_tox: Option<&[f64]>,
    tradeoff: &TradeoffSpec,
    params: &UtilityParams,
) -> Result<RankedReport, DecisionError> {
    let n = codes.n();
    if pcte_tte.len() != n {
        return Err(DecisionError::TableLength { got: pcte_tte.len(), expected: n });
    }
    if tradeoff.delta1 != 0.0 && pcte_tox.is_none() {
        return Err(DecisionError::MissingToxicityDraws);
    }
    if let Some(t) = pcte_tox {
        if t.len() != n {
            return Err(DecisionError::TableLength { got: t.len(), expected: n });
        }
    }

    let mut ranked = Vec::with_capacity(actions.len());
    let mut excluded = Vec::new();
    for (idx, action) in actions.iter().enumerate() {
        if *action == SubgroupAction::Null {
            ranked.push(ActionScore {
                action: *action,
                enumeration_index: idx,
                utility: params.u0,
                pate_tte: None,
                pate_tox: None,
                deltabar: None,
                subgroup_size: 0,
                n_covariates: 0,
            });
            continue;
        }
        let (mean_tte, size) = pate(action, pcte_tte, codes);
        let Some(mean_tte) = mean_tte else {
            excluded.push(*action);
            continue;
        };
        let mean_tox = match pcte_tox {
            Some(t) if tradeoff.delta1 != 0.0 => pate(action, t, codes).0,
            _ => None,
        };
        let deltabar = average_mcmd(mean_tox.unwrap_or(0.0), tradeoff);
        let u = utility(mean_tte, deltabar, size as f64, action.n_covariates(), params);
        ranked.push(ActionScore {
            action: *action,
            enumeration_index: idx,
            utility: u,
            pate_tte: Some(mean_tte),
            pate_tox: mean_tox,
            deltabar: Some(deltabar),
            subgroup_size: size,
            n_covariates: action.n_covariates(),
        });
    }
    if ranked.is_empty() {
        return Err(DecisionError::NoScorableAction);
    }
    ranked.sort_by(|a, b| {
        b.utility
            .partial_cmp(&a.utility)
            .unwrap()
            .then(a.enumeration_index.cmp(&b.enumeration_index))
    });
    Ok(RankedReport {
        ranked,
        excluded_empty: excluded,
        n_patients: n,
    })
}
