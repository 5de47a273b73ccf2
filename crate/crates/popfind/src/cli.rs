//! Command layer: resolved run configuration, the three commands
//! (analyze, simulate, tune), and exit-code mapping. The binary in
//! `src/bin/popfind.rs` parses flags into a [`RunConfig`] and dispatches
//! here; every emitted artifact embeds the resolved config so a run can be
//! reproduced bit-exactly from its own output directory.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{enumerate_actions, fit_bins, ActionError, BinCodes, BinPolicy};
use crate::aft::{run_chain, SamplerConfig, SamplerError, SurvivalCurves};
use crate::data::{DataError, DatasetSchema, TrialDataset};
use crate::decision::{rank_actions, DecisionError, TradeoffSpec, UtilityParams};
use crate::report::{
    append_audit, append_oc_csv, build_report, load_audit, render_text, write_json, AnalysisReport,
    AuditRecord,
};
use crate::sim::{
    aggregate, calibrate_scenario, run_one_replicate, scenario, true_subgroup, HarnessConfig,
    OCSummary, ScenarioId, SimError,
};
use crate::stats::derive_seed;
use crate::tox::{run_tox_chain, tox_pcte_table, ToxConfig, ToxError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("data error: {0}")]
    Data(#[from] DataError),
    #[error("binning error: {0}")]
    Action(#[from] ActionError),
    #[error("toxicity model error: {0}")]
    Tox(#[from] ToxError),
    #[error("sampler error: {0}")]
    Sampler(#[from] SamplerError),
    #[error("decision error: {0}")]
    Decision(#[from] DecisionError),
    #[error("simulation error: {0}")]
    Sim(#[from] SimError),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_SCHEMA: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

impl CliError {
    /// Stable exit codes: schema/data problems, configuration problems,
    /// and numerical/sampling failures are distinguishable by code.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) | CliError::Action(_) | CliError::Tox(ToxError::MissingToxicity) => {
                EXIT_SCHEMA
            }
            CliError::Config(_) | CliError::Io(_) => EXIT_CONFIG,
            CliError::Sim(SimError::UnknownScenario(_)) => EXIT_CONFIG,
            CliError::Sim(SimError::OddSampleSize(_))
            | CliError::Sim(SimError::TooFewCovariates(_))
            | CliError::Sim(SimError::BadCensoring(_))
            | CliError::Sim(SimError::TooFewReplicates { .. }) => EXIT_CONFIG,
            _ => EXIT_NUMERICAL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Analyze,
    Simulate,
    Tune,
}

/// The complete, serializable run configuration. Every knob lives here
/// exactly once; emitted artifacts embed the resolved value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    /// CSV input (analyze mode).
    pub data: Option<PathBuf>,
    /// Optional per-covariate discretization policy file (JSON).
    pub bins_policy: Option<PathBuf>,
    pub out: PathBuf,
    pub schema: DatasetSchema,
    /// Efficacy horizon.
    pub tau: f64,
    /// Extra horizons re-analyzed with the same seed in analyze mode.
    pub tau_sensitivity: Vec<f64>,
    pub delta0: f64,
    pub delta1: f64,
    pub nu: f64,
    pub zeta: f64,
    pub u0: f64,
    pub seed: u64,
    /// Worker-thread cap; default lets the runtime decide.
    pub jobs: Option<usize>,
    pub scenario: Option<String>,
    pub n: usize,
    pub p: usize,
    pub reps: usize,
    pub censor: f64,
    pub d_eff: f64,
    pub d_tox: f64,
    pub target_t1e: f64,
    pub mcmc: SamplerConfig,
    pub tox_mcmc: ToxConfig,
    pub truth_mc: usize,
    pub top_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Analyze,
            data: None,
            bins_policy: None,
            out: PathBuf::from("out"),
            schema: DatasetSchema::default(),
            tau: 90.0,
            tau_sensitivity: Vec::new(),
            delta0: 0.2,
            delta1: 0.0,
            nu: 0.25,
            zeta: 0.15,
            u0: -0.304,
            seed: 20240901,
            jobs: None,
            scenario: None,
            n: 400,
            p: 10,
            reps: 200,
            censor: 0.10,
            d_eff: 0.40,
            d_tox: 0.25,
            target_t1e: 0.05,
            mcmc: SamplerConfig::default(),
            tox_mcmc: ToxConfig::default(),
            truth_mc: 1_000_000,
            top_k: 5,
        }
    }
}

impl RunConfig {
    pub fn tradeoff(&self, tau: f64) -> TradeoffSpec {
        TradeoffSpec::new(self.delta0, self.delta1, tau)
    }

    pub fn utility_params(&self) -> UtilityParams {
        UtilityParams::new(self.nu, self.zeta, self.u0)
    }

    fn harness(&self) -> HarnessConfig {
        let mut mcmc = self.mcmc.clone();
        mcmc.seed = self.seed;
        let mut tox_mcmc = self.tox_mcmc.clone();
        tox_mcmc.seed = derive_seed(self.seed, 1);
        HarnessConfig {
            n: self.n,
            p: self.p,
            censor: self.censor,
            reps: self.reps,
            seed: self.seed,
            mcmc,
            tox_mcmc,
            tradeoff: self.tradeoff(self.tau),
            utility: self.utility_params(),
            truth_mc: self.truth_mc,
            top_k: self.top_k,
        }
    }
}

/// Everything cmd_analyze writes, returned for tests and callers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeOutputs {
    pub reports: Vec<AnalysisReport>,
    pub diagnostics: AnalyzeDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeDiagnostics {
    pub accept_mu: f64,
    pub accept_sigma: f64,
    pub sigma2_mean: f64,
    pub sigma2_sd: f64,
    pub n_patients: usize,
    pub n_censored: usize,
}

/// Fits bins, runs the chains once, and emits one ranked report per
/// requested horizon (all horizons share the chains, so differences are
/// attributable to the horizon alone).
pub fn cmd_analyze(config: &RunConfig) -> Result<AnalyzeOutputs, CliError> {
    let data_path = config
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config("analyze mode needs --data".into()))?;
    let data = TrialDataset::from_csv_path(data_path, &config.schema)?;
    let policy: BinPolicy = match &config.bins_policy {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| CliError::Config(format!("bad bins policy: {e}")))?,
        None => BinPolicy::new(),
    };
    std::fs::create_dir_all(&config.out)?;

    let bins = fit_bins(&data, &policy)?;
    write_json(&config.out.join("bins.json"), &bins)?;
    let codes = BinCodes::compute(&data, &bins)?;
    let actions = enumerate_actions(&bins);

    let mut mcmc = config.mcmc.clone();
    mcmc.seed = config.seed;
    let (draws, diag) = run_chain(&data, &mcmc)?;
    let curves = SurvivalCurves::new(&draws);

    let pcte_tox = if config.delta1 != 0.0 {
        let mut tox_cfg = config.tox_mcmc.clone();
        tox_cfg.seed = derive_seed(config.seed, 1);
        let tox_draws = run_tox_chain(&data, &tox_cfg)?;
        Some(tox_pcte_table(&tox_draws))
    } else {
        None
    };

    let mut horizons = vec![config.tau];
    horizons.extend(config.tau_sensitivity.iter().copied());
    let params = config.utility_params();
    let mut reports = Vec::new();
    for tau in horizons {
        let tradeoff = config.tradeoff(tau);
        let pcte_tte = curves.pcte_table(tau);
        let ranked = rank_actions(
            &actions,
            &codes,
            &pcte_tte,
            pcte_tox.as_deref(),
            &tradeoff,
            &params,
        )?;
        let report = build_report(&ranked, &bins, &tradeoff, &params, config.seed, config.top_k);
        write_json(&config.out.join(format!("report_tau{tau}.json")), &report)?;
        std::fs::write(
            config.out.join(format!("report_tau{tau}.txt")),
            render_text(&report, config.top_k.max(20)),
        )?;
        reports.push(report);
    }

    let diagnostics = AnalyzeDiagnostics {
        accept_mu: diag.accept_mu,
        accept_sigma: diag.accept_sigma,
        sigma2_mean: diag.sigma2_mean,
        sigma2_sd: diag.sigma2_sd,
        n_patients: data.n(),
        n_censored: data.n_censored(),
    };
    write_json(&config.out.join("diagnostics.json"), &diagnostics)?;
    write_json(&config.out.join("config.json"), config)?;
    Ok(AnalyzeOutputs { reports, diagnostics })
}

fn resolve_scenario(config: &RunConfig) -> Result<crate::sim::ScenarioSpec, CliError> {
    let id_str = config
        .scenario
        .as_ref()
        .ok_or_else(|| CliError::Config("simulate/tune mode needs --scenario".into()))?;
    let id = ScenarioId::from_str(id_str)?;
    let mut spec = scenario(id, config.d_eff, config.d_tox);
    spec.tau = config.tau;
    calibrate_scenario(&mut spec, config.truth_mc, derive_seed(config.seed, 0xCA11))?;
    Ok(spec)
}

fn run_key(config: &RunConfig, spec: &crate::sim::ScenarioSpec) -> String {
    format!(
        "{}|d{}|t{}|n{}|p{}|c{}|seed{}|tau{}|{}:{}:{}|{}:{}",
        spec.id,
        spec.d_eff,
        spec.d_tox,
        config.n,
        config.p,
        config.censor,
        config.seed,
        config.tau,
        config.nu,
        config.zeta,
        config.u0,
        config.mcmc.iterations,
        config.mcmc.pt_depth,
    )
}

/// Runs (or resumes) one simulation cell and appends its summary row to
/// `oc.csv`. Completed replicates found in the audit log are reused.
pub fn cmd_simulate(config: &RunConfig) -> Result<OCSummary, CliError> {
    use rayon::prelude::*;
    std::fs::create_dir_all(&config.out)?;
    let spec = resolve_scenario(config)?;
    let harness = config.harness();
    let true_action = true_subgroup(
        &spec,
        harness.p,
        harness.n,
        &harness.tradeoff,
        &harness.utility,
        harness.truth_mc,
        derive_seed(harness.seed, 0x0A11),
    );

    let key = run_key(config, &spec);
    let audit_path = config.out.join("replicates.jsonl");
    let mut outcomes = load_audit(&audit_path, &key);
    outcomes.retain(|o| o.replicate < config.reps);
    let done: std::collections::HashSet<usize> = outcomes.iter().map(|o| o.replicate).collect();
    let missing: Vec<usize> = (0..config.reps).filter(|r| !done.contains(r)).collect();

    let fresh: Vec<(usize, Result<crate::sim::ReplicateOutcome, SimError>)> = missing
        .par_iter()
        .map(|&r| (r, run_one_replicate(&spec, &harness, &true_action, r)))
        .collect();
    let mut failures = 0usize;
    for (r, result) in fresh {
        match result {
            Ok(o) => {
                append_audit(&audit_path, &AuditRecord { run_key: key.clone(), outcome: o.clone() })?;
                outcomes.push(o);
            }
            Err(e) => {
                eprintln!("replicate {r} failed: {e}");
                failures += 1;
            }
        }
    }
    outcomes.sort_by_key(|o| o.replicate);
    let summary = aggregate(&spec, &harness, &true_action, &outcomes, failures);
    append_oc_csv(&config.out.join("oc.csv"), &summary)?;
    write_json(&config.out.join("summary.json"), &summary)?;
    write_json(&config.out.join("config.json"), config)?;
    Ok(summary)
}

/// Tuned utility constants for a target type-I error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRecord {
    pub nu: f64,
    pub zeta: f64,
    pub target_t1e: f64,
    pub u0: f64,
    pub reps: usize,
    pub seed: u64,
    pub scenario: String,
}

/// Calibrates u0 under the null scenario at the requested type-I-error
/// target and writes the tuned record.
pub fn cmd_tune(config: &RunConfig) -> Result<TuneRecord, CliError> {
    std::fs::create_dir_all(&config.out)?;
    let mut cfg = config.clone();
    if cfg.scenario.is_none() {
        cfg.scenario = Some("0".to_string());
    }
    let spec = resolve_scenario(&cfg)?;
    let harness = cfg.harness();
    let u0 = crate::sim::tune_u0(&spec, &harness, cfg.target_t1e)?;
    let record = TuneRecord {
        nu: cfg.nu,
        zeta: cfg.zeta,
        target_t1e: cfg.target_t1e,
        u0,
        reps: cfg.reps,
        seed: cfg.seed,
        scenario: spec.id.to_string(),
    };
    write_json(&config.out.join("tuned_u0.json"), &record)?;
    write_json(&config.out.join("config.json"), config)?;
    Ok(record)
}

/// Loads a RunConfig from JSON.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("bad config file: {e}")))
}
