//! Command-line front end: subgroup analysis of trial CSV data, simulation
//! of operating characteristics, and utility tuning.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use popfind::cli::{
    cmd_analyze, cmd_simulate, cmd_tune, load_config, CliError, Mode, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "popfind",
    about = "Decision-theoretic subgroup finding for randomized trials with censored time-to-event and toxicity outcomes",
    version
)]
struct CliArgs {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze a trial CSV: fit the survival (and optionally toxicity)
    /// models and report the top subgroups.
    Analyze(AnalyzeArgs),
    /// Simulate operating characteristics for one scenario cell.
    Simulate(SimArgs),
    /// Calibrate the null-report utility u0 against a type-I-error target.
    Tune(SimArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Load a previously emitted config.json; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Efficacy horizon tau (same time unit as the data).
    #[arg(long)]
    tau: Option<f64>,
    /// Minimum clinically meaningful survival-probability difference.
    #[arg(long)]
    delta0: Option<f64>,
    /// Trade-off slope per unit toxicity-probability difference.
    #[arg(long)]
    delta1: Option<f64>,
    /// Subgroup-size utility exponent.
    #[arg(long)]
    nu: Option<f64>,
    /// Parsimony utility exponent.
    #[arg(long)]
    zeta: Option<f64>,
    /// Utility of the null report.
    #[arg(long)]
    u0: Option<f64>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker-thread cap.
    #[arg(long)]
    jobs: Option<usize>,
    /// MCMC iterations for the survival chain.
    #[arg(long)]
    iterations: Option<usize>,
    /// Burn-in iterations for the survival chain.
    #[arg(long)]
    burn_in: Option<usize>,
    /// Thinning interval.
    #[arg(long)]
    thin: Option<usize>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Input CSV (columns: arm, time, event, optional tox, covariates).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Per-covariate discretization policy JSON.
    #[arg(long)]
    bins_policy: Option<PathBuf>,
    /// Additional horizons analyzed with the same seed.
    #[arg(long, value_delimiter = ',')]
    tau_sensitivity: Vec<f64>,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Scenario id: 0, E1..E10, T1, T2, or a product like E2*T1.
    #[arg(long)]
    scenario: Option<String>,
    /// Trial size (1:1 allocation).
    #[arg(long)]
    n: Option<usize>,
    /// Covariate count (at least 10).
    #[arg(long)]
    p: Option<usize>,
    /// Number of simulated replicates.
    #[arg(long)]
    reps: Option<usize>,
    /// Censoring proportion in [0, 1).
    #[arg(long)]
    censor: Option<f64>,
    /// Survival-difference target in the sensitive region.
    #[arg(long)]
    d_eff: Option<f64>,
    /// Toxicity-difference target in the toxic region.
    #[arg(long)]
    d_tox: Option<f64>,
    /// Type-I-error target (tune mode).
    #[arg(long)]
    target_t1e: Option<f64>,
    /// Monte Carlo size behind calibration and truth scoring.
    #[arg(long)]
    truth_mc: Option<usize>,
}

fn apply_common(cfg: &mut RunConfig, args: &CommonArgs) -> Result<(), CliError> {
    if let Some(path) = &args.config {
        *cfg = load_config(path)?;
    }
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = args.$field.clone() {
                cfg.$field = v;
            }
        };
    }
    set!(out);
    set!(tau);
    set!(delta0);
    set!(delta1);
    set!(nu);
    set!(zeta);
    set!(u0);
    set!(seed);
    if args.jobs.is_some() {
        cfg.jobs = args.jobs;
    }
    if let Some(v) = args.iterations {
        cfg.mcmc.iterations = v;
    }
    if let Some(v) = args.burn_in {
        cfg.mcmc.burn_in = v;
    }
    if let Some(v) = args.thin {
        cfg.mcmc.thin = v;
    }
    Ok(())
}

fn apply_sim(cfg: &mut RunConfig, args: &SimArgs) -> Result<(), CliError> {
    apply_common(cfg, &args.common)?;
    if args.scenario.is_some() {
        cfg.scenario = args.scenario.clone();
    }
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = args.$field {
                cfg.$field = v;
            }
        };
    }
    set!(n);
    set!(p);
    set!(reps);
    set!(censor);
    set!(d_eff);
    set!(d_tox);
    set!(target_t1e);
    set!(truth_mc);
    Ok(())
}

fn init_threads(jobs: Option<usize>) {
    if let Some(j) = jobs {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
}

fn run() -> Result<(), CliError> {
    let cli = CliArgs::parse();
    match cli.command {
        Command::Analyze(args) => {
            let mut cfg = RunConfig { mode: Mode::Analyze, ..Default::default() };
            apply_common(&mut cfg, &args.common)?;
            if args.data.is_some() {
                cfg.data = args.data.clone();
            }
            if args.bins_policy.is_some() {
                cfg.bins_policy = args.bins_policy.clone();
            }
            if !args.tau_sensitivity.is_empty() {
                cfg.tau_sensitivity = args.tau_sensitivity.clone();
            }
            cfg.mode = Mode::Analyze;
            init_threads(cfg.jobs);
            let outputs = cmd_analyze(&cfg)?;
            for report in &outputs.reports {
                println!("{}", popfind::report::render_text(report, cfg.top_k));
            }
            println!(
                "diagnostics: accept_mu = {:.3}, accept_sigma = {:.3}, sigma2 = {:.3} +- {:.3}",
                outputs.diagnostics.accept_mu,
                outputs.diagnostics.accept_sigma,
                outputs.diagnostics.sigma2_mean,
                outputs.diagnostics.sigma2_sd
            );
            Ok(())
        }
        Command::Simulate(args) => {
            let mut cfg = RunConfig { mode: Mode::Simulate, ..Default::default() };
            apply_sim(&mut cfg, &args)?;
            cfg.mode = Mode::Simulate;
            init_threads(cfg.jobs);
            let summary = cmd_simulate(&cfg)?;
            println!(
                "{} d_eff={} d_tox={} n={} censor={}: TDR={:.3} (se {:.3}) FNR={:?} FPR={:?} FSR={:?} T1E={:?}",
                summary.scenario,
                summary.d_eff,
                summary.d_tox,
                summary.n,
                summary.censor,
                summary.tdr,
                summary.tdr_se,
                summary.fnr,
                summary.fpr,
                summary.fsr,
                summary.t1e
            );
            Ok(())
        }
        Command::Tune(args) => {
            let mut cfg = RunConfig { mode: Mode::Tune, ..Default::default() };
            apply_sim(&mut cfg, &args)?;
            cfg.mode = Mode::Tune;
            init_threads(cfg.jobs);
            let record = cmd_tune(&cfg)?;
            println!(
                "tuned u0 = {:.4} at target T1E {} (nu = {}, zeta = {}, reps = {})",
                record.u0, record.target_t1e, record.nu, record.zeta, record.reps
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
