//! Report assembly and file emission: ranked-subgroup reports as machine-
//! readable JSON plus a human-readable table, operating-characteristic CSV
//! rows, and the per-replicate audit log used for resumable simulation.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::actions::{render_action, CovariateBins};
use crate::decision::{RankedReport, TradeoffSpec, UtilityParams};
use crate::sim::{OCSummary, ReplicateOutcome};

/// One row of a rendered subgroup report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub rank: usize,
    pub label: String,
    pub action: crate::actions::SubgroupAction,
    pub utility: f64,
    pub pate_tte: Option<f64>,
    pub pate_tox: Option<f64>,
    pub deltabar: Option<f64>,
    pub subgroup_size: usize,
    pub subgroup_pct: f64,
    pub n_covariates: usize,
    pub in_top: bool,
}

/// A full analysis report for one time horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub tau: f64,
    pub tradeoff: TradeoffSpec,
    pub utility_params: UtilityParams,
    pub seed: u64,
    pub n_patients: usize,
    pub top_k: usize,
    pub entries: Vec<ReportEntry>,
    pub excluded_empty: Vec<String>,
}

pub fn build_report(
    ranked: &RankedReport,
    bins: &CovariateBins,
    tradeoff: &TradeoffSpec,
    params: &UtilityParams,
    seed: u64,
    top_k: usize,
) -> AnalysisReport {
    let n = ranked.n_patients;
    let entries = ranked
        .ranked
        .iter()
        .enumerate()
        .map(|(i, s)| ReportEntry {
            rank: i + 1,
            label: render_action(&s.action, bins),
            action: s.action,
            utility: s.utility,
            pate_tte: s.pate_tte,
            pate_tox: s.pate_tox,
            deltabar: s.deltabar,
            subgroup_size: s.subgroup_size,
            subgroup_pct: 100.0 * s.subgroup_size as f64 / n as f64,
            n_covariates: s.n_covariates,
            in_top: i < top_k,
        })
        .collect();
    AnalysisReport {
        tau: tradeoff.tau,
        tradeoff: *tradeoff,
        utility_params: *params,
        seed,
        n_patients: n,
        top_k,
        entries,
        excluded_empty: ranked
            .excluded_empty
            .iter()
            .map(|a| render_action(a, bins))
            .collect(),
    }
}

/// Plain-text table of the top of the report.
pub fn render_text(report: &AnalysisReport, rows: usize) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "Top {} subgroup reports at tau = {} (delta0 = {}, delta1 = {}, nu = {}, zeta = {}, u0 = {})\n",
        report.top_k,
        report.tau,
        report.tradeoff.delta0,
        report.tradeoff.delta1,
        report.utility_params.nu,
        report.utility_params.zeta,
        report.utility_params.u0,
    ));
    out.push_str(&format!(
        "{:<5} {:<44} {:>9} {:>9} {:>9} {:>9} {:>7}\n",
        "rank", "subgroup", "U", "PATE_tte", "PATE_tox", "deltabar", "size%"
    ));
    for e in report.entries.iter().take(rows) {
        let fmt_opt = |v: Option<f64>| match v {
            Some(x) => format!("{x:+.4}"),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "{:<5} {:<44} {:>9.4} {:>9} {:>9} {:>9} {:>6.1}%\n",
            e.rank,
            truncate(&e.label, 44),
            e.utility,
            fmt_opt(e.pate_tte),
            fmt_opt(e.pate_tox),
            fmt_opt(e.deltabar),
            e.subgroup_pct,
        ));
    }
    out
}

fn truncate(s: &str, width: usize) -> String {
    if s.len() <= width {
        s.to_string()
    } else {
        format!("{}...", &s[..width - 3])
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut file = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> std::io::Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

const OC_HEADER: &str = "scenario,d_eff,d_tox,n,p,censor,reps,failures,truth,tdr,tdr_se,fnr,fpr,fsr,fdr,t1e,accept_mu,accept_sigma";

fn fmt_opt_rate(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Appends one operating-characteristics row to a CSV file, writing the
/// header first when the file is new.
pub fn append_oc_csv(path: &Path, summary: &OCSummary) -> std::io::Result<()> {
    let fresh = !path.exists();
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(file, "{OC_HEADER}")?;
    }
    writeln!(
        file,
        "{},{},{},{},{},{},{},{},{:?},{:.6},{:.6},{},{},{},{},{},{:.4},{:.4}",
        summary.scenario,
        summary.d_eff,
        summary.d_tox,
        summary.n,
        summary.p,
        summary.censor,
        summary.reps,
        summary.failures,
        summary.truth_kind,
        summary.tdr,
        summary.tdr_se,
        fmt_opt_rate(summary.fnr),
        fmt_opt_rate(summary.fpr),
        fmt_opt_rate(summary.fsr),
        fmt_opt_rate(summary.fdr),
        fmt_opt_rate(summary.t1e),
        summary.mean_accept_mu,
        summary.mean_accept_sigma,
    )
}

/// One line of the per-replicate audit log; `run_key` ties the record to
/// the generating configuration so resumed runs ignore stale lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub run_key: String,
    pub outcome: ReplicateOutcome,
}

pub fn append_audit(path: &Path, record: &AuditRecord) -> std::io::Result<()> {
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(file, "{}", serde_json::to_string(record)?)
}

/// Loads completed replicates for one run key from the audit log, if any.
pub fn load_audit(path: &Path, run_key: &str) -> Vec<ReplicateOutcome> {
    let Ok(text) = fs::read_to_string(path) else {
        return Vec::new();
    };
    text.lines()
        .filter_map(|line| serde_json::from_str::<AuditRecord>(line).ok())
        .filter(|r| r.run_key == run_key)
        .map(|r| r.outcome)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::{enumerate_actions, fit_bins, BinCodes, BinPolicy};
    use crate::data::{CovariateMeta, TrialDataset};
    use crate::decision::rank_actions;
    use crate::sim::TruthKind;

    fn toy_report() -> (AnalysisReport, RankedReport) {
        let n = 30;
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let d = TrialDataset::from_parts(
            vec![0; n],
            x,
            vec![CovariateMeta { name: "age".into() }],
            vec![4.0; n],
            vec![1; n],
            None,
        )
        .unwrap();
        let bins = fit_bins(&d, &BinPolicy::new()).unwrap();
        let codes = BinCodes::compute(&d, &bins).unwrap();
        let actions = enumerate_actions(&bins);
        let pcte: Vec<f64> = (0..n).map(|i| 0.3 + 0.005 * i as f64).collect();
        let tradeoff = TradeoffSpec::new(0.2, 0.0, 90.0);
        let params = UtilityParams::new(0.25, 0.15, -0.304);
        let ranked = rank_actions(&actions, &codes, &pcte, None, &tradeoff, &params).unwrap();
        (
            build_report(&ranked, &bins, &tradeoff, &params, 7, 5),
            ranked,
        )
    }

    #[test]
    fn report_round_trips_and_renders() {
        let (report, ranked) = toy_report();
        assert_eq!(report.entries.len(), ranked.ranked.len());
        assert!(report.entries[0].in_top);
        assert!(!report.entries[6].in_top);
        let json = serde_json::to_string(&report).unwrap();
        let back: AnalysisReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
        let text = render_text(&report, 5);
        assert!(text.contains("rank"));
        assert!(text.lines().count() >= 6);
    }

    #[test]
    fn oc_csv_appends_with_single_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("oc.csv");
        let summary = OCSummary {
            scenario: "E2".into(),
            d_eff: 0.4,
            d_tox: 0.0,
            n: 400,
            p: 10,
            censor: 0.1,
            reps: 10,
            failures: 0,
            truth_kind: TruthKind::Subgroup,
            true_action: crate::actions::SubgroupAction::All,
            tdr: 0.8,
            tdr_se: 0.1265,
            fnr: Some(0.1),
            fpr: Some(0.0),
            fsr: Some(0.1),
            fdr: Some(0.2),
            t1e: None,
            mean_accept_mu: 0.19,
            mean_accept_sigma: 0.57,
        };
        append_oc_csv(&path, &summary).unwrap();
        append_oc_csv(&path, &summary).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("scenario,"));
        assert!(text.contains("E2,0.4,0,400,10,0.1,10,0"));
    }

    #[test]
    fn audit_log_filters_by_run_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replicates.jsonl");
        let outcome = ReplicateOutcome {
            replicate: 3,
            null_in_top: true,
            all_in_top: false,
            true_in_top: false,
            best_action: crate::actions::SubgroupAction::Null,
            max_nonnull_utility: -0.41,
            accept_mu: 0.2,
            accept_sigma: 0.6,
        };
        append_audit(&path, &AuditRecord { run_key: "a".into(), outcome: outcome.clone() }).unwrap();
        let mut other = outcome.clone();
        other.replicate = 4;
        append_audit(&path, &AuditRecord { run_key: "b".into(), outcome: other }).unwrap();
        let got = load_audit(&path, "a");
        assert_eq!(got, vec![outcome]);
        assert!(load_audit(&path, "missing").is_empty());
        assert!(load_audit(Path::new("/nonexistent/file"), "a").is_empty());
    }
}
