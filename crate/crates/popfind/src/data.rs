//! Trial data records: per-patient arm, covariates, censored log event
//! times, and optional binary toxicity flags, plus the complete-data
//! bookkeeping used when censored times are imputed.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: time must be strictly positive, got {value}")]
    NonPositiveTime { row: usize, value: f64 },
    #[error("row {row}: column `{column}` must be 0 or 1, got `{value}`")]
    InvalidFlag { row: usize, column: String, value: String },
    #[error("missing covariate values in column(s) {columns:?} at rows {rows:?}")]
    MissingCovariates { columns: Vec<String>, rows: Vec<usize> },
    #[error("row {row}: cannot parse `{value}` in column `{column}` as a number")]
    ParseNumber { row: usize, column: String, value: String },
    #[error("dataset has no rows")]
    Empty,
    #[error("field lengths disagree: {0}")]
    LengthMismatch(String),
    #[error("kappa offset for uncensored patient {0}")]
    KappaForUncensored(usize),
    #[error("negative kappa offset {value} for patient {index}")]
    NegativeKappa { index: usize, value: f64 },
    #[error("kappa offsets must cover every censored patient exactly once (patient {0})")]
    KappaCoverage(usize),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Name (and nothing else, for now) attached to each covariate column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateMeta {
    pub name: String,
}

/// Column mapping for tabular ingestion. Any column not named here is
/// treated as a covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub arm: String,
    pub time: String,
    pub event: String,
    pub tox: Option<String>,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        Self {
            arm: "arm".into(),
            time: "time".into(),
            event: "event".into(),
            tox: Some("tox".into()),
        }
    }
}

/// All observed data for one randomized trial. Times are stored as natural
/// logs at ingestion; downstream code never sees the raw time scale.
///
/// Immutable after construction and safe to share across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    n: usize,
    p: usize,
    /// Arm indicator per patient: 0 = control, 1 = new treatment.
    pub z: Vec<u8>,
    /// Covariate matrix, row-major n x p.
    x: Vec<f64>,
    /// Log observed time (event or censoring) per patient.
    pub y_obs_log: Vec<f64>,
    /// Event indicator: 1 = event observed, 0 = right-censored.
    pub gamma: Vec<u8>,
    /// Binary toxicity indicator, when collected.
    pub y_tox: Option<Vec<u8>>,
    pub covariates: Vec<CovariateMeta>,
}

impl TrialDataset {
    /// Builds a dataset from already-logged times, validating the invariants.
    pub fn from_parts(
        z: Vec<u8>,
        x: Vec<f64>,
        covariates: Vec<CovariateMeta>,
        y_obs_log: Vec<f64>,
        gamma: Vec<u8>,
        y_tox: Option<Vec<u8>>,
    ) -> Result<Self, DataError> {
        let n = z.len();
        if n == 0 {
            return Err(DataError::Empty);
        }
        let p = covariates.len();
        if x.len() != n * p {
            return Err(DataError::LengthMismatch(format!(
                "x has {} entries, expected {}",
                x.len(),
                n * p
            )));
        }
        if y_obs_log.len() != n || gamma.len() != n {
            return Err(DataError::LengthMismatch("y_obs_log/gamma".into()));
        }
        if let Some(t) = &y_tox {
            if t.len() != n {
                return Err(DataError::LengthMismatch("y_tox".into()));
            }
            if let Some(i) = t.iter().position(|v| *v > 1) {
                return Err(DataError::InvalidFlag {
                    row: i,
                    column: "tox".into(),
                    value: t[i].to_string(),
                });
            }
        }
        for (i, v) in z.iter().enumerate() {
            if *v > 1 {
                return Err(DataError::InvalidFlag {
                    row: i,
                    column: "arm".into(),
                    value: v.to_string(),
                });
            }
        }
        for (i, v) in gamma.iter().enumerate() {
            if *v > 1 {
                return Err(DataError::InvalidFlag {
                    row: i,
                    column: "event".into(),
                    value: v.to_string(),
                });
            }
        }
        if let Some(i) = y_obs_log.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonPositiveTime {
                row: i,
                value: y_obs_log[i].exp(),
            });
        }
        Ok(Self {
            n,
            p,
            z,
            x,
            y_obs_log,
            gamma,
            y_tox,
            covariates,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Covariate j for patient i.
    #[inline]
    pub fn covariate(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.p + j]
    }

    /// Covariate row for patient i.
    #[inline]
    pub fn covariate_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    /// Column j as a fresh vector.
    pub fn covariate_column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.covariate(i, j)).collect()
    }

    pub fn censored_indices(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.gamma[i] == 0).collect()
    }

    pub fn n_censored(&self) -> usize {
        self.gamma.iter().filter(|&&g| g == 0).count()
    }

    /// Reads a dataset from a CSV file. Required columns: arm (0/1), time
    /// (strictly positive), event (0/1); a toxicity column is picked up when
    /// present; every remaining column is a covariate. Missing covariate
    /// cells are a hard error listing the offending rows.
    pub fn from_csv_path(path: &Path, schema: &DatasetSchema) -> Result<Self, DataError> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, schema)
    }

    pub fn from_csv_reader<R: Read>(reader: R, schema: &DatasetSchema) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_string()).collect();
        let find = |name: &str| headers.iter().position(|h| h == name);
        let arm_col = find(&schema.arm).ok_or_else(|| DataError::MissingColumn(schema.arm.clone()))?;
        let time_col = find(&schema.time).ok_or_else(|| DataError::MissingColumn(schema.time.clone()))?;
        let event_col = find(&schema.event).ok_or_else(|| DataError::MissingColumn(schema.event.clone()))?;
        let tox_col = schema.tox.as_ref().and_then(|t| find(t));
        let special: Vec<usize> = [Some(arm_col), Some(time_col), Some(event_col), tox_col]
            .into_iter()
            .flatten()
            .collect();
        let cov_cols: Vec<usize> = (0..headers.len()).filter(|c| !special.contains(c)).collect();

        let mut z = Vec::new();
        let mut y_obs_log = Vec::new();
        let mut gamma = Vec::new();
        let mut y_tox: Vec<u8> = Vec::new();
        let mut x = Vec::new();
        let mut missing_rows: Vec<usize> = Vec::new();
        let mut missing_cols: Vec<String> = Vec::new();

        for (row_idx, record) in rdr.records().enumerate() {
            let record = record?;
            let row = row_idx + 1; // 1-based data rows, excluding the header
            z.push(parse_flag(&record, arm_col, &headers[arm_col], row)?);
            let time = parse_number(&record, time_col, &headers[time_col], row)?;
            if time <= 0.0 || !time.is_finite() {
                return Err(DataError::NonPositiveTime { row, value: time });
            }
            y_obs_log.push(time.ln());
            gamma.push(parse_flag(&record, event_col, &headers[event_col], row)?);
            if let Some(tc) = tox_col {
                y_tox.push(parse_flag(&record, tc, &headers[tc], row)?);
            }
            let mut row_missing = false;
            for &c in &cov_cols {
                let raw = record.get(c).unwrap_or("");
                if raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan") {
                    row_missing = true;
                    if !missing_cols.contains(&headers[c]) {
                        missing_cols.push(headers[c].clone());
                    }
                    x.push(f64::NAN);
                } else {
                    x.push(parse_number(&record, c, &headers[c], row)?);
                }
            }
            if row_missing {
                missing_rows.push(row);
            }
        }
        if !missing_rows.is_empty() {
            return Err(DataError::MissingCovariates {
                columns: missing_cols,
                rows: missing_rows,
            });
        }
        let covariates = cov_cols
            .iter()
            .map(|&c| CovariateMeta { name: headers[c].clone() })
            .collect();
        Self::from_parts(z, x, covariates, y_obs_log, gamma, if tox_col.is_some() { Some(y_tox) } else { None })
    }
}

fn parse_number(record: &csv::StringRecord, col: usize, name: &str, row: usize) -> Result<f64, DataError> {
    let raw = record.get(col).unwrap_or("");
    raw.parse::<f64>().map_err(|_| DataError::ParseNumber {
        row,
        column: name.to_string(),
        value: raw.to_string(),
    })
}

fn parse_flag(record: &csv::StringRecord, col: usize, name: &str, row: usize) -> Result<u8, DataError> {
    let raw = record.get(col).unwrap_or("");
    match raw {
        "0" => Ok(0),
        "1" => Ok(1),
        _ => Err(DataError::InvalidFlag {
            row,
            column: name.to_string(),
            value: raw.to_string(),
        }),
    }
}

/// Complete log times: observed values for events, observed value plus a
/// nonnegative offset for censored patients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteData {
    pub y_log: Vec<f64>,
    /// Offset per patient; zero (and meaningless) at uncensored indices.
    pub kappa: Vec<f64>,
}

/// Applies censoring offsets: y_log[i] = y_obs_log[i] + kappa for censored
/// patients, the observed value otherwise. `kappa` must name every censored
/// patient exactly once and no uncensored one.
pub fn complete_data(d: &TrialDataset, kappa: &[(usize, f64)]) -> Result<CompleteData, DataError> {
    let mut y_log = d.y_obs_log.clone();
    let mut offsets = vec![0.0; d.n()];
    let mut seen = vec![false; d.n()];
    for &(i, k) in kappa {
        if d.gamma[i] == 1 {
            return Err(DataError::KappaForUncensored(i));
        }
        if k < 0.0 {
            return Err(DataError::NegativeKappa { index: i, value: k });
        }
        if seen[i] {
            return Err(DataError::KappaCoverage(i));
        }
        seen[i] = true;
        offsets[i] = k;
        y_log[i] += k;
    }
    for i in d.censored_indices() {
        if !seen[i] {
            return Err(DataError::KappaCoverage(i));
        }
    }
    Ok(CompleteData { y_log, kappa: offsets })
}

/// One retained MCMC draw: cached counterfactual mean values for every
/// patient under both arms, the residual variance, and the residual
/// snapshot needed to rebuild the predictive residual distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraw {
    /// Mean log time (or probit linear predictor) per patient at arm 0.
    pub eta_ctrl: Vec<f64>,
    /// Same at arm 1.
    pub eta_trt: Vec<f64>,
    pub sigma2: f64,
    /// Current residuals y_log - eta at the observed arms; empty for models
    /// that do not carry a residual distribution (toxicity probit).
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawMeta {
    pub n: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Residual-prior settings the draws were produced under; needed to
    /// rebuild predictive distributions from residual snapshots.
    pub pt_depth: usize,
    pub pt_c: f64,
}

/// Thinned post-burn-in Monte Carlo representation of the joint posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub draws: Vec<PosteriorDraw>,
    pub meta: DrawMeta,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_csv() -> &'static str {
        "arm,time,event,tox,age,bmi\n1,90,1,0,55,22.1\n0,30,0,1,61,27.9\n1,120,1,0,47,31.0\n"
    }

    #[test]
    fn load_logs_times_and_flags() {
        let d = TrialDataset::from_csv_reader(toy_csv().as_bytes(), &DatasetSchema::default()).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.p(), 2);
        assert_eq!(d.z, vec![1, 0, 1]);
        assert!((d.y_obs_log[0] - 90f64.ln()).abs() < 1e-12);
        assert!((d.y_obs_log[0] - 4.499809670330265).abs() < 1e-9);
        assert_eq!(d.gamma, vec![1, 0, 1]);
        assert_eq!(d.y_tox.as_ref().unwrap(), &vec![0, 1, 0]);
        assert_eq!(d.covariates[0].name, "age");
        assert_eq!(d.covariate(1, 1), 27.9);
    }

    #[test]
    fn censored_row_gets_gamma_zero() {
        let d = TrialDataset::from_csv_reader(toy_csv().as_bytes(), &DatasetSchema::default()).unwrap();
        assert_eq!(d.censored_indices(), vec![1]);
    }

    #[test]
    fn missing_covariates_error_lists_rows() {
        let csv = "arm,time,event,bmi\n1,90,1,22.1\n0,30,0,\n1,45,1,NA\n";
        let err = TrialDataset::from_csv_reader(csv.as_bytes(), &DatasetSchema::default()).unwrap_err();
        match err {
            DataError::MissingCovariates { columns, rows } => {
                assert_eq!(columns, vec!["bmi".to_string()]);
                assert_eq!(rows, vec![2, 3]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn nonpositive_time_rejected() {
        let csv = "arm,time,event\n1,0,1\n";
        let err = TrialDataset::from_csv_reader(csv.as_bytes(), &DatasetSchema::default()).unwrap_err();
        assert!(matches!(err, DataError::NonPositiveTime { row: 1, .. }));
    }

    #[test]
    fn missing_required_column_rejected() {
        let csv = "arm,event\n1,1\n";
        let err = TrialDataset::from_csv_reader(csv.as_bytes(), &DatasetSchema::default()).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(c) if c == "time"));
    }

    #[test]
    fn complete_data_identity_for_events() {
        let d = TrialDataset::from_csv_reader(toy_csv().as_bytes(), &DatasetSchema::default()).unwrap();
        let c = complete_data(&d, &[(1, 0.3)]).unwrap();
        assert_eq!(c.y_log[0], d.y_obs_log[0]);
        assert!((c.y_log[1] - (d.y_obs_log[1] + 0.3)).abs() < 1e-15);
        assert_eq!(c.y_log[2], d.y_obs_log[2]);
    }

    #[test]
    fn complete_data_zero_offsets() {
        let d = TrialDataset::from_csv_reader(toy_csv().as_bytes(), &DatasetSchema::default()).unwrap();
        let c = complete_data(&d, &[(1, 0.0)]).unwrap();
        assert_eq!(c.y_log, d.y_obs_log);
    }

    #[test]
    fn complete_data_rejects_bad_kappa() {
        let d = TrialDataset::from_csv_reader(toy_csv().as_bytes(), &DatasetSchema::default()).unwrap();
        assert!(matches!(
            complete_data(&d, &[(1, -0.1)]),
            Err(DataError::NegativeKappa { .. })
        ));
        assert!(matches!(
            complete_data(&d, &[(0, 0.1), (1, 0.0)]),
            Err(DataError::KappaForUncensored(0))
        ));
        assert!(matches!(complete_data(&d, &[]), Err(DataError::KappaCoverage(1))));
    }

    #[test]
    fn complete_data_monotone_in_kappa() {
        let d = TrialDataset::from_csv_reader(toy_csv().as_bytes(), &DatasetSchema::default()).unwrap();
        let a = complete_data(&d, &[(1, 0.2)]).unwrap();
        let b = complete_data(&d, &[(1, 0.5)]).unwrap();
        assert!(b.y_log[1] > a.y_log[1]);
        assert_eq!(a.y_log[0], b.y_log[0]);
        assert_eq!(a.y_log[2], b.y_log[2]);
    }

    #[test]
    fn dataset_round_trips_through_serde() {
        let d = TrialDataset::from_csv_reader(toy_csv().as_bytes(), &DatasetSchema::default()).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        let back: TrialDataset = serde_json::from_str(&json).unwrap();
        assert_eq!(d, back);
    }
}
