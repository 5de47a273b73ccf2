//! Covariate discretization and the finite space of candidate subgroup
//! reports.
//!
//! Continuous covariates are trichotomized at their empirical terciles;
//! categorical covariates keep (or merge to) two or three categories. A
//! report names one or two covariates and, for each, a proper subset of its
//! categories; two-covariate reports come in rectangular (intersection) and
//! L-shaped (union) forms. Two sentinels complete the space: `Null` (no
//! benefit anywhere) and `All` (uniform benefit).

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::data::TrialDataset;
use crate::stats::empirical_quantile;

#[derive(Debug, Error)]
pub enum ActionError {
    #[error("covariate `{0}` is constant; cannot form bins")]
    ConstantCovariate(String),
    #[error("covariate `{0}` has {1} distinct values; continuous trichotomization needs at least 3")]
    TooFewDistinct(String, usize),
    #[error("covariate `{0}` has {1} levels; supply an explicit merge map with 2 or 3 groups")]
    NeedsMergeMap(String, usize),
    #[error("merge map for `{0}` must have 2 or 3 groups, got {1}")]
    BadGroupCount(String, usize),
    #[error("merge map for `{0}` does not cover observed level {1}")]
    UncoveredLevel(String, f64),
    #[error("merge map for `{0}` lists level {1} twice")]
    DuplicateLevel(String, f64),
    #[error("membership is undefined for the null report")]
    NullMembership,
    #[error("covariate index {0} out of range")]
    CovariateIndex(usize),
}

/// How one covariate is discretized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BinKind {
    /// Trichotomized at the empirical terciles; bins are
    /// (-inf, q_lo), [q_lo, q_hi), [q_hi, inf) — a value equal to a cutoff
    /// joins the upper bin.
    Continuous { q_lo: f64, q_hi: f64 },
    /// Two or three groups of raw level codes.
    Categorical { groups: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovBin {
    pub name: String,
    pub kind: BinKind,
    /// Optional display labels, aligned with categorical groups.
    pub labels: Option<Vec<String>>,
}

impl CovBin {
    /// Number of bins (2 or 3).
    pub fn d(&self) -> usize {
        match &self.kind {
            BinKind::Continuous { .. } => 3,
            BinKind::Categorical { groups } => groups.len(),
        }
    }

    /// Bin index of a raw covariate value.
    pub fn bin(&self, value: f64) -> Option<usize> {
        match &self.kind {
            BinKind::Continuous { q_lo, q_hi } => Some(if value < *q_lo {
                0
            } else if value < *q_hi {
                1
            } else {
                2
            }),
            BinKind::Categorical { groups } => groups
                .iter()
                .position(|g| g.iter().any(|l| *l == value)),
        }
    }
}

/// Per-covariate override used while fitting bins.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariatePolicy {
    /// Force continuous trichotomization even for few-valued columns.
    #[serde(default)]
    pub continuous: bool,
    /// Explicit categorical merge: each inner list is one merged group.
    #[serde(default)]
    pub merge: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
}

/// Covariate-name-keyed overrides; anything absent gets the default rule.
pub type BinPolicy = BTreeMap<String, CovariatePolicy>;

/// Fitted discretization for every covariate in a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateBins {
    pub per_cov: Vec<CovBin>,
}

impl CovariateBins {
    pub fn p(&self) -> usize {
        self.per_cov.len()
    }
}

/// Fits per-covariate bins. Defaults: 2 distinct values -> binary
/// categorical, 3 distinct -> three-level categorical, otherwise continuous
/// trichotomization at the empirical terciles (ceil(n/3)-th and
/// ceil(2n/3)-th order statistics). Columns needing a different treatment
/// take a [`CovariatePolicy`] override; categorical columns with more than
/// three levels always need an explicit merge map.
pub fn fit_bins(d: &TrialDataset, policy: &BinPolicy) -> Result<CovariateBins, ActionError> {
    let mut per_cov = Vec::with_capacity(d.p());
    for j in 0..d.p() {
        let name = d.covariates[j].name.clone();
        let col = d.covariate_column(j);
        let mut distinct = col.clone();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(ActionError::ConstantCovariate(name));
        }
        let pol = policy.get(&name).cloned().unwrap_or_default();
        let kind = if let Some(groups) = &pol.merge {
            validate_merge(&name, groups, &distinct)?;
            BinKind::Categorical { groups: groups.clone() }
        } else if !pol.continuous && distinct.len() <= 3 {
            BinKind::Categorical {
                groups: distinct.iter().map(|v| vec![*v]).collect(),
            }
        } else {
            if distinct.len() < 3 {
                return Err(ActionError::TooFewDistinct(name, distinct.len()));
            }
            BinKind::Continuous {
                q_lo: empirical_quantile(&col, 1.0 / 3.0),
                q_hi: empirical_quantile(&col, 2.0 / 3.0),
            }
        };
        per_cov.push(CovBin {
            name,
            kind,
            labels: pol.labels,
        });
    }
    Ok(CovariateBins { per_cov })
}

fn validate_merge(name: &str, groups: &[Vec<f64>], distinct: &[f64]) -> Result<(), ActionError> {
    if !(2..=3).contains(&groups.len()) {
        return Err(ActionError::BadGroupCount(name.to_string(), groups.len()));
    }
    let mut seen: Vec<f64> = Vec::new();
    for g in groups {
        for l in g {
            if seen.iter().any(|s| s == l) {
                return Err(ActionError::DuplicateLevel(name.to_string(), *l));
            }
            seen.push(*l);
        }
    }
    for v in distinct {
        if !seen.iter().any(|s| s == v) {
            return Err(ActionError::UncoveredLevel(name.to_string(), *v));
        }
    }
    Ok(())
}

/// Precomputed bin index per patient and covariate, for fast membership
/// tests while scoring thousands of actions.
#[derive(Debug, Clone)]
pub struct BinCodes {
    n: usize,
    p: usize,
    codes: Vec<u8>,
}

impl BinCodes {
    pub fn compute(d: &TrialDataset, bins: &CovariateBins) -> Result<Self, ActionError> {
        let (n, p) = (d.n(), d.p());
        let mut codes = vec![0u8; n * p];
        for j in 0..p {
            let cb = &bins.per_cov[j];
            for i in 0..n {
                let v = d.covariate(i, j);
                codes[i * p + j] = cb
                    .bin(v)
                    .ok_or(ActionError::UncoveredLevel(cb.name.clone(), v))? as u8;
            }
        }
        Ok(Self { n, p, codes })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u8] {
        &self.codes[i * self.p..(i + 1) * self.p]
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// A nonempty proper subset of a covariate's 2 or 3 categories, as a bitmask
/// (bit b set = category b retained).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Subset(pub u8);

impl Subset {
    #[inline]
    pub fn contains(self, bin: usize) -> bool {
        self.0 & (1 << bin) != 0
    }
}

/// The admissible retained-category subsets in canonical order. For three
/// categories: the three singletons, then {M1,M2}, {M2,M3}, {M1,M3}; the
/// full set is never a subgroup. For two categories: the two singletons.
pub fn admissible_subsets(d: usize) -> &'static [Subset] {
    const D3: [Subset; 6] = [
        Subset(0b001),
        Subset(0b010),
        Subset(0b100),
        Subset(0b011),
        Subset(0b110),
        Subset(0b101),
    ];
    const D2: [Subset; 2] = [Subset(0b01), Subset(0b10)];
    match d {
        2 => &D2,
        3 => &D3,
        _ => panic!("bins must have 2 or 3 categories, got {d}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    /// Intersection of the two covariate conditions.
    Rectangular,
    /// Union of the two covariate conditions.
    LShaped,
}

/// One candidate subgroup report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubgroupAction {
    /// No treatment benefit anywhere.
    Null,
    /// Uniform benefit across the whole population.
    All,
    OneCov {
        cov: usize,
        subset: Subset,
    },
    TwoCov {
        cov_a: usize,
        cov_b: usize,
        subset_a: Subset,
        subset_b: Subset,
        shape: Shape,
    },
}

impl SubgroupAction {
    /// Number of covariates naming the subgroup (0 for `All`; `Null` has no
    /// subgroup at all).
    pub fn n_covariates(&self) -> usize {
        match self {
            SubgroupAction::Null | SubgroupAction::All => 0,
            SubgroupAction::OneCov { .. } => 1,
            SubgroupAction::TwoCov { .. } => 2,
        }
    }
}

/// Enumerates the full action space in deterministic order: `Null`, `All`,
/// all one-covariate reports by (covariate, subset index), then all
/// two-covariate reports by (pair, subset indices, shape).
pub fn enumerate_actions(bins: &CovariateBins) -> Vec<SubgroupAction> {
    let p = bins.p();
    let mut actions = vec![SubgroupAction::Null, SubgroupAction::All];
    for j in 0..p {
        for &s in admissible_subsets(bins.per_cov[j].d()) {
            actions.push(SubgroupAction::OneCov { cov: j, subset: s });
        }
    }
    for j in 0..p {
        for k in (j + 1)..p {
            for &sj in admissible_subsets(bins.per_cov[j].d()) {
                for &sk in admissible_subsets(bins.per_cov[k].d()) {
                    for shape in [Shape::Rectangular, Shape::LShaped] {
                        actions.push(SubgroupAction::TwoCov {
                            cov_a: j,
                            cov_b: k,
                            subset_a: sj,
                            subset_b: sk,
                            shape,
                        });
                    }
                }
            }
        }
    }
    actions
}

/// Membership test against precomputed bin codes. `Null` is not a subgroup;
/// callers must not pass it here.
#[inline]
pub fn membership_coded(codes_row: &[u8], a: &SubgroupAction) -> bool {
    match a {
        SubgroupAction::Null => panic!("membership is undefined for the null report"),
        SubgroupAction::All => true,
        SubgroupAction::OneCov { cov, subset } => subset.contains(codes_row[*cov] as usize),
        SubgroupAction::TwoCov {
            cov_a,
            cov_b,
            subset_a,
            subset_b,
            shape,
        } => {
            let in_a = subset_a.contains(codes_row[*cov_a] as usize);
            let in_b = subset_b.contains(codes_row[*cov_b] as usize);
            match shape {
                Shape::Rectangular => in_a && in_b,
                Shape::LShaped => in_a || in_b,
            }
        }
    }
}

/// Membership test for a raw covariate row.
pub fn membership(x: &[f64], a: &SubgroupAction, bins: &CovariateBins) -> Result<bool, ActionError> {
    let bin_of = |j: usize| -> Result<usize, ActionError> {
        let cb = bins.per_cov.get(j).ok_or(ActionError::CovariateIndex(j))?;
        cb.bin(x[j]).ok_or(ActionError::UncoveredLevel(cb.name.clone(), x[j]))
    };
    match a {
        SubgroupAction::Null => Err(ActionError::NullMembership),
        SubgroupAction::All => Ok(true),
        SubgroupAction::OneCov { cov, subset } => Ok(subset.contains(bin_of(*cov)?)),
        SubgroupAction::TwoCov {
            cov_a,
            cov_b,
            subset_a,
            subset_b,
            shape,
        } => {
            let in_a = subset_a.contains(bin_of(*cov_a)?);
            let in_b = subset_b.contains(bin_of(*cov_b)?);
            Ok(match shape {
                Shape::Rectangular => in_a && in_b,
                Shape::LShaped => in_a || in_b,
            })
        }
    }
}

/// Human-readable label for one covariate condition, e.g. `bmi >= Q67` or
/// `tn (Y)`.
fn render_condition(bins: &CovariateBins, cov: usize, subset: Subset) -> String {
    let cb = &bins.per_cov[cov];
    match &cb.kind {
        BinKind::Continuous { .. } => {
            let name = &cb.name;
            match subset.0 {
                0b001 => format!("{name} < Q33"),
                0b010 => format!("Q33 <= {name} < Q67"),
                0b100 => format!("{name} >= Q67"),
                0b011 => format!("{name} < Q67"),
                0b110 => format!("{name} >= Q33"),
                0b101 => format!("{name} < Q33 or {name} >= Q67"),
                m => format!("{name} in mask {m:#05b}"),
            }
        }
        BinKind::Categorical { groups } => {
            let label = |g: usize| -> String {
                if let Some(labels) = &cb.labels {
                    if let Some(l) = labels.get(g) {
                        return l.clone();
                    }
                }
                groups[g]
                    .iter()
                    .map(|v| format!("{v}"))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let picked: Vec<String> = (0..groups.len())
                .filter(|g| subset.contains(*g))
                .map(label)
                .collect();
            format!("{} ({})", cb.name, picked.join("/"))
        }
    }
}

/// Renders an action for reports.
pub fn render_action(a: &SubgroupAction, bins: &CovariateBins) -> String {
    match a {
        SubgroupAction::Null => "null".to_string(),
        SubgroupAction::All => "all".to_string(),
        SubgroupAction::OneCov { cov, subset } => render_condition(bins, *cov, *subset),
        SubgroupAction::TwoCov {
            cov_a,
            cov_b,
            subset_a,
            subset_b,
            shape,
        } => {
            let joiner = match shape {
                Shape::Rectangular => "and",
                Shape::LShaped => "or",
            };
            format!(
                "[{}] {} [{}]",
                render_condition(bins, *cov_a, *subset_a),
                joiner,
                render_condition(bins, *cov_b, *subset_b)
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CovariateMeta;

    fn dataset_with_columns(cols: Vec<(&str, Vec<f64>)>) -> TrialDataset {
        let n = cols[0].1.len();
        let p = cols.len();
        let mut x = vec![0.0; n * p];
        for (j, (_, col)) in cols.iter().enumerate() {
            for i in 0..n {
                x[i * p + j] = col[i];
            }
        }
        let covariates = cols
            .iter()
            .map(|(name, _)| CovariateMeta { name: name.to_string() })
            .collect();
        TrialDataset::from_parts(
            vec![0; n],
            x,
            covariates,
            vec![0.0; n],
            vec![1; n],
            None,
        )
        .unwrap()
    }

    #[test]
    fn terciles_of_1_to_300_are_the_100th_and_200th_values() {
        let col: Vec<f64> = (1..=300).map(|i| i as f64).collect();
        let d = dataset_with_columns(vec![("v", col)]);
        let bins = fit_bins(&d, &BinPolicy::new()).unwrap();
        match bins.per_cov[0].kind {
            BinKind::Continuous { q_lo, q_hi } => {
                assert_eq!(q_lo, 100.0);
                assert_eq!(q_hi, 200.0);
            }
            _ => panic!("expected continuous"),
        }
    }

    #[test]
    fn binary_column_becomes_two_categories() {
        let col = vec![0.0, 1.0, 0.0, 1.0, 1.0];
        let d = dataset_with_columns(vec![("flag", col)]);
        let bins = fit_bins(&d, &BinPolicy::new()).unwrap();
        let cb = &bins.per_cov[0];
        assert_eq!(cb.d(), 2);
        assert_eq!(cb.bin(0.0), Some(0));
        assert_eq!(cb.bin(1.0), Some(1));
    }

    #[test]
    fn normal_sample_terciles_near_theory() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let col: Vec<f64> = (0..20_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let d = dataset_with_columns(vec![("x", col)]);
        let bins = fit_bins(&d, &BinPolicy::new()).unwrap();
        match bins.per_cov[0].kind {
            BinKind::Continuous { q_lo, q_hi } => {
                // Phi^-1(1/3) = -0.4307; the sample value should be close.
                assert!((q_lo + 0.4307).abs() < 0.04, "q_lo = {q_lo}");
                assert!((q_hi - 0.4307).abs() < 0.04, "q_hi = {q_hi}");
            }
            _ => panic!("expected continuous"),
        }
    }

    #[test]
    fn constant_column_rejected() {
        let d = dataset_with_columns(vec![("c", vec![2.0; 10])]);
        assert!(matches!(
            fit_bins(&d, &BinPolicy::new()),
            Err(ActionError::ConstantCovariate(_))
        ));
    }

    #[test]
    fn merge_map_validation() {
        let col = vec![0.0, 1.0, 2.0, 3.0, 0.0, 1.0, 2.0, 3.0];
        let d = dataset_with_columns(vec![("lvl", col)]);
        let mut policy = BinPolicy::new();
        policy.insert(
            "lvl".into(),
            CovariatePolicy {
                merge: Some(vec![vec![0.0, 1.0], vec![2.0], vec![3.0]]),
                ..Default::default()
            },
        );
        let bins = fit_bins(&d, &policy).unwrap();
        assert_eq!(bins.per_cov[0].d(), 3);
        assert_eq!(bins.per_cov[0].bin(1.0), Some(0));
        assert_eq!(bins.per_cov[0].bin(3.0), Some(2));

        let mut bad = BinPolicy::new();
        bad.insert(
            "lvl".into(),
            CovariatePolicy {
                merge: Some(vec![vec![0.0, 1.0], vec![2.0]]),
                ..Default::default()
            },
        );
        assert!(matches!(fit_bins(&d, &bad), Err(ActionError::UncoveredLevel(_, v)) if v == 3.0));
    }

    #[test]
    fn boundary_value_joins_upper_bin() {
        let col: Vec<f64> = (1..=9).map(|i| i as f64).collect();
        let d = dataset_with_columns(vec![("x", col)]);
        let bins = fit_bins(&d, &BinPolicy::new()).unwrap();
        let (q_lo, q_hi) = match bins.per_cov[0].kind {
            BinKind::Continuous { q_lo, q_hi } => (q_lo, q_hi),
            _ => unreachable!(),
        };
        assert_eq!(bins.per_cov[0].bin(q_lo), Some(1));
        assert_eq!(bins.per_cov[0].bin(q_hi), Some(2));
        // x1 equal to the lower cutoff is a member of {M2, M3}.
        let a = SubgroupAction::OneCov { cov: 0, subset: Subset(0b110) };
        assert!(membership(&[q_lo], &a, &bins).unwrap());
    }

    #[test]
    fn lshaped_is_union() {
        let col1: Vec<f64> = (1..=9).map(|i| i as f64).collect();
        let col2: Vec<f64> = (1..=9).rev().map(|i| i as f64).collect();
        let d = dataset_with_columns(vec![("a", col1), ("b", col2)]);
        let bins = fit_bins(&d, &BinPolicy::new()).unwrap();
        let a = SubgroupAction::TwoCov {
            cov_a: 0,
            cov_b: 1,
            subset_a: Subset(0b100), // {M3} on a
            subset_b: Subset(0b001), // {M1} on b
            shape: Shape::LShaped,
        };
        // Row with a in M1 but b in M1: union holds through b.
        assert!(membership(&[1.0, 1.0], &a, &bins).unwrap());
        // Same row under the rectangular shape fails.
        let r = SubgroupAction::TwoCov {
            cov_a: 0,
            cov_b: 1,
            subset_a: Subset(0b100),
            subset_b: Subset(0b001),
            shape: Shape::Rectangular,
        };
        assert!(!membership(&[1.0, 1.0], &r, &bins).unwrap());
    }

    #[test]
    fn membership_all_and_null() {
        let d = dataset_with_columns(vec![("x", (1..=9).map(|i| i as f64).collect())]);
        let bins = fit_bins(&d, &BinPolicy::new()).unwrap();
        assert!(membership(&[5.0], &SubgroupAction::All, &bins).unwrap());
        assert!(matches!(
            membership(&[5.0], &SubgroupAction::Null, &bins),
            Err(ActionError::NullMembership)
        ));
    }

    #[test]
    fn action_counts_match_combinatorics() {
        // p = 10, all trichotomized: 2 + 6*10 + 2*36*45 = 3302.
        let cols: Vec<(String, Vec<f64>)> = (0..10)
            .map(|j| (format!("x{j}"), (1..=30).map(|i| (i * (j + 1)) as f64).collect()))
            .collect();
        let cols_ref: Vec<(&str, Vec<f64>)> = cols.iter().map(|(n, c)| (n.as_str(), c.clone())).collect();
        let d = dataset_with_columns(cols_ref);
        let bins = fit_bins(&d, &BinPolicy::new()).unwrap();
        let actions = enumerate_actions(&bins);
        assert_eq!(actions.len(), 3302);

        // p = 1: 2 + 6 = 8.
        let d1 = dataset_with_columns(vec![("x", (1..=30).map(|i| i as f64).collect())]);
        let b1 = fit_bins(&d1, &BinPolicy::new()).unwrap();
        assert_eq!(enumerate_actions(&b1).len(), 8);

        // p = 2, one binary + one trichotomized: 2 + (2 + 6) + 2*(2*6) = 34.
        let d2 = dataset_with_columns(vec![
            ("flag", (0..30).map(|i| (i % 2) as f64).collect()),
            ("x", (1..=30).map(|i| i as f64).collect()),
        ]);
        let b2 = fit_bins(&d2, &BinPolicy::new()).unwrap();
        assert_eq!(enumerate_actions(&b2).len(), 34);
    }

    #[test]
    fn enumeration_is_deterministic_and_duplicate_free() {
        let d = dataset_with_columns(vec![
            ("a", (1..=30).map(|i| i as f64).collect()),
            ("b", (1..=30).map(|i| (i * 7 % 31) as f64).collect()),
        ]);
        let bins = fit_bins(&d, &BinPolicy::new()).unwrap();
        let a1 = enumerate_actions(&bins);
        let a2 = enumerate_actions(&bins);
        assert_eq!(a1, a2);
        let mut set = std::collections::HashSet::new();
        for a in &a1 {
            assert!(set.insert(*a), "duplicate action {a:?}");
        }
        assert_eq!(a1[0], SubgroupAction::Null);
        assert_eq!(a1[1], SubgroupAction::All);
    }

    #[test]
    fn tercile_subgroup_sizes_near_n_over_3() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for n in [300usize, 301, 302] {
            let col: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let d = dataset_with_columns(vec![("x", col)]);
            let bins = fit_bins(&d, &BinPolicy::new()).unwrap();
            let codes = BinCodes::compute(&d, &bins).unwrap();
            for subset in [Subset(0b001), Subset(0b010), Subset(0b100)] {
                let a = SubgroupAction::OneCov { cov: 0, subset };
                let size = (0..n).filter(|&i| membership_coded(codes.row(i), &a)).count();
                let third = n / 3;
                assert!(
                    size >= third.saturating_sub(1) && size <= third + 2,
                    "n={n} subset={subset:?} size={size}"
                );
            }
        }
    }

    #[test]
    fn rectangular_implies_lshaped() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 200;
        let d = dataset_with_columns(vec![
            ("a", (0..n).map(|_| rng.random::<f64>()).collect()),
            ("b", (0..n).map(|_| rng.random::<f64>()).collect()),
        ]);
        let bins = fit_bins(&d, &BinPolicy::new()).unwrap();
        let codes = BinCodes::compute(&d, &bins).unwrap();
        for &sa in admissible_subsets(3) {
            for &sb in admissible_subsets(3) {
                let rect = SubgroupAction::TwoCov {
                    cov_a: 0,
                    cov_b: 1,
                    subset_a: sa,
                    subset_b: sb,
                    shape: Shape::Rectangular,
                };
                let ell = SubgroupAction::TwoCov {
                    cov_a: 0,
                    cov_b: 1,
                    subset_a: sa,
                    subset_b: sb,
                    shape: Shape::LShaped,
                };
                for i in 0..n {
                    if membership_coded(codes.row(i), &rect) {
                        assert!(membership_coded(codes.row(i), &ell));
                    }
                }
            }
        }
    }

    #[test]
    fn every_value_maps_to_exactly_one_bin() {
        let col: Vec<f64> = (1..=50).map(|i| i as f64).collect();
        let d = dataset_with_columns(vec![("x", col.clone())]);
        let bins = fit_bins(&d, &BinPolicy::new()).unwrap();
        for v in col {
            let b = bins.per_cov[0].bin(v).unwrap();
            assert!(b < 3);
        }
    }

    #[test]
    fn renders_conditions_like_reports() {
        let d = dataset_with_columns(vec![
            ("bmi", (1..=30).map(|i| i as f64).collect()),
            ("tn", (0..30).map(|i| (i % 2) as f64).collect()),
        ]);
        let mut policy = BinPolicy::new();
        policy.insert(
            "tn".into(),
            CovariatePolicy {
                labels: Some(vec!["N".into(), "Y".into()]),
                ..Default::default()
            },
        );
        let bins = fit_bins(&d, &policy).unwrap();
        let a = SubgroupAction::OneCov { cov: 0, subset: Subset(0b100) };
        assert_eq!(render_action(&a, &bins), "bmi >= Q67");
        let b = SubgroupAction::OneCov { cov: 1, subset: Subset(0b10) };
        assert_eq!(render_action(&b, &bins), "tn (Y)");
        let two = SubgroupAction::TwoCov {
            cov_a: 0,
            cov_b: 1,
            subset_a: Subset(0b110),
            subset_b: Subset(0b10),
            shape: Shape::Rectangular,
        };
        assert_eq!(render_action(&two, &bins), "[bmi >= Q33] and [tn (Y)]");
    }
}
