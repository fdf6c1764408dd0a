//! Paired-prediction tests: counterfactual group flips and Mahalanobis
//! nearest-neighbor matching, each summarized as a 2x2 table of
//! (original, comparator) predictions and tested with the binomial mid-p.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Group, Record, FAVORABLE};
use crate::error::{Error, Result};
use crate::model::{design_row, PredictionRecord, TrainedModel};
use crate::stats::{binomial_midp, Tail, TestKind, TestResult, DEFAULT_ALPHA};

/// Relative tolerance on Cholesky pivots below which the covariance is
/// treated as singular.
const PIVOT_TOLERANCE: f64 = 1e-10;

/// Inverse of the pooled sample covariance of `rows`, ridge-regularized by
/// `1e-6 · trace / dim` when the covariance is singular.
pub fn covariance_inverse<X: AsRef<[f64]> + Sync>(rows: &[X]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Matrix(format!("covariance needs at least 2 rows, got {n}")));
    }
    let d = rows[0].as_ref().len();
    if d == 0 {
        return Err(Error::Matrix("no features to match on".into()));
    }
    if let Some(bad) = rows.iter().find(|r| r.as_ref().len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: bad.as_ref().len(),
        });
    }
    let mut mean = DVector::zeros(d);
    for r in rows {
        mean += DVector::from_column_slice(r.as_ref());
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        let c = DVector::from_column_slice(r.as_ref()) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (n - 1) as f64;
    invert_spd(cov)
}

/// Inverts a symmetric positive semi-definite matrix, adding a ridge when it
/// is numerically singular.
pub fn invert_spd(cov: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = cov.nrows();
    if let Some(inv) = try_invert(&cov) {
        return Ok(inv);
    }
    let trace = cov.trace();
    if !trace.is_finite() || trace <= 0.0 {
        return Err(Error::Matrix("features have zero variance".into()));
    }
    let eps = 1e-6 * trace / d as f64;
    let ridged = cov + DMatrix::identity(d, d) * eps;
    try_invert(&ridged).ok_or_else(|| Error::Matrix("covariance is singular after regularization".into()))
}

fn try_invert(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = m.clone().cholesky()?;
    let diag = chol.l_dirty().diagonal();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    if diag.iter().any(|&p| p.is_nan() || p <= PIVOT_TOLERANCE * max) {
        return None;
    }
    let inv = chol.inverse();
    // symmetrize away rounding
    Some((&inv + inv.transpose()) * 0.5)
}

/// sqrt((x − y)ᵀ S⁻¹ (x − y)).
pub fn mahalanobis(x: &[f64], y: &[f64], inv_cov: &DMatrix<f64>) -> Result<f64> {
    let d = inv_cov.nrows();
    if x.len() != d || y.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: if x.len() != d { x.len() } else { y.len() },
        });
    }
    let q = quadratic_form(x, y, inv_cov);
    if q >= 0.0 {
        Ok(q.sqrt())
    } else if q > -1e-10 {
        Ok(0.0)
    } else {
        Err(Error::Matrix(format!("negative quadratic form {q}")))
    }
}

fn quadratic_form(x: &[f64], y: &[f64], inv_cov: &DMatrix<f64>) -> f64 {
    let d = x.len();
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let mut q = 0.0;
    for j in 0..d {
        let col = inv_cov.column(j);
        let mut s = 0.0;
        for i in 0..d {
            s += diff[i] * col[i];
        }
        q += s * diff[j];
    }
    q
}

/// Which group supplies the rows to be matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ProtectedToUnprotected,
    UnprotectedToProtected,
}

impl Direction {
    pub fn source(self) -> Group {
        match self {
            Direction::ProtectedToUnprotected => Group::Protected,
            Direction::UnprotectedToProtected => Group::Unprotected,
        }
    }

    pub fn from_source(group: Group) -> Direction {
        match group {
            Group::Protected => Direction::ProtectedToUnprotected,
            Group::Unprotected => Direction::UnprotectedToProtected,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub source: i64,
    pub matched: i64,
    pub distance: f64,
}

/// Matches each source-group row to its Mahalanobis-nearest row of the other
/// group, with replacement. Ties go to the smaller row id. Output is ordered
/// by source row id.
pub fn nearest_neighbor_match(
    records: &[Record],
    inv_cov: &DMatrix<f64>,
    direction: Direction,
) -> Result<Vec<MatchPair>> {
    let source_group = direction.source();
    let mut sources: Vec<&Record> = records.iter().filter(|r| r.group == source_group).collect();
    let mut targets: Vec<&Record> = records.iter().filter(|r| r.group != source_group).collect();
    if targets.is_empty() {
        return Err(Error::EmptyTargetGroup);
    }
    sources.sort_unstable_by_key(|r| r.row_id);
    targets.sort_unstable_by_key(|r| r.row_id);
    let d = inv_cov.nrows();
    if let Some(bad) = records.iter().find(|r| r.features.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: bad.features.len(),
        });
    }

    sources
        .par_iter()
        .map(|s| {
            let mut best: Option<(f64, i64)> = None;
            // targets ascend by row id, so a strict improvement keeps the smallest id on ties
            for t in &targets {
                let q = quadratic_form(&s.features, &t.features, inv_cov);
                if best.is_none_or(|(bq, _)| q < bq) {
                    best = Some((q, t.row_id));
                }
            }
            let (_, matched) = best.expect("target group is non-empty");
            let target = targets[targets.binary_search_by_key(&matched, |t| t.row_id).unwrap()];
            Ok(MatchPair {
                source: s.row_id,
                matched,
                distance: mahalanobis(&s.features, &target.features, inv_cov)?,
            })
        })
        .collect()
}

/// Prediction of a row before and after its group indicator is toggled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipOutcome {
    pub row_id: i64,
    pub group: Group,
    pub original: u8,
    pub flipped: u8,
}

/// Toggles the trailing group indicator of a model design row.
pub fn toggle_group_indicator(x: &mut [f64]) {
    if let Some(last) = x.last_mut() {
        *last = 1.0 - *last;
    }
}

/// Rescores every row with its group indicator toggled, using the model of the
/// fold that held the row out. The models must take the group indicator as
/// their last feature.
pub fn counterfactual_flip(
    dataset: &Dataset,
    records: &[PredictionRecord],
    models: &[TrainedModel],
) -> Result<Vec<FlipOutcome>> {
    if models.iter().any(|m| m.feature_dim() != dataset.feature_dim() + 1) {
        return Err(Error::GroupNotAFeature);
    }
    let rows: HashMap<i64, &Record> = dataset.rows().iter().map(|r| (r.row_id, r)).collect();
    records
        .iter()
        .map(|p| {
            let row = rows.get(&p.row_id).ok_or_else(|| {
                Error::InvalidArgument(format!("prediction row {} is not in the dataset", p.row_id))
            })?;
            let model = models.get(p.fold_id).ok_or_else(|| {
                Error::InvalidArgument(format!("no model for fold {}", p.fold_id))
            })?;
            let mut x = design_row(row, true);
            let original = model.label(model.predict_score(&x)?);
            toggle_group_indicator(&mut x);
            let flipped = model.label(model.predict_score(&x)?);
            Ok(FlipOutcome {
                row_id: p.row_id,
                group: p.group,
                original,
                flipped,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable2x2 {
    pub original_label: String,
    pub comparator_label: String,
    /// n_ab: original prediction a, comparator prediction b.
    pub n00: u64,
    pub n01: u64,
    pub n10: u64,
    pub n11: u64,
}

impl ContingencyTable2x2 {
    pub fn discordant(&self) -> u64 {
        self.n01 + self.n10
    }

    pub fn total(&self) -> u64 {
        self.n00 + self.n01 + self.n10 + self.n11
    }

    pub fn transposed(&self) -> ContingencyTable2x2 {
        ContingencyTable2x2 {
            original_label: self.comparator_label.clone(),
            comparator_label: self.original_label.clone(),
            n00: self.n00,
            n01: self.n10,
            n10: self.n01,
            n11: self.n11,
        }
    }
}

pub fn build_contingency(
    pairs: impl IntoIterator<Item = (u8, u8)>,
    original_label: &str,
    comparator_label: &str,
) -> ContingencyTable2x2 {
    let mut t = ContingencyTable2x2 {
        original_label: original_label.to_string(),
        comparator_label: comparator_label.to_string(),
        n00: 0,
        n01: 0,
        n10: 0,
        n11: 0,
    };
    for (a, b) in pairs {
        match (a, b) {
            (0, 0) => t.n00 += 1,
            (0, _) => t.n01 += 1,
            (_, 0) => t.n10 += 1,
            _ => t.n11 += 1,
        }
    }
    t
}

/// Mid-p test on the discordant cells with k = n01 (original favorable,
/// comparator unfavorable). The statistic carried is k.
pub fn mcnemar_midp_test(table: &ContingencyTable2x2) -> Result<TestResult> {
    debug_assert_eq!(FAVORABLE, 0);
    let n = table.discordant();
    Ok(TestResult {
        kind: TestKind::McnemarMidP,
        statistic: table.n01 as f64,
        df: None,
        tail: Tail::TwoSided,
        p_value: binomial_midp(table.n01, n)?,
        alpha: DEFAULT_ALPHA,
        degenerate: n == 0,
    })
}

/// One table per source group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedTables {
    pub protected: ContingencyTable2x2,
    pub unprotected: ContingencyTable2x2,
}

impl PairedTables {
    pub fn get(&self, source: Group) -> &ContingencyTable2x2 {
        match source {
            Group::Protected => &self.protected,
            Group::Unprotected => &self.unprotected,
        }
    }
}

/// Whether a table's discordance disadvantages the protected group. Rows from
/// the unprotected group losing the favorable prediction when treated as
/// protected (n01) count against the protected group, and vice versa.
pub fn imbalance_against_protected(source: Group, table: &ContingencyTable2x2) -> std::cmp::Ordering {
    match source {
        Group::Unprotected => table.n01.cmp(&table.n10),
        Group::Protected => table.n10.cmp(&table.n01),
    }
}

pub fn counterfactual_tables(flips: &[FlipOutcome]) -> PairedTables {
    let table = |g: Group| {
        let mut rows: Vec<&FlipOutcome> = flips.iter().filter(|f| f.group == g).collect();
        rows.sort_unstable_by_key(|f| f.row_id);
        build_contingency(rows.iter().map(|f| (f.original, f.flipped)), "original", "counterfactual")
    };
    PairedTables {
        protected: table(Group::Protected),
        unprotected: table(Group::Unprotected),
    }
}

/// Matches both directions on the dataset features and tabulates the source
/// row's prediction against its match's prediction.
pub fn matching_tables(
    dataset: &Dataset,
    predictions: &[PredictionRecord],
) -> Result<(PairedTables, Vec<MatchPair>, Vec<MatchPair>)> {
    let features: Vec<&[f64]> = dataset.rows().iter().map(|r| r.features.as_slice()).collect();
    let inv = covariance_inverse(&features)?;
    let pred: HashMap<i64, u8> = predictions.iter().map(|p| (p.row_id, p.y_pred)).collect();
    let lookup = |id: i64| {
        pred.get(&id)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no prediction for row {id}")))
    };
    let mut out = Vec::with_capacity(2);
    for group in [Group::Protected, Group::Unprotected] {
        let pairs = nearest_neighbor_match(dataset.rows(), &inv, Direction::from_source(group))?;
        let labelled: Vec<(u8, u8)> = pairs
            .iter()
            .map(|p| Ok((lookup(p.source)?, lookup(p.matched)?)))
            .collect::<Result<_>>()?;
        out.push((build_contingency(labelled, "original", "matched"), pairs));
    }
    let (unprot, unprot_pairs) = out.pop().unwrap();
    let (prot, prot_pairs) = out.pop().unwrap();
    Ok((
        PairedTables {
            protected: prot,
            unprotected: unprot,
        },
        prot_pairs,
        unprot_pairs,
    ))
}
