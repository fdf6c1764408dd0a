//! K-fold cross-validation and per-fold, per-group statistics.
//!
//! Each fold's held-out predictions give one observation of every group
//! statistic, so K folds yield a sample of size (up to) K per group. These
//! samples feed the two-sample tests in [`crate::suite`]. Fold statistics come
//! from models with overlapping training sets and are therefore not
//! independent; no correction for that is applied.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Group, Record, FAVORABLE, UNFAVORABLE};
use crate::error::{Error, Result};
use crate::model::{design_row, train_logistic, LogisticParams, PredictionRecord, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldStrategy {
    /// Uniform random permutation, then contiguous chunks.
    #[default]
    Shuffle,
    /// Shuffle within each outcome class, then deal rows round-robin.
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    k: usize,
    seed: u64,
    strategy: FoldStrategy,
    assignments: BTreeMap<i64, usize>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fold_of(&self, row_id: i64) -> Option<usize> {
        self.assignments.get(&row_id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

pub fn make_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    make_folds_with(dataset, k, seed, FoldStrategy::Shuffle)
}

/// Assigns every row to one of `k` folds. Rows are taken in row-id order
/// before shuffling, so the plan does not depend on the dataset's row order.
pub fn make_folds_with(
    dataset: &Dataset,
    k: usize,
    seed: u64,
    strategy: FoldStrategy,
) -> Result<FoldPlan> {
    let n = dataset.len();
    if k < 2 || k > n {
        return Err(Error::FoldRange { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<(i64, u8)> = dataset.rows().iter().map(|r| (r.row_id, r.outcome)).collect();
    rows.sort_unstable();

    let mut assignments = BTreeMap::new();
    match strategy {
        FoldStrategy::Shuffle => {
            rows.shuffle(&mut rng);
            let base = n / k;
            let extra = n % k;
            let mut start = 0;
            for fold in 0..k {
                let size = base + usize::from(fold < extra);
                for &(id, _) in &rows[start..start + size] {
                    assignments.insert(id, fold);
                }
                start += size;
            }
        }
        FoldStrategy::Stratified => {
            let mut ordered = Vec::with_capacity(n);
            for class in [FAVORABLE, UNFAVORABLE] {
                let mut part: Vec<i64> = rows.iter().filter(|r| r.1 == class).map(|r| r.0).collect();
                part.shuffle(&mut rng);
                ordered.extend(part);
            }
            for (i, id) in ordered.into_iter().enumerate() {
                assignments.insert(id, i % k);
            }
        }
    }
    Ok(FoldPlan {
        k,
        seed,
        strategy,
        assignments,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub params: LogisticParams,
    /// Append the group indicator to the model features.
    pub include_group: bool,
    /// Force the group indicator's coefficient to zero after training.
    pub zero_group_weight: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            params: LogisticParams::default(),
            include_group: true,
            zero_group_weight: false,
        }
    }
}

/// Held-out predictions plus the model trained for each fold.
#[derive(Debug, Clone, PartialEq)]
pub struct CvRun {
    pub records: Vec<PredictionRecord>,
    pub models: Vec<TrainedModel>,
    pub include_group: bool,
}

impl CvRun {
    pub fn model_for_fold(&self, fold: usize) -> Option<&TrainedModel> {
        self.models.get(fold)
    }
}

/// Trains one model per fold on the other folds and predicts the held-out
/// rows. Records come back ordered by fold, then row id.
pub fn run_cv(dataset: &Dataset, plan: &FoldPlan, config: &CvConfig) -> Result<CvRun> {
    if plan.len() != dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "fold plan covers {} rows but the dataset has {}",
            plan.len(),
            dataset.len()
        )));
    }
    let mut rows: Vec<(usize, &Record)> = Vec::with_capacity(dataset.len());
    for r in dataset.rows() {
        let fold = plan.fold_of(r.row_id).ok_or_else(|| {
            Error::InvalidArgument(format!("row {} is missing from the fold plan", r.row_id))
        })?;
        rows.push((fold, r));
    }
    // Canonical order makes training independent of the input row order.
    rows.sort_unstable_by_key(|(_, r)| r.row_id);

    let per_fold: Vec<Result<(TrainedModel, Vec<PredictionRecord>)>> = (0..plan.k())
        .into_par_iter()
        .map(|fold| {
            let (train_x, train_y): (Vec<Vec<f64>>, Vec<u8>) = rows
                .iter()
                .filter(|(f, _)| *f != fold)
                .map(|(_, r)| (design_row(r, config.include_group), r.outcome))
                .unzip();
            if !(train_y.contains(&FAVORABLE) && train_y.contains(&UNFAVORABLE)) {
                return Err(Error::FoldMissingClass { fold });
            }
            let params = LogisticParams {
                seed: config.params.seed.wrapping_add(fold as u64),
                ..config.params
            };
            let mut model = train_logistic(&train_x, &train_y, &params)?;
            if config.include_group && config.zero_group_weight {
                model = model.with_coefficient(model.feature_dim() - 1, 0.0);
            }
            let mut out = Vec::new();
            for (_, r) in rows.iter().filter(|(f, _)| *f == fold) {
                let score = model.predict_score(&design_row(r, config.include_group))?;
                out.push(PredictionRecord {
                    row_id: r.row_id,
                    fold_id: fold,
                    y_true: r.outcome,
                    y_pred: model.label(score),
                    score,
                    group: r.group,
                });
            }
            Ok((model, out))
        })
        .collect();

    let mut records = Vec::with_capacity(dataset.len());
    let mut models = Vec::with_capacity(plan.k());
    for result in per_fold {
        let (model, recs) = result?;
        models.push(model);
        records.extend(recs);
    }
    Ok(CvRun {
        records,
        models,
        include_group: config.include_group,
    })
}

/// Group-conditional statistics available as test samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// P(ŷ = favorable)
    Ppr,
    /// P(ŷ = favorable | y = favorable)
    Tpr,
    /// P(ŷ = favorable | y = unfavorable)
    Fpr,
    /// P(ŷ = unfavorable | y = favorable)
    Fnr,
    /// P(y = favorable | ŷ = favorable)
    Ppv,
    /// P(y = unfavorable | ŷ = unfavorable)
    Npv,
    Accuracy,
    /// FN / FP
    FnFpRatio,
    /// E(score | y = favorable)
    MeanScoreFavorable,
    /// E(score | y = unfavorable)
    MeanScoreUnfavorable,
}

impl Statistic {
    pub const ALL: [Statistic; 10] = [
        Statistic::Ppr,
        Statistic::Tpr,
        Statistic::Fpr,
        Statistic::Fnr,
        Statistic::Ppv,
        Statistic::Npv,
        Statistic::Accuracy,
        Statistic::FnFpRatio,
        Statistic::MeanScoreFavorable,
        Statistic::MeanScoreUnfavorable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Statistic::Ppr => "ppr",
            Statistic::Tpr => "tpr",
            Statistic::Fpr => "fpr",
            Statistic::Fnr => "fnr",
            Statistic::Ppv => "ppv",
            Statistic::Npv => "npv",
            Statistic::Accuracy => "accuracy",
            Statistic::FnFpRatio => "fn_fp_ratio",
            Statistic::MeanScoreFavorable => "mean_score_favorable",
            Statistic::MeanScoreUnfavorable => "mean_score_unfavorable",
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Statistic::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown statistic `{s}`")))
    }
}

/// Confusion counts with "positive" meaning the favorable outcome.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    /// ŷ favorable, y favorable
    pub tp: u64,
    /// ŷ favorable, y unfavorable
    pub fp: u64,
    /// ŷ unfavorable, y unfavorable
    pub tn: u64,
    /// ŷ unfavorable, y favorable
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFoldStats {
    pub fold_id: usize,
    pub group: Group,
    pub counts: ConfusionCounts,
    pub ppr: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub accuracy: Option<f64>,
    pub fn_fp_ratio: Option<f64>,
    pub mean_score_favorable: Option<f64>,
    pub mean_score_unfavorable: Option<f64>,
}

impl GroupFoldStats {
    fn from_records<'a>(
        fold_id: usize,
        group: Group,
        records: impl Iterator<Item = &'a PredictionRecord>,
    ) -> GroupFoldStats {
        let mut c = ConfusionCounts::default();
        let (mut score_fav, mut score_unfav) = (0.0, 0.0);
        for r in records {
            match (r.y_pred, r.y_true) {
                (FAVORABLE, FAVORABLE) => c.tp += 1,
                (FAVORABLE, _) => c.fp += 1,
                (_, FAVORABLE) => c.fn_ += 1,
                _ => c.tn += 1,
            }
            if r.y_true == FAVORABLE {
                score_fav += r.score;
            } else {
                score_unfav += r.score;
            }
        }
        let favorable = c.tp + c.fn_;
        let unfavorable = c.fp + c.tn;
        GroupFoldStats {
            fold_id,
            group,
            ppr: ratio(c.tp + c.fp, c.total()),
            tpr: ratio(c.tp, favorable),
            fpr: ratio(c.fp, unfavorable),
            fnr: ratio(c.fn_, favorable),
            ppv: ratio(c.tp, c.tp + c.fp),
            npv: ratio(c.tn, c.tn + c.fn_),
            accuracy: ratio(c.tp + c.tn, c.total()),
            fn_fp_ratio: ratio(c.fn_, c.fp),
            mean_score_favorable: (favorable > 0).then(|| score_fav / favorable as f64),
            mean_score_unfavorable: (unfavorable > 0).then(|| score_unfav / unfavorable as f64),
            counts: c,
        }
    }

    pub fn get(&self, statistic: Statistic) -> Option<f64> {
        match statistic {
            Statistic::Ppr => self.ppr,
            Statistic::Tpr => self.tpr,
            Statistic::Fpr => self.fpr,
            Statistic::Fnr => self.fnr,
            Statistic::Ppv => self.ppv,
            Statistic::Npv => self.npv,
            Statistic::Accuracy => self.accuracy,
            Statistic::FnFpRatio => self.fn_fp_ratio,
            Statistic::MeanScoreFavorable => self.mean_score_favorable,
            Statistic::MeanScoreUnfavorable => self.mean_score_unfavorable,
        }
    }
}

/// Statistics of one fold, split by group. Records from other folds are ignored.
pub fn grouped_confusion_stats(
    fold_id: usize,
    records: &[PredictionRecord],
) -> (GroupFoldStats, GroupFoldStats) {
    let of = |g: Group| {
        GroupFoldStats::from_records(
            fold_id,
            g,
            records.iter().filter(move |r| r.fold_id == fold_id && r.group == g),
        )
    };
    (of(Group::Protected), of(Group::Unprotected))
}

/// Per-fold values of one statistic for both groups. Folds where the
/// statistic is undefined are omitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupSamples {
    pub protected: Vec<f64>,
    pub unprotected: Vec<f64>,
    pub protected_folds: Vec<usize>,
    pub unprotected_folds: Vec<usize>,
}

impl GroupSamples {
    pub fn sample(&self, group: Group) -> &[f64] {
        match group {
            Group::Protected => &self.protected,
            Group::Unprotected => &self.unprotected,
        }
    }

    pub fn is_sufficient(&self) -> bool {
        self.protected.len() >= 2 && self.unprotected.len() >= 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDistributions {
    pub folds: Vec<usize>,
    pub samples: BTreeMap<Statistic, GroupSamples>,
}

impl MetricDistributions {
    /// Samples for one statistic, or an insufficient-sample error when either
    /// group has fewer than two defined folds.
    pub fn get(&self, statistic: Statistic) -> Result<&GroupSamples> {
        match self.samples.get(&statistic) {
            Some(s) if s.is_sufficient() => Ok(s),
            _ => Err(Error::InsufficientSample {
                statistic: statistic.name().to_string(),
            }),
        }
    }
}

/// Per-fold group statistics for every fold id present in `records`, in fold order.
pub fn fold_statistics(records: &[PredictionRecord]) -> Vec<(GroupFoldStats, GroupFoldStats)> {
    let folds: BTreeSet<usize> = records.iter().map(|r| r.fold_id).collect();
    let mut by_fold: BTreeMap<usize, Vec<PredictionRecord>> = BTreeMap::new();
    for r in records {
        by_fold.entry(r.fold_id).or_default().push(r.clone());
    }
    folds
        .into_iter()
        .map(|f| grouped_confusion_stats(f, &by_fold[&f]))
        .collect()
}

/// Builds the protected and unprotected samples of every statistic from a
/// complete cross-validation output.
pub fn collect_metric_distributions(records: &[PredictionRecord]) -> MetricDistributions {
    let stats = fold_statistics(records);
    let mut samples: BTreeMap<Statistic, GroupSamples> = BTreeMap::new();
    for statistic in Statistic::ALL {
        let entry = samples.entry(statistic).or_default();
        for (prot, unprot) in &stats {
            if let Some(v) = prot.get(statistic) {
                entry.protected.push(v);
                entry.protected_folds.push(prot.fold_id);
            }
            if let Some(v) = unprot.get(statistic) {
                entry.unprotected.push(v);
                entry.unprotected_folds.push(unprot.fold_id);
            }
        }
    }
    MetricDistributions {
        folds: stats.iter().map(|(p, _)| p.fold_id).collect(),
        samples,
    }
}

/// Mean held-out accuracy across folds, overall and per group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub overall: f64,
    pub protected: Option<f64>,
    pub unprotected: Option<f64>,
}

pub fn accuracy_summary(records: &[PredictionRecord]) -> AccuracySummary {
    let mut per_fold: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
    for r in records {
        let e = per_fold.entry(r.fold_id).or_default();
        e.0 += u64::from(r.y_pred == r.y_true);
        e.1 += 1;
    }
    let overall = per_fold.values().map(|(c, n)| *c as f64 / *n as f64).sum::<f64>()
        / per_fold.len().max(1) as f64;
    let dist = collect_metric_distributions(records);
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let acc = &dist.samples[&Statistic::Accuracy];
    AccuracySummary {
        overall,
        protected: mean(&acc.protected),
        unprotected: mean(&acc.unprotected),
    }
}
