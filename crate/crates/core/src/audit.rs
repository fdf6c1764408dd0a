//! End-to-end audit: cross-validate (or take external predictions), run every
//! metric, and assemble the report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::calibration::{bin_scores, DEFAULT_BINS};
use crate::cv::{
    accuracy_summary, collect_metric_distributions, make_folds_with, run_cv, CvConfig, FoldStrategy,
};
use crate::data::{Dataset, Group, GroupLabels};
use crate::error::{Error, Result};
use crate::model::{LogisticParams, PredictionRecord, DEFAULT_THRESHOLD};
use crate::report::{
    AuditReport, ConfigEcho, ContingencySection, Conventions, DataSummary, SampleSize, TableOrReason,
    SCHEMA_VERSION, TOOL_VERSION,
};
use crate::similarity::{counterfactual_flip, counterfactual_tables, matching_tables, PairedTables};
use crate::stats::DEFAULT_ALPHA;
use crate::suite::{evaluate_all, SuiteInputs};

pub const DEFAULT_FOLDS: usize = 250;
pub const BUILTIN_MODEL_ID: &str = "logistic_regression";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub k: usize,
    pub alpha: f64,
    pub bins: usize,
    pub seed: u64,
    pub threshold: f64,
    pub include_group: bool,
    pub zero_group_weight: bool,
    pub fold_strategy: FoldStrategy,
    /// Learner settings; seed and threshold are taken from the fields above.
    pub params: LogisticParams,
    /// Skip nearest-neighbor matching (quadratic in the row count).
    pub skip_matching: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            k: DEFAULT_FOLDS,
            alpha: DEFAULT_ALPHA,
            bins: DEFAULT_BINS,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            include_group: true,
            zero_group_weight: false,
            fold_strategy: FoldStrategy::Shuffle,
            params: LogisticParams::default(),
            skip_matching: false,
        }
    }
}

impl AuditConfig {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if self.bins < 2 {
            return Err(Error::Config(format!("need at least 2 bins, got {}", self.bins)));
        }
        Ok(())
    }

    fn echo(&self, input: &str, k: usize) -> ConfigEcho {
        ConfigEcho {
            input: input.to_string(),
            k,
            alpha: self.alpha,
            bins: self.bins,
            seed: self.seed,
            threshold: self.threshold,
            include_group: self.include_group,
            zero_group_weight: self.zero_group_weight,
            fold_strategy: self.fold_strategy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditOutcome {
    pub report: AuditReport,
    pub predictions: Vec<PredictionRecord>,
}

/// Cross-validates the built-in learner on `dataset` and audits its held-out
/// predictions.
pub fn audit_dataset(dataset: &Dataset, config: &AuditConfig) -> Result<AuditOutcome> {
    config.validate()?;
    let plan = make_folds_with(dataset, config.k, config.seed, config.fold_strategy)?;
    let cv = CvConfig {
        params: LogisticParams {
            seed: config.seed,
            threshold: config.threshold,
            ..config.params
        },
        include_group: config.include_group,
        zero_group_weight: config.zero_group_weight,
    };
    log::info!("cross-validating {} rows over {} folds", dataset.len(), config.k);
    let run = run_cv(dataset, &plan, &cv)?;
    let counterfactual = if config.include_group {
        counterfactual_flip(dataset, &run.records, &run.models)
            .map(|f| counterfactual_tables(&f))
            .map_err(|e| e.to_string())
    } else {
        Err(Error::GroupNotAFeature.to_string())
    };
    let matching = matching_or_reason(Some(dataset), &run.records, config);
    let report = assemble(
        BUILTIN_MODEL_ID,
        "dataset",
        dataset.labels(),
        Some(dataset),
        &run.records,
        counterfactual,
        matching,
        config,
    )?;
    Ok(AuditOutcome {
        report,
        predictions: run.records,
    })
}

/// Audits predictions produced elsewhere. Matching needs the feature rows in
/// `dataset`; counterfactual rescoring is unavailable without a model.
pub fn audit_predictions(
    model_id: &str,
    records: Vec<PredictionRecord>,
    labels: &GroupLabels,
    dataset: Option<&Dataset>,
    config: &AuditConfig,
) -> Result<AuditOutcome> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::InvalidArgument("prediction file has no rows".into()));
    }
    for g in [Group::Protected, Group::Unprotected] {
        if !records.iter().any(|r| r.group == g) {
            return Err(Error::EmptyGroup {
                group: labels.label(g).to_string(),
            });
        }
    }
    let counterfactual = Err("external predictions carry no model to rescore".to_string());
    let matching = matching_or_reason(dataset, &records, config);
    let report = assemble(
        model_id,
        "predictions",
        labels,
        dataset,
        &records,
        counterfactual,
        matching,
        config,
    )?;
    Ok(AuditOutcome {
        report,
        predictions: records,
    })
}

fn matching_or_reason(
    dataset: Option<&Dataset>,
    records: &[PredictionRecord],
    config: &AuditConfig,
) -> std::result::Result<PairedTables, String> {
    if config.skip_matching {
        return Err("matching disabled".into());
    }
    let dataset = dataset.ok_or("matching needs the feature data (--data)")?;
    log::info!("matching {} rows to their nearest opposite-group neighbors", records.len());
    matching_tables(dataset, records)
        .map(|(t, _, _)| t)
        .map_err(|e| e.to_string())
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    model_id: &str,
    input: &str,
    labels: &GroupLabels,
    dataset: Option<&Dataset>,
    records: &[PredictionRecord],
    counterfactual: std::result::Result<PairedTables, String>,
    matching: std::result::Result<PairedTables, String>,
    config: &AuditConfig,
) -> Result<AuditReport> {
    let distributions = collect_metric_distributions(records);
    let calibration = bin_scores(records, config.bins)?;
    let inputs = SuiteInputs {
        distributions,
        calibration,
        counterfactual,
        matching,
    };
    let verdicts = evaluate_all(&inputs, config.alpha)?;
    let count = |g: Group| records.iter().filter(|r| r.group == g).count();
    let sample_sizes: BTreeMap<_, _> = inputs
        .distributions
        .samples
        .iter()
        .map(|(s, v)| {
            (
                *s,
                SampleSize {
                    protected: v.protected.len(),
                    unprotected: v.unprotected.len(),
                },
            )
        })
        .collect();
    let folds = inputs.distributions.folds.len();
    Ok(AuditReport {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        timestamp: String::new(),
        config: config.echo(input, folds),
        conventions: Conventions::default(),
        model_id: model_id.to_string(),
        data: DataSummary {
            rows: records.len(),
            protected_rows: count(Group::Protected),
            unprotected_rows: count(Group::Unprotected),
            protected_label: labels.protected.clone(),
            unprotected_label: labels.unprotected.clone(),
            feature_names: dataset.map(|d| d.feature_names().to_vec()).unwrap_or_default(),
            folds,
        },
        accuracy: accuracy_summary(records),
        verdicts,
        calibration: inputs.calibration,
        contingency: ContingencySection {
            counterfactual: TableOrReason::from_result(&inputs.counterfactual),
            matching: TableOrReason::from_result(&inputs.matching),
        },
        sample_sizes,
        samples: inputs.distributions.samples,
    })
}
