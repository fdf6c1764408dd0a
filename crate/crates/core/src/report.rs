//! Audit report: serializable record of a run plus JSON and Markdown renderers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationTable;
use crate::cv::{AccuracySummary, FoldStrategy, GroupSamples, Statistic};
use crate::error::{Error, Result};
use crate::similarity::{ContingencyTable2x2, PairedTables};
use crate::stats::{Tail, TestKind};
use crate::suite::{MetricVerdict, Verdict};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    /// `dataset` when the tool trained the models, `predictions` otherwise.
    pub input: String,
    pub k: usize,
    pub alpha: f64,
    pub bins: usize,
    pub seed: u64,
    pub threshold: f64,
    pub include_group: bool,
    pub zero_group_weight: bool,
    pub fold_strategy: FoldStrategy,
}

/// Fixed interpretation rules, echoed so a report can be read on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub disparity: String,
    pub favorable_coding: String,
    pub score: String,
    pub tails: String,
    pub undefined_statistics: String,
    pub calibration_bins: String,
    pub calibration_df: String,
    pub well_calibration_edge_rule: String,
    pub well_calibration_df: String,
    pub midp: String,
    pub matching: String,
    pub counterfactual: String,
    pub verdicts: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            disparity: "mean(unprotected) - mean(protected) across folds; the t statistic has the same sign".into(),
            favorable_coding: "outcome 0 is favorable; a positive prediction means a favorable prediction".into(),
            score: "model score is P(unfavorable); prediction is unfavorable when score >= threshold".into(),
            tails: "each one-sided metric names the tail that counts against the protected group; the opposite tail is reported as reverse disparity".into(),
            undefined_statistics: "folds where a statistic has a zero denominator are omitted from its sample".into(),
            calibration_bins: "equal-width score bins [i/k, (i+1)/k), last bin closed at 1; bins need protected rows and unprotected favorable outcomes".into(),
            calibration_df: "usable bins - 1".into(),
            well_calibration_edge_rule: "a group's favorable rate inside the bin's interval [1 - upper, 1 - lower] contributes 0; outside it is compared with the nearest edge (absolute distance)".into(),
            well_calibration_df: "2 * usable bins - 1".into(),
            midp: "k = n01 (original favorable, comparator unfavorable), n = n01 + n10, two-sided mid-p on min(k, n - k); each group tested at the full alpha".into(),
            matching: "Mahalanobis distance on model features excluding group and outcome, pooled covariance, nearest opposite-group row with replacement, ties to the smaller row_id".into(),
            counterfactual: "each row rescored by its hold-out fold's model with the group indicator toggled".into(),
            verdicts: "violation if any component's violation-tail p < alpha / components; otherwise reverse_disparity if any opposite-tail p is below it".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub rows: usize,
    pub protected_rows: usize,
    pub unprotected_rows: usize,
    pub protected_label: String,
    pub unprotected_label: String,
    pub feature_names: Vec<String>,
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableOrReason {
    pub tables: Option<PairedTables>,
    pub reason: Option<String>,
}

impl TableOrReason {
    pub fn from_result(r: &std::result::Result<PairedTables, String>) -> Self {
        match r {
            Ok(t) => TableOrReason {
                tables: Some(t.clone()),
                reason: None,
            },
            Err(e) => TableOrReason {
                tables: None,
                reason: Some(e.clone()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencySection {
    pub counterfactual: TableOrReason,
    pub matching: TableOrReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSize {
    pub protected: usize,
    pub unprotected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub tool_version: String,
    /// RFC 3339; the only field that differs between identical runs.
    pub timestamp: String,
    pub config: ConfigEcho,
    pub conventions: Conventions,
    pub model_id: String,
    pub data: DataSummary,
    pub accuracy: AccuracySummary,
    pub verdicts: Vec<MetricVerdict>,
    pub calibration: CalibrationTable,
    pub contingency: ContingencySection,
    pub sample_sizes: BTreeMap<Statistic, SampleSize>,
    /// Per-fold statistic values behind every t-test.
    pub samples: BTreeMap<Statistic, GroupSamples>,
}

const TOP_LEVEL_FIELDS: [&str; 13] = [
    "schema_version",
    "tool_version",
    "timestamp",
    "config",
    "conventions",
    "model_id",
    "data",
    "accuracy",
    "verdicts",
    "calibration",
    "contingency",
    "sample_sizes",
    "samples",
];

impl AuditReport {
    pub fn verdict(&self, id: crate::suite::MetricId) -> Option<&MetricVerdict> {
        self.verdicts.iter().find(|v| v.id == id)
    }

    pub fn violations(&self) -> usize {
        self.verdicts.iter().filter(|v| v.verdict == Verdict::Violation).count()
    }

    /// One-line accuracy summary for console output.
    pub fn accuracy_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        format!(
            "{}: mean held-out accuracy {:.4} over {} folds (protected {}, unprotected {})",
            self.model_id,
            self.accuracy.overall,
            self.data.folds,
            opt(self.accuracy.protected),
            opt(self.accuracy.unprotected)
        )
    }
}

pub fn render_json(report: &AuditReport) -> Result<String> {
    serde_json::to_string_pretty(report)
        .map_err(|e| Error::InvalidArgument(format!("report serialization failed: {e}")))
}

pub fn write_json(report: &AuditReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = render_json(report)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses a report, returning warnings for top-level fields this version does
/// not know.
pub fn parse_json(text: &str) -> Result<(AuditReport, Vec<String>)> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("report is not valid JSON: {e}")))?;
    let mut warnings = Vec::new();
    if let Some(obj) = value.as_object() {
        for key in obj.keys() {
            if !TOP_LEVEL_FIELDS.contains(&key.as_str()) {
                let w = format!("ignoring unknown report field `{key}`");
                log::warn!("{w}");
                warnings.push(w);
            }
        }
    }
    let report = serde_json::from_value(value)
        .map_err(|e| Error::Config(format!("report does not match schema version {SCHEMA_VERSION}: {e}")))?;
    Ok((report, warnings))
}

pub fn read_json(path: impl AsRef<Path>) -> Result<(AuditReport, Vec<String>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_json(&text)
}

/// p-values below 1e-4 print as `<1e-4`.
pub fn format_p(p: f64) -> String {
    if p < 1e-4 {
        "<1e-4".to_string()
    } else {
        format!("{p:.4}")
    }
}

pub fn format_value(v: f64) -> String {
    format!("{v:.4}")
}

fn tail_name(t: Tail) -> &'static str {
    match t {
        Tail::Left => "left",
        Tail::Right => "right",
        Tail::TwoSided => "two-sided",
    }
}

fn contingency_md(out: &mut String, title: &str, t: &ContingencyTable2x2) {
    let _ = writeln!(out, "#### {title}\n");
    let _ = writeln!(
        out,
        "| {} \\ {} | 0 | 1 |\n|---|---|---|",
        t.original_label, t.comparator_label
    );
    let _ = writeln!(out, "| 0 | {} | {} |", t.n00, t.n01);
    let _ = writeln!(out, "| 1 | {} | {} |\n", t.n10, t.n11);
}

pub fn render_markdown(report: &AuditReport) -> String {
    let mut out = String::new();
    let c = &report.config;
    let d = &report.data;
    let _ = writeln!(out, "# Fairness audit report\n");
    let _ = writeln!(out, "- Model: `{}`", report.model_id);
    let _ = writeln!(
        out,
        "- Rows: {} ({} `{}`, {} `{}`)",
        d.rows, d.protected_rows, d.protected_label, d.unprotected_rows, d.unprotected_label
    );
    let _ = writeln!(
        out,
        "- Folds: {}, alpha: {}, bins: {}, seed: {}, threshold: {}, group feature: {}",
        d.folds, c.alpha, c.bins, c.seed, c.threshold, c.include_group
    );
    let _ = writeln!(out, "- {}", report.accuracy_line());
    let _ = writeln!(out, "- Tool version {}, report schema {}\n", report.tool_version, report.schema_version);

    let _ = writeln!(out, "## Conventions\n");
    let conv = &report.conventions;
    for (name, text) in [
        ("Disparity", &conv.disparity),
        ("Favorable coding", &conv.favorable_coding),
        ("Score", &conv.score),
        ("Tails", &conv.tails),
        ("Undefined statistics", &conv.undefined_statistics),
        ("Calibration bins", &conv.calibration_bins),
        ("Calibration df", &conv.calibration_df),
        ("Well-calibration edge rule", &conv.well_calibration_edge_rule),
        ("Well-calibration df", &conv.well_calibration_df),
        ("Mid-p", &conv.midp),
        ("Matching", &conv.matching),
        ("Counterfactual", &conv.counterfactual),
        ("Verdicts", &conv.verdicts),
    ] {
        let _ = writeln!(out, "- {name}: {text}");
    }

    let _ = writeln!(out, "\n## Summary\n\n| Metric | Verdict |\n|---|---|");
    for v in &report.verdicts {
        let _ = writeln!(out, "| {} | {} |", v.id.title(), v.verdict);
    }
    out.push('\n');

    for (i, v) in report.verdicts.iter().enumerate() {
        let _ = writeln!(out, "## {}. {}\n", i + 1, v.id.title());
        let _ = writeln!(
            out,
            "Verdict: **{}** (alpha {} per component)\n",
            v.verdict,
            v.component_alpha
        );
        if let Some(reason) = &v.reason {
            let _ = writeln!(out, "Not evaluable: {reason}\n");
            continue;
        }
        let _ = writeln!(
            out,
            "| Component | Tail | Disparity | Test Statistic | P-Value | Opposite-Tail P-Value |\n|---|---|---|---|---|---|"
        );
        for comp in &v.components {
            let disparity = match (v.kind, comp.disparity) {
                (TestKind::McnemarMidP, _) | (_, None) => "n/a".to_string(),
                (_, Some(x)) => format_value(x),
            };
            let statistic = match v.kind {
                TestKind::McnemarMidP => format!("{}", comp.test.statistic),
                _ => format_value(comp.test.statistic),
            };
            let p = match v.kind {
                TestKind::McnemarMidP => comp.test.p_value,
                _ => comp.violation_p,
            };
            let opposite = comp.reverse_p.map_or("n/a".to_string(), format_p);
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} |",
                comp.label,
                tail_name(comp.test.tail),
                disparity,
                statistic,
                format_p(p),
                opposite
            );
        }
        out.push('\n');
    }

    let _ = writeln!(out, "## Calibration bins\n");
    let _ = writeln!(
        out,
        "| Bin | Lower | Upper | Protected | Protected favorable | Unprotected | Unprotected favorable | Lambda |\n|---|---|---|---|---|---|---|---|"
    );
    for (i, b) in report.calibration.bins.iter().enumerate() {
        let _ = writeln!(
            out,
            "| {} | {:.2} | {:.2} | {} | {} | {} | {} | {} |",
            i,
            b.lower,
            b.upper,
            b.alpha_p,
            b.theta_p,
            b.beta_u,
            b.gamma_u,
            b.lambda.map_or("n/a".to_string(), format_value)
        );
    }
    out.push('\n');

    let _ = writeln!(out, "## Contingency tables\n");
    for (name, section) in [
        ("Counterfactual", &report.contingency.counterfactual),
        ("Nearest neighbor", &report.contingency.matching),
    ] {
        let _ = writeln!(out, "### {name}\n");
        match (&section.tables, &section.reason) {
            (Some(t), _) => {
                contingency_md(&mut out, &format!("{} rows", d.protected_label), &t.protected);
                contingency_md(&mut out, &format!("{} rows", d.unprotected_label), &t.unprotected);
            }
            (None, reason) => {
                let _ = writeln!(out, "Not available: {}\n", reason.as_deref().unwrap_or("unknown"));
            }
        }
    }

    let _ = writeln!(out, "## Sample sizes\n\n| Statistic | Protected | Unprotected |\n|---|---|---|");
    for (s, n) in &report.sample_sizes {
        let _ = writeln!(out, "| {} | {} | {} |", s, n.protected, n.unprotected);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_p_values_have_a_floor() {
        assert_eq!(format_p(0.0), "<1e-4");
        assert_eq!(format_p(2.7e-107), "<1e-4");
        assert_eq!(format_p(0.0001), "0.0001");
        assert_eq!(format_p(0.0891), "0.0891");
    }
}
