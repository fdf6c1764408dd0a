//! The fourteen fairness metrics and their verdicts.
//!
//! Disparity is always `mean(unprotected) − mean(protected)` and the t-test
//! statistic carries the same sign. Each one-sided metric declares the tail in
//! which a disparity counts against the protected group; a significant result
//! in the opposite tail is reported as a reverse disparity.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::calibration::{calibration_chi2, well_calibration_chi2, CalibrationTable};
use crate::cv::{MetricDistributions, Statistic};
use crate::data::Group;
use crate::error::Result;
use crate::similarity::{imbalance_against_protected, mcnemar_midp_test, PairedTables};
use crate::stats::{bonferroni, t_p_value, welch_t, Tail, TestKind, TestResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    GroupFairness,
    PredictiveParity,
    PredictiveEquality,
    EqualOpportunity,
    EqualizedOdds,
    ConditionalUseAccuracy,
    OverallAccuracy,
    TreatmentEquality,
    Calibration,
    WellCalibration,
    BalancePositive,
    BalanceNegative,
    CausalDiscrimination,
    FairnessThroughAwareness,
}

impl MetricId {
    pub fn name(self) -> &'static str {
        match self {
            MetricId::GroupFairness => "group_fairness",
            MetricId::PredictiveParity => "predictive_parity",
            MetricId::PredictiveEquality => "predictive_equality",
            MetricId::EqualOpportunity => "equal_opportunity",
            MetricId::EqualizedOdds => "equalized_odds",
            MetricId::ConditionalUseAccuracy => "conditional_use_accuracy",
            MetricId::OverallAccuracy => "overall_accuracy",
            MetricId::TreatmentEquality => "treatment_equality",
            MetricId::Calibration => "calibration",
            MetricId::WellCalibration => "well_calibration",
            MetricId::BalancePositive => "balance_positive",
            MetricId::BalanceNegative => "balance_negative",
            MetricId::CausalDiscrimination => "causal_discrimination",
            MetricId::FairnessThroughAwareness => "fairness_through_awareness",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            MetricId::GroupFairness => "Group Fairness",
            MetricId::PredictiveParity => "Predictive Parity",
            MetricId::PredictiveEquality => "Predictive Equality",
            MetricId::EqualOpportunity => "Equal Opportunity",
            MetricId::EqualizedOdds => "Equalized Odds",
            MetricId::ConditionalUseAccuracy => "Conditional Use Accuracy Equality",
            MetricId::OverallAccuracy => "Overall Accuracy Equality",
            MetricId::TreatmentEquality => "Treatment Equality",
            MetricId::Calibration => "Calibration",
            MetricId::WellCalibration => "Well Calibration",
            MetricId::BalancePositive => "Balance for Positive Class",
            MetricId::BalanceNegative => "Balance for Negative Class",
            MetricId::CausalDiscrimination => "Causal Discrimination",
            MetricId::FairnessThroughAwareness => "Fairness Through Awareness",
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What a metric component is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Statistic(Statistic),
    Calibration,
    WellCalibration,
    /// Counterfactual table whose source rows belong to the group.
    Counterfactual(Group),
    /// Matching table whose source rows belong to the group.
    Matching(Group),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub source: Source,
    /// Tail in which the result counts against the protected group.
    pub tail: Tail,
}

impl Component {
    pub fn label(&self) -> String {
        match self.source {
            Source::Statistic(s) => s.name().to_string(),
            Source::Calibration | Source::WellCalibration => "chi_squared".to_string(),
            Source::Counterfactual(g) | Source::Matching(g) => g.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MetricSpec {
    pub id: MetricId,
    pub kind: TestKind,
    pub components: &'static [Component],
    /// Each component is tested at alpha / alpha_divisor.
    pub alpha_divisor: u32,
}

const fn t(statistic: Statistic, tail: Tail) -> Component {
    Component {
        source: Source::Statistic(statistic),
        tail,
    }
}

const REGISTRY: [MetricSpec; 14] = [
    MetricSpec {
        id: MetricId::GroupFairness,
        kind: TestKind::WelchT,
        components: &[t(Statistic::Ppr, Tail::Right)],
        alpha_divisor: 1,
    },
    MetricSpec {
        id: MetricId::PredictiveParity,
        kind: TestKind::WelchT,
        components: &[t(Statistic::Ppv, Tail::Left)],
        alpha_divisor: 1,
    },
    MetricSpec {
        id: MetricId::PredictiveEquality,
        kind: TestKind::WelchT,
        components: &[t(Statistic::Fpr, Tail::Right)],
        alpha_divisor: 1,
    },
    MetricSpec {
        id: MetricId::EqualOpportunity,
        kind: TestKind::WelchT,
        components: &[t(Statistic::Fnr, Tail::Left)],
        alpha_divisor: 1,
    },
    MetricSpec {
        id: MetricId::EqualizedOdds,
        kind: TestKind::WelchT,
        components: &[t(Statistic::Tpr, Tail::Right), t(Statistic::Fpr, Tail::Right)],
        alpha_divisor: 2,
    },
    MetricSpec {
        id: MetricId::ConditionalUseAccuracy,
        kind: TestKind::WelchT,
        components: &[t(Statistic::Ppv, Tail::Left), t(Statistic::Npv, Tail::Right)],
        alpha_divisor: 2,
    },
    MetricSpec {
        id: MetricId::OverallAccuracy,
        kind: TestKind::WelchT,
        components: &[t(Statistic::Accuracy, Tail::TwoSided)],
        alpha_divisor: 1,
    },
    MetricSpec {
        id: MetricId::TreatmentEquality,
        kind: TestKind::WelchT,
        components: &[t(Statistic::FnFpRatio, Tail::Left)],
        alpha_divisor: 1,
    },
    MetricSpec {
        id: MetricId::Calibration,
        kind: TestKind::ChiSquared,
        components: &[Component {
            source: Source::Calibration,
            tail: Tail::Right,
        }],
        alpha_divisor: 1,
    },
    MetricSpec {
        id: MetricId::WellCalibration,
        kind: TestKind::ChiSquared,
        components: &[Component {
            source: Source::WellCalibration,
            tail: Tail::Right,
        }],
        alpha_divisor: 1,
    },
    MetricSpec {
        id: MetricId::BalancePositive,
        kind: TestKind::WelchT,
        components: &[t(Statistic::MeanScoreFavorable, Tail::Left)],
        alpha_divisor: 1,
    },
    MetricSpec {
        id: MetricId::BalanceNegative,
        kind: TestKind::WelchT,
        components: &[t(Statistic::MeanScoreUnfavorable, Tail::Left)],
        alpha_divisor: 1,
    },
    // Per-group tables are separate tests, each at the full alpha.
    MetricSpec {
        id: MetricId::CausalDiscrimination,
        kind: TestKind::McnemarMidP,
        components: &[
            Component {
                source: Source::Counterfactual(Group::Protected),
                tail: Tail::TwoSided,
            },
            Component {
                source: Source::Counterfactual(Group::Unprotected),
                tail: Tail::TwoSided,
            },
        ],
        alpha_divisor: 1,
    },
    MetricSpec {
        id: MetricId::FairnessThroughAwareness,
        kind: TestKind::McnemarMidP,
        components: &[
            Component {
                source: Source::Matching(Group::Protected),
                tail: Tail::TwoSided,
            },
            Component {
                source: Source::Matching(Group::Unprotected),
                tail: Tail::TwoSided,
            },
        ],
        alpha_divisor: 1,
    },
];

/// The fixed metric registry, in report order.
pub fn registry() -> &'static [MetricSpec] {
    &REGISTRY
}

pub fn spec(id: MetricId) -> &'static MetricSpec {
    REGISTRY.iter().find(|s| s.id == id).expect("every id is registered")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Violation,
    NoViolation,
    ReverseDisparity,
    NotEvaluable,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Violation => "violation",
            Verdict::NoViolation => "no_violation",
            Verdict::ReverseDisparity => "reverse_disparity",
            Verdict::NotEvaluable => "not_evaluable",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentResult {
    pub label: String,
    pub source: Source,
    /// unprotected − protected, for t-test components.
    pub disparity: Option<f64>,
    pub protected_mean: Option<f64>,
    pub unprotected_mean: Option<f64>,
    pub protected_n: Option<usize>,
    pub unprotected_n: Option<usize>,
    /// Discordant counts (n01, n10) for mid-p components.
    pub discordant: Option<(u64, u64)>,
    pub test: TestResult,
    /// p-value for a disparity against the protected group.
    pub violation_p: f64,
    /// p-value for a disparity favoring the protected group; absent for
    /// undirected tests.
    pub reverse_p: Option<f64>,
}

impl ComponentResult {
    pub fn is_violation(&self) -> bool {
        self.violation_p < self.test.alpha
    }

    pub fn is_reverse(&self) -> bool {
        self.reverse_p.is_some_and(|p| p < self.test.alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricVerdict {
    pub id: MetricId,
    pub kind: TestKind,
    pub alpha: f64,
    pub component_alpha: f64,
    pub components: Vec<ComponentResult>,
    pub verdict: Verdict,
    pub reason: Option<String>,
}

/// Everything the metrics read.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteInputs {
    pub distributions: MetricDistributions,
    pub calibration: CalibrationTable,
    /// Counterfactual tables, or why they are unavailable.
    pub counterfactual: std::result::Result<PairedTables, String>,
    /// Nearest-neighbor tables, or why they are unavailable.
    pub matching: std::result::Result<PairedTables, String>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Component result before the per-metric alpha is applied.
fn evaluate_component(component: Component, inputs: &SuiteInputs) -> std::result::Result<ComponentResult, String> {
    let label = component.label();
    match component.source {
        Source::Statistic(statistic) => {
            let samples = inputs.distributions.get(statistic).map_err(|e| e.to_string())?;
            let (prot, unprot) = (&samples.protected, &samples.unprotected);
            let test = welch_t(unprot, prot, component.tail)
                .map_err(|e| format!("{statistic}: {e}"))?;
            let (violation_p, reverse_p) = match (component.tail, test.df) {
                (Tail::TwoSided, _) => (test.p_value, None),
                (_, None) => (1.0, Some(1.0)),
                (tail, Some(df)) => (test.p_value, Some(t_p_value(test.statistic, df, tail.opposite()))),
            };
            let (pm, um) = (mean(prot), mean(unprot));
            Ok(ComponentResult {
                label,
                source: component.source,
                disparity: Some(um - pm),
                protected_mean: Some(pm),
                unprotected_mean: Some(um),
                protected_n: Some(prot.len()),
                unprotected_n: Some(unprot.len()),
                discordant: None,
                test,
                violation_p,
                reverse_p,
            })
        }
        Source::Calibration | Source::WellCalibration => {
            let test = if component.source == Source::Calibration {
                calibration_chi2(&inputs.calibration)
            } else {
                well_calibration_chi2(&inputs.calibration)
            }
            .map_err(|e| e.to_string())?;
            Ok(ComponentResult {
                label,
                source: component.source,
                disparity: None,
                protected_mean: None,
                unprotected_mean: None,
                protected_n: Some(inputs.calibration.group_total(Group::Protected) as usize),
                unprotected_n: Some(inputs.calibration.group_total(Group::Unprotected) as usize),
                discordant: None,
                violation_p: test.p_value,
                reverse_p: None,
                test,
            })
        }
        Source::Counterfactual(group) | Source::Matching(group) => {
            let tables = match component.source {
                Source::Counterfactual(_) => &inputs.counterfactual,
                _ => &inputs.matching,
            }
            .as_ref()
            .map_err(|reason| reason.clone())?;
            let table = tables.get(group);
            let test = mcnemar_midp_test(table).map_err(|e| e.to_string())?;
            let (violation_p, reverse_p) = match imbalance_against_protected(group, table) {
                Ordering::Greater => (test.p_value, 1.0),
                Ordering::Less => (1.0, test.p_value),
                Ordering::Equal => (1.0, 1.0),
            };
            Ok(ComponentResult {
                label,
                source: component.source,
                disparity: Some(table.n01 as f64 - table.n10 as f64),
                protected_mean: None,
                unprotected_mean: None,
                protected_n: None,
                unprotected_n: None,
                discordant: Some((table.n01, table.n10)),
                test,
                violation_p,
                reverse_p: Some(reverse_p),
            })
        }
    }
}

fn assemble(
    spec: &MetricSpec,
    alpha: f64,
    components: std::result::Result<Vec<ComponentResult>, String>,
) -> MetricVerdict {
    let component_alpha = bonferroni(alpha, spec.alpha_divisor);
    match components {
        Err(reason) => MetricVerdict {
            id: spec.id,
            kind: spec.kind,
            alpha,
            component_alpha,
            components: Vec::new(),
            verdict: Verdict::NotEvaluable,
            reason: Some(reason),
        },
        Ok(mut components) => {
            for c in &mut components {
                c.test.alpha = component_alpha;
            }
            let verdict = if components.iter().any(ComponentResult::is_violation) {
                Verdict::Violation
            } else if components.iter().any(ComponentResult::is_reverse) {
                Verdict::ReverseDisparity
            } else {
                Verdict::NoViolation
            };
            MetricVerdict {
                id: spec.id,
                kind: spec.kind,
                alpha,
                component_alpha,
                components,
                verdict,
                reason: None,
            }
        }
    }
}

/// Evaluates one metric at significance level `alpha` (before any
/// per-component correction). Missing inputs yield `not_evaluable`.
pub fn evaluate_metric(spec: &MetricSpec, inputs: &SuiteInputs, alpha: f64) -> MetricVerdict {
    let components = spec
        .components
        .iter()
        .map(|&c| evaluate_component(c, inputs))
        .collect();
    assemble(spec, alpha, components)
}

/// Evaluates every registered metric in registry order. Components shared
/// between metrics are computed once.
pub fn evaluate_all(inputs: &SuiteInputs, alpha: f64) -> Result<Vec<MetricVerdict>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(crate::Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    let mut cache: BTreeMap<String, std::result::Result<ComponentResult, String>> = BTreeMap::new();
    let verdicts = registry()
        .iter()
        .map(|spec| {
            let components = spec
                .components
                .iter()
                .map(|&c| {
                    let key = format!("{:?}/{:?}", c.source, c.tail);
                    cache
                        .entry(key)
                        .or_insert_with(|| evaluate_component(c, inputs))
                        .clone()
                })
                .collect();
            assemble(spec, alpha, components)
        })
        .collect();
    Ok(verdicts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::CalibrationBin;
    use crate::cv::GroupSamples;
    use crate::similarity::build_contingency;

    fn samples(prot: Vec<f64>, unprot: Vec<f64>) -> GroupSamples {
        GroupSamples {
            protected_folds: (0..prot.len()).collect(),
            unprotected_folds: (0..unprot.len()).collect(),
            protected: prot,
            unprotected: unprot,
        }
    }

    fn inputs_with(stat: Statistic, prot: Vec<f64>, unprot: Vec<f64>) -> SuiteInputs {
        let mut map = BTreeMap::new();
        map.insert(stat, samples(prot, unprot));
        SuiteInputs {
            distributions: MetricDistributions {
                folds: (0..5).collect(),
                samples: map,
            },
            calibration: CalibrationTable { bins: Vec::<CalibrationBin>::new() },
            counterfactual: Err("not computed".into()),
            matching: Err("not computed".into()),
        }
    }

    #[test]
    fn registry_shape() {
        let r = registry();
        assert_eq!(r.len(), 14);
        for s in r {
            if s.alpha_divisor > 1 {
                assert_eq!(s.components.len() as u32, s.alpha_divisor);
            }
        }
        let ids: std::collections::BTreeSet<_> = r.iter().map(|s| s.id).collect();
        assert_eq!(ids.len(), 14);
    }

    #[test]
    fn statistic_keys_resolve() {
        for s in registry() {
            for c in s.components {
                if let Source::Statistic(st) = c.source {
                    assert!(Statistic::ALL.contains(&st));
                    assert_eq!(s.kind, TestKind::WelchT);
                }
            }
        }
    }

    #[test]
    fn equalized_odds_alpha() {
        let inputs = inputs_with(Statistic::Ppr, vec![0.1, 0.2], vec![0.1, 0.2]);
        let v = evaluate_metric(spec(MetricId::EqualizedOdds), &inputs, 0.05);
        assert_eq!(v.component_alpha, 0.025);
    }

    #[test]
    fn identical_samples_no_violation() {
        let s = vec![0.4, 0.5, 0.45, 0.52, 0.48];
        let inputs = inputs_with(Statistic::Ppr, s.clone(), s);
        let v = evaluate_metric(spec(MetricId::GroupFairness), &inputs, 0.05);
        assert_eq!(v.verdict, Verdict::NoViolation);
        let c = &v.components[0];
        assert_eq!(c.disparity, Some(0.0));
        assert!((c.violation_p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tail_direction_and_reverse() {
        let low = vec![0.40, 0.41, 0.39, 0.42, 0.40];
        let high = vec![0.50, 0.51, 0.49, 0.52, 0.50];
        // unprotected receives more favorable predictions
        let inputs = inputs_with(Statistic::Ppr, low.clone(), high.clone());
        let v = evaluate_metric(spec(MetricId::GroupFairness), &inputs, 0.05);
        assert_eq!(v.verdict, Verdict::Violation);
        assert!(v.components[0].disparity.unwrap() > 0.0);
        let swapped = inputs_with(Statistic::Ppr, high, low);
        let r = evaluate_metric(spec(MetricId::GroupFairness), &swapped, 0.05);
        assert_eq!(r.verdict, Verdict::ReverseDisparity);
        let (a, b) = (&v.components[0], &r.components[0]);
        assert!((a.violation_p - (1.0 - b.violation_p)).abs() < 1e-12);
        assert!((a.violation_p - b.reverse_p.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn insufficient_sample_is_not_evaluable() {
        let inputs = inputs_with(Statistic::Ppr, vec![0.1], vec![0.2, 0.3]);
        let v = evaluate_metric(spec(MetricId::GroupFairness), &inputs, 0.05);
        assert_eq!(v.verdict, Verdict::NotEvaluable);
        assert!(v.reason.unwrap().contains("ppr"));
        let all = evaluate_all(&inputs, 0.05).unwrap();
        assert_eq!(all.len(), 14);
        assert!(all.iter().all(|v| v.verdict == Verdict::NotEvaluable));
    }

    #[test]
    fn midp_direction() {
        let mut inputs = inputs_with(Statistic::Ppr, vec![], vec![]);
        // unprotected rows lose the favorable prediction when treated as protected
        let unprot = build_contingency(
            std::iter::repeat_n((0, 1), 30).chain(std::iter::repeat_n((1, 0), 2)),
            "original",
            "counterfactual",
        );
        let prot = build_contingency(std::iter::repeat_n((0, 0), 10), "original", "counterfactual");
        inputs.counterfactual = Ok(PairedTables {
            protected: prot,
            unprotected: unprot.clone(),
        });
        let v = evaluate_metric(spec(MetricId::CausalDiscrimination), &inputs, 0.05);
        assert_eq!(v.verdict, Verdict::Violation);
        assert!(v.components[0].test.degenerate);
        // same imbalance on protected rows favors them
        inputs.counterfactual = Ok(PairedTables {
            protected: unprot,
            unprotected: build_contingency(std::iter::empty(), "original", "counterfactual"),
        });
        let v = evaluate_metric(spec(MetricId::CausalDiscrimination), &inputs, 0.05);
        assert_eq!(v.verdict, Verdict::ReverseDisparity);
    }

    #[test]
    fn joint_metric_needs_a_significant_component() {
        // each component significant at 0.05 but not at 0.025
        let mut map = BTreeMap::new();
        let prot = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let shift = |d: f64| prot.iter().map(|v| v + d).collect::<Vec<_>>();
        // t ≈ 1.9 with df ≈ 18 gives a right-tail p between 0.025 and 0.05
        let unprot = shift(0.45);
        let p = welch_t(&unprot, &prot, Tail::Right).unwrap().p_value;
        assert!(p > 0.025 && p < 0.05, "{p}");
        map.insert(Statistic::Tpr, samples(prot.clone(), unprot.clone()));
        map.insert(Statistic::Fpr, samples(prot.clone(), unprot));
        let inputs = SuiteInputs {
            distributions: MetricDistributions { folds: (0..10).collect(), samples: map },
            calibration: CalibrationTable { bins: vec![] },
            counterfactual: Err(String::new()),
            matching: Err(String::new()),
        };
        assert_eq!(
            evaluate_metric(spec(MetricId::PredictiveEquality), &inputs, 0.05).verdict,
            Verdict::Violation
        );
        assert_eq!(
            evaluate_metric(spec(MetricId::EqualizedOdds), &inputs, 0.05).verdict,
            Verdict::NoViolation
        );
    }

    #[test]
    fn evaluate_all_matches_single_metrics() {
        let inputs = inputs_with(Statistic::Fpr, vec![0.1, 0.2, 0.15], vec![0.3, 0.25, 0.35]);
        let all = evaluate_all(&inputs, 0.05).unwrap();
        for (spec, v) in registry().iter().zip(&all) {
            assert_eq!(&evaluate_metric(spec, &inputs, 0.05), v);
        }
    }
}
