//! Score binning and the two chi-squared calibration tests.
//!
//! Scores are P(unfavorable). A bin's favorable-outcome rates are therefore
//! compared against the interval `[1 - upper, 1 - lower]`.

use serde::{Deserialize, Serialize};

use crate::data::{Group, FAVORABLE};
use crate::error::{Error, Result};
use crate::model::PredictionRecord;
use crate::stats::{chi2_sf, Tail, TestKind, TestResult, DEFAULT_ALPHA};

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    /// Protected records in the bin.
    pub alpha_p: u64,
    /// Protected records with the favorable outcome.
    pub theta_p: u64,
    /// Unprotected records in the bin.
    pub beta_u: u64,
    /// Unprotected records with the favorable outcome.
    pub gamma_u: u64,
    /// Protected favorable count rescaled to the unprotected bin size.
    pub lambda: Option<f64>,
}

impl CalibrationBin {
    /// Both chi-squared tests use only bins with protected records and a
    /// nonzero unprotected favorable count.
    pub fn is_usable(&self) -> bool {
        self.alpha_p > 0 && self.gamma_u > 0
    }

    /// Range of favorable-outcome rates consistent with this score bin.
    pub fn favorable_rate_interval(&self) -> (f64, f64) {
        (1.0 - self.upper, 1.0 - self.lower)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub bins: Vec<CalibrationBin>,
}

impl CalibrationTable {
    pub fn usable_bins(&self) -> impl Iterator<Item = &CalibrationBin> {
        self.bins.iter().filter(|b| b.is_usable())
    }

    pub fn group_total(&self, group: Group) -> u64 {
        self.bins
            .iter()
            .map(|b| match group {
                Group::Protected => b.alpha_p,
                Group::Unprotected => b.beta_u,
            })
            .sum()
    }
}

/// λ = θ/α · β; `None` when α = 0. The product is formed first so that
/// α = β returns θ exactly.
pub fn standardized_frequency(theta: u64, alpha: u64, beta: u64) -> Option<f64> {
    (alpha > 0).then(|| (theta as f64 * beta as f64) / alpha as f64)
}

pub fn bin_index(score: f64, k: usize) -> usize {
    ((score * k as f64).floor() as usize).min(k - 1)
}

/// Counts records into `k` equal-width score bins `[i/k, (i+1)/k)`, the last
/// bin closed at 1.
pub fn bin_scores(records: &[PredictionRecord], k: usize) -> Result<CalibrationTable> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {k}")));
    }
    let mut bins: Vec<CalibrationBin> = (0..k)
        .map(|i| CalibrationBin {
            lower: i as f64 / k as f64,
            upper: (i + 1) as f64 / k as f64,
            alpha_p: 0,
            theta_p: 0,
            beta_u: 0,
            gamma_u: 0,
            lambda: None,
        })
        .collect();
    for r in records {
        if !(0.0..=1.0).contains(&r.score) {
            return Err(Error::InvalidArgument(format!(
                "row {}: score {} outside [0, 1]",
                r.row_id, r.score
            )));
        }
        let bin = &mut bins[bin_index(r.score, k)];
        let favorable = u64::from(r.y_true == FAVORABLE);
        match r.group {
            Group::Protected => {
                bin.alpha_p += 1;
                bin.theta_p += favorable;
            }
            Group::Unprotected => {
                bin.beta_u += 1;
                bin.gamma_u += favorable;
            }
        }
    }
    for bin in &mut bins {
        bin.lambda = standardized_frequency(bin.theta_p, bin.alpha_p, bin.beta_u);
    }
    Ok(CalibrationTable { bins })
}

fn chi2_result(statistic: f64, df: u32) -> TestResult {
    TestResult {
        kind: TestKind::ChiSquared,
        statistic,
        df: Some(f64::from(df)),
        tail: Tail::Right,
        p_value: chi2_sf(statistic, df),
        alpha: DEFAULT_ALPHA,
        degenerate: false,
    }
}

/// Σ (λ − γ)² / γ over usable bins, df = usable − 1.
pub fn calibration_chi2(table: &CalibrationTable) -> Result<TestResult> {
    let usable: Vec<&CalibrationBin> = table.usable_bins().collect();
    if usable.len() < 2 {
        return Err(Error::InsufficientBins { usable: usable.len() });
    }
    let statistic = usable
        .iter()
        .map(|b| {
            let lambda = b.lambda.expect("usable bins have protected records");
            let gamma = b.gamma_u as f64;
            (lambda - gamma).powi(2) / gamma
        })
        .sum();
    Ok(chi2_result(statistic, usable.len() as u32 - 1))
}

/// Expected standardized count for an observed one: itself when `rate` lies
/// in `[lo, hi]`, otherwise the nearer edge scaled by `beta`. Returning the
/// observed value unchanged keeps in-interval terms exactly 0.
fn expected_count(observed: f64, rate: f64, (lo, hi): (f64, f64), beta: f64) -> f64 {
    if rate < lo {
        lo * beta
    } else if rate > hi {
        hi * beta
    } else {
        observed
    }
}

/// Observed and expected standardized favorable counts for the two terms a
/// usable bin contributes to the well-calibration statistic, protected first.
pub fn well_calibration_terms(bin: &CalibrationBin) -> [(f64, f64); 2] {
    let beta = bin.beta_u as f64;
    let interval = bin.favorable_rate_interval();
    let lambda = standardized_frequency(bin.theta_p, bin.alpha_p, bin.beta_u).unwrap_or(0.0);
    let prot_rate = bin.theta_p as f64 / bin.alpha_p as f64;
    let gamma = bin.gamma_u as f64;
    let unprot_rate = gamma / beta;
    [
        (lambda, expected_count(lambda, prot_rate, interval, beta)),
        (gamma, expected_count(gamma, unprot_rate, interval, beta)),
    ]
}

/// Chi-squared test that both groups' favorable rates lie inside each bin's
/// rate interval. A rate outside is compared against the nearer edge, one
/// inside contributes 0. df = 2·usable − 1.
pub fn well_calibration_chi2(table: &CalibrationTable) -> Result<TestResult> {
    let usable: Vec<&CalibrationBin> = table.usable_bins().collect();
    if usable.len() < 2 {
        return Err(Error::InsufficientBins { usable: usable.len() });
    }
    let statistic = usable
        .iter()
        .flat_map(|b| well_calibration_terms(b))
        .map(|(observed, expected)| {
            if expected > 0.0 {
                (observed - expected).powi(2) / expected
            } else {
                // expected 0 only when the observed rate is itself 0
                0.0
            }
        })
        .sum();
    Ok(chi2_result(statistic, 2 * usable.len() as u32 - 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: i64, score: f64, y: u8, group: Group) -> PredictionRecord {
        PredictionRecord {
            row_id: id,
            fold_id: 0,
            y_true: y,
            y_pred: u8::from(score >= 0.5),
            score,
            group,
        }
    }

    fn bin(lower: f64, upper: f64, a: u64, t: u64, b: u64, g: u64) -> CalibrationBin {
        CalibrationBin {
            lower,
            upper,
            alpha_p: a,
            theta_p: t,
            beta_u: b,
            gamma_u: g,
            lambda: standardized_frequency(t, a, b),
        }
    }

    #[test]
    fn boundary_rule() {
        assert_eq!(bin_index(0.05, 10), 0);
        assert_eq!(bin_index(1.0, 10), 9);
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.5, 10), 5);
    }

    #[test]
    fn counts_sum_to_records() {
        let recs: Vec<_> = (0..100)
            .map(|i| {
                let g = if i % 3 == 0 { Group::Protected } else { Group::Unprotected };
                rec(i, i as f64 / 99.0, (i % 2) as u8, g)
            })
            .collect();
        let t = bin_scores(&recs, 10).unwrap();
        assert_eq!(t.group_total(Group::Protected) + t.group_total(Group::Unprotected), 100);
        assert_eq!(t.group_total(Group::Protected), 34);
    }

    #[test]
    fn hand_tally() {
        let p = Group::Protected;
        let u = Group::Unprotected;
        let recs = vec![
            rec(1, 0.05, 0, p),
            rec(2, 0.15, 0, p),
            rec(3, 0.10, 1, p),
            rec(4, 0.95, 1, p),
            rec(5, 1.00, 0, p),
            rec(6, 0.49, 0, p),
            rec(7, 0.02, 0, u),
            rec(8, 0.09, 1, u),
            rec(9, 0.50, 0, u),
            rec(10, 0.51, 1, u),
            rec(11, 0.99, 1, u),
            rec(12, 0.25, 0, u),
        ];
        let t = bin_scores(&recs, 4).unwrap();
        let counts: Vec<_> = t.bins.iter().map(|b| (b.alpha_p, b.theta_p, b.beta_u, b.gamma_u)).collect();
        assert_eq!(counts, [(3, 2, 2, 1), (1, 1, 1, 1), (0, 0, 2, 1), (2, 1, 1, 0)]);
        // λ = 2/3 · 2
        assert!((t.bins[0].lambda.unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(t.bins[2].lambda, None);
    }

    #[test]
    fn standardized_frequency_examples() {
        assert_eq!(standardized_frequency(5, 10, 20), Some(10.0));
        assert_eq!(standardized_frequency(7, 7, 13), Some(13.0));
        assert_eq!(standardized_frequency(0, 4, 9), Some(0.0));
        assert_eq!(standardized_frequency(0, 0, 9), None);
        // equal group sizes must reproduce the count exactly
        for a in 1..400u64 {
            for t in 0..=a {
                assert_eq!(standardized_frequency(t, a, a), Some(t as f64));
            }
        }
    }

    #[test]
    fn in_interval_rates_contribute_exactly_zero() {
        for beta in 1..300u64 {
            for gamma in 1..=beta {
                let b = bin(0.6, 0.7, beta, gamma, beta, gamma);
                let rate = gamma as f64 / beta as f64;
                let (lo, hi) = b.favorable_rate_interval();
                if rate >= lo && rate <= hi {
                    for (obs, exp) in well_calibration_terms(&b) {
                        assert_eq!(obs, exp, "beta {beta} gamma {gamma}");
                    }
                }
            }
        }
    }

    #[test]
    fn two_bin_hand_statistic() {
        // λ = (8, 12), γ = (10, 10)
        let t = CalibrationTable {
            bins: vec![bin(0.0, 0.5, 10, 4, 20, 10), bin(0.5, 1.0, 10, 6, 20, 10)],
        };
        assert_eq!(t.bins[0].lambda, Some(8.0));
        assert_eq!(t.bins[1].lambda, Some(12.0));
        let r = calibration_chi2(&t).unwrap();
        assert!((r.statistic - 0.8).abs() < 1e-12);
        assert_eq!(r.df, Some(1.0));
        assert_eq!(r.tail, Tail::Right);
    }

    #[test]
    fn parity_gives_zero() {
        let t = CalibrationTable {
            bins: vec![bin(0.0, 0.5, 10, 5, 20, 10), bin(0.5, 1.0, 5, 1, 10, 2)],
        };
        let r = calibration_chi2(&t).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn unusable_bins_are_skipped() {
        let t = CalibrationTable {
            bins: vec![
                bin(0.0, 0.25, 10, 5, 20, 10),
                bin(0.25, 0.5, 0, 0, 20, 10),
                bin(0.5, 0.75, 10, 4, 10, 0),
                bin(0.75, 1.0, 10, 2, 10, 2),
            ],
        };
        assert_eq!(calibration_chi2(&t).unwrap().df, Some(1.0));
        assert_eq!(well_calibration_chi2(&t).unwrap().df, Some(3.0));
        let one = CalibrationTable { bins: t.bins[..2].to_vec() };
        assert!(matches!(calibration_chi2(&one), Err(Error::InsufficientBins { usable: 1 })));
    }

    #[test]
    fn well_calibration_edge_term() {
        // score bin [0.2, 0.3) → favorable-rate interval [0.7, 0.8]
        let b = bin(0.2, 0.3, 10, 5, 20, 18);
        let [(po, pe), (uo, ue)] = well_calibration_terms(&b);
        // protected rate 0.5 → nearest edge 0.7
        assert!((po - 10.0).abs() < 1e-12 && (pe - 14.0).abs() < 1e-12);
        // unprotected rate 0.9 → nearest edge 0.8
        assert!((uo - 18.0).abs() < 1e-12 && (ue - 16.0).abs() < 1e-12);
        let inside = bin(0.2, 0.3, 4, 3, 20, 15);
        for (o, e) in well_calibration_terms(&inside) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn well_calibrated_at_edges_gives_zero() {
        // favorable rates equal the upper score edge's complement in each bin
        let t = CalibrationTable {
            bins: vec![bin(0.0, 0.5, 10, 5, 20, 10), bin(0.5, 1.0, 4, 2, 10, 5)],
        };
        let r = well_calibration_chi2(&t).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.df, Some(3.0));
    }

    #[test]
    fn chi2_paper_pairs() {
        assert!((chi2_result(15.06, 9).p_value - 0.089).abs() < 1e-3);
        assert!((chi2_result(27.94, 19).p_value - 0.084).abs() < 1e-3);
    }

    #[test]
    fn bin_order_does_not_matter() {
        let mut t = CalibrationTable {
            bins: vec![
                bin(0.0, 0.3, 10, 3, 12, 5),
                bin(0.3, 0.6, 8, 6, 9, 4),
                bin(0.6, 1.0, 7, 1, 11, 3),
            ],
        };
        let a = calibration_chi2(&t).unwrap().statistic;
        t.bins.swap(0, 2);
        assert_eq!(calibration_chi2(&t).unwrap().statistic, a);
    }
}
