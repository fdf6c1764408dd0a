//! Hypothesis-test kernels: Welch two-sample t-test, Student-t and chi-squared
//! survival functions, the exact binomial mid-p value and Bonferroni
//! correction. All functions are pure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{beta_reg, gamma_q, ln_choose};

pub const DEFAULT_ALPHA: f64 = 0.05;

/// Direction of a one- or two-sided test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    Left,
    Right,
    TwoSided,
}

impl Tail {
    pub fn opposite(self) -> Tail {
        match self {
            Tail::Left => Tail::Right,
            Tail::Right => Tail::Left,
            Tail::TwoSided => Tail::TwoSided,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    WelchT,
    ChiSquared,
    McnemarMidP,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: TestKind,
    pub statistic: f64,
    /// Degrees of freedom; absent for exact tests and degenerate results.
    pub df: Option<f64>,
    pub tail: Tail,
    pub p_value: f64,
    pub alpha: f64,
    /// Set when the inputs carry no evidence either way and p was fixed at 1.
    #[serde(default)]
    pub degenerate: bool,
}

impl TestResult {
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn significant(&self) -> bool {
        self.p_value < self.alpha
    }
}

/// P(T >= t) for Student's t with `df` degrees of freedom.
pub fn t_sf(t: f64, df: f64) -> f64 {
    debug_assert!(df > 0.0);
    if t == 0.0 {
        return 0.5;
    }
    let t2 = t * t;
    // P(|T| >= |t|) = I_{df/(df+t^2)}(df/2, 1/2)
    let upper = 0.5 * beta_reg(0.5 * df, 0.5, df / (df + t2), t2 / (df + t2));
    if t > 0.0 {
        upper
    } else {
        1.0 - upper
    }
}

/// p-value of an observed t under the given tail.
pub fn t_p_value(t: f64, df: f64, tail: Tail) -> f64 {
    match tail {
        Tail::Right => t_sf(t, df),
        Tail::Left => t_sf(-t, df),
        Tail::TwoSided => (2.0 * t_sf(t.abs(), df)).min(1.0),
    }
}

/// P(X >= x) for a chi-squared variable with `df` degrees of freedom.
pub fn chi2_sf(x: f64, df: u32) -> f64 {
    assert!(df >= 1, "chi-squared needs at least one degree of freedom");
    if x <= 0.0 {
        return 1.0;
    }
    gamma_q(0.5 * df as f64, 0.5 * x).clamp(0.0, 1.0)
}

fn mean_var(sample: &[f64]) -> (f64, f64) {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let ss = sample.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, ss / (n - 1.0))
}

/// Welch's unequal-variance two-sample t-test of mean(a) - mean(b).
///
/// Both samples need at least two observations. When both sample variances
/// are zero and the means agree the result is degenerate (t = 0, p = 1); zero
/// variances with different means have no finite statistic and are rejected.
pub fn welch_t(a: &[f64], b: &[f64], tail: Tail) -> Result<TestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "t-test samples need at least 2 values (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    let (mean_a, var_a) = mean_var(a);
    let (mean_b, var_b) = mean_var(b);
    let sa = var_a / a.len() as f64;
    let sb = var_b / b.len() as f64;
    let se2 = sa + sb;

    if se2 == 0.0 {
        if mean_a == mean_b {
            return Ok(TestResult {
                kind: TestKind::WelchT,
                statistic: 0.0,
                df: None,
                tail,
                p_value: 1.0,
                alpha: DEFAULT_ALPHA,
                degenerate: true,
            });
        }
        return Err(Error::InvalidArgument(
            "both samples have zero variance but different means".into(),
        ));
    }

    let t = (mean_a - mean_b) / se2.sqrt();
    let df = se2 * se2
        / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    Ok(TestResult {
        kind: TestKind::WelchT,
        statistic: t,
        df: Some(df),
        tail,
        p_value: t_p_value(t, df, tail),
        alpha: DEFAULT_ALPHA,
        degenerate: false,
    })
}

/// Exact two-sided binomial(n, 1/2) mid-p value for `k` successes:
/// `2 * sum_{i<=k*} C(n,i) 2^-n - C(n,k*) 2^-n` with `k* = min(k, n-k)`,
/// clamped to [0, 1]. `n = 0` gives 1.
pub fn binomial_midp(k: u64, n: u64) -> Result<f64> {
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds n = {n} in the binomial mid-p test"
        )));
    }
    if n == 0 {
        return Ok(1.0);
    }
    let ks = k.min(n - k);
    let ln_pmf = ln_choose(n, ks) - n as f64 * std::f64::consts::LN_2;
    // Sum pmf(i)/pmf(ks) downward from ks; terms decrease monotonically.
    let mut ratio = 1.0;
    let mut sum = 1.0;
    let mut i = ks;
    while i > 0 {
        ratio *= i as f64 / (n - i + 1) as f64;
        sum += ratio;
        if ratio < sum * 1e-18 {
            break;
        }
        i -= 1;
    }
    let p = ln_pmf.exp() * (2.0 * sum - 1.0);
    Ok(p.clamp(0.0, 1.0))
}

/// Per-test significance level under a Bonferroni correction for `m` tests.
pub fn bonferroni(alpha: f64, m: u32) -> f64 {
    assert!(m >= 1, "Bonferroni correction needs at least one test");
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    alpha / m as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn t_sf_at_zero_is_half() {
        for df in [0.5, 1.0, 3.7, 100.0, 1e6] {
            assert_eq!(t_sf(0.0, df), 0.5);
        }
    }

    #[test]
    fn t_sf_normal_limit() {
        assert!((t_sf(1.96, 1e7) - 0.025).abs() < 1e-3);
    }

    #[test]
    fn t_sf_closed_form_df1() {
        // Cauchy: P(T >= t) = 1/2 - atan(t)/pi
        for t in [-3.0f64, -0.2, 0.7, 2.0, 15.0] {
            let want = 0.5 - f64::atan(t) / std::f64::consts::PI;
            assert!((t_sf(t, 1.0) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn t_sf_closed_form_df2() {
        // P(T >= t) = 1/2 - t / (2 sqrt(2 + t^2))
        for t in [-4.0f64, -1.0, 0.3, 2.5, 40.0] {
            let want = 0.5 - t / (2.0 * (2.0 + t * t).sqrt());
            assert!((t_sf(t, 2.0) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn welch_identical_samples() {
        let a = [0.3, 0.5, 0.2, 0.9];
        let r = welch_t(&a, &a, Tail::TwoSided).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn welch_shifted_integers() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 3.0, 4.0, 5.0, 6.0];
        let r = welch_t(&a, &b, Tail::Left).unwrap();
        // var 2.5 each; se = sqrt(0.5 + 0.5) = 1; df = 1 / (2 * 0.25 / 4) = 8
        assert!((r.statistic + 1.0).abs() < 1e-15);
        assert!((r.df.unwrap() - 8.0).abs() < 1e-12);
        assert!((r.p_value - 0.173_296_753_543_667).abs() < 1e-9);
    }

    #[test]
    fn welch_zero_variance_equal_means_is_degenerate() {
        let r = welch_t(&[0.5, 0.5], &[0.5, 0.5, 0.5], Tail::Right).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
        assert!(welch_t(&[0.5, 0.5], &[0.7, 0.7], Tail::Right).is_err());
        assert!(welch_t(&[0.5], &[0.7, 0.1], Tail::Right).is_err());
    }

    #[test]
    fn chi2_sf_reference_points() {
        assert_eq!(chi2_sf(0.0, 4), 1.0);
        assert!((chi2_sf(15.06, 9) - 0.089).abs() < 1e-3);
        assert!((chi2_sf(27.94, 19) - 0.084).abs() < 1e-3);
        // df = 2: Q = exp(-x/2)
        assert!((chi2_sf(3.0, 2) - (-1.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn midp_small_cases() {
        assert_eq!(binomial_midp(1, 2).unwrap(), 1.0);
        assert!((binomial_midp(13, 28).unwrap() - 0.7111).abs() < 1e-4);
        let tiny = binomial_midp(0, 354).unwrap();
        assert!(tiny > 0.0 && tiny < 1e-100);
        assert!(binomial_midp(265, 265).unwrap() < 1e-70);
        assert_eq!(binomial_midp(0, 0).unwrap(), 1.0);
        assert!(binomial_midp(5, 4).is_err());
    }

    #[test]
    fn midp_large_n_is_finite() {
        let p = binomial_midp(499_000, 1_000_000).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert!(p.is_finite());
    }

    #[test]
    fn bonferroni_values() {
        assert_eq!(bonferroni(0.05, 2), 0.025);
        assert_eq!(bonferroni(0.05, 1), 0.05);
        assert_eq!(bonferroni(0.10, 4), 0.025);
    }

    proptest! {
        #[test]
        fn welch_translation_and_scale(
            a in prop::collection::vec(-10.0f64..10.0, 2..30),
            b in prop::collection::vec(-10.0f64..10.0, 2..30),
            shift in -5.0f64..5.0,
            scale in 0.1f64..10.0,
        ) {
            let base = welch_t(&a, &b, Tail::Right);
            prop_assume!(base.is_ok());
            let base = base.unwrap();
            prop_assume!(!base.degenerate);
            let shift_a: Vec<f64> = a.iter().map(|x| x + shift).collect();
            let shift_b: Vec<f64> = b.iter().map(|x| x + shift).collect();
            let shifted = welch_t(&shift_a, &shift_b, Tail::Right).unwrap();
            prop_assert!((shifted.statistic - base.statistic).abs() <= 1e-12 * base.statistic.abs().max(1.0));
            prop_assert!((shifted.p_value - base.p_value).abs() <= 1e-12);
            let scale_a: Vec<f64> = a.iter().map(|x| x * scale).collect();
            let scale_b: Vec<f64> = b.iter().map(|x| x * scale).collect();
            let scaled = welch_t(&scale_a, &scale_b, Tail::Right).unwrap();
            prop_assert!((scaled.statistic - base.statistic).abs() <= 1e-12 * base.statistic.abs().max(1.0));
        }

        #[test]
        fn welch_antisymmetry(
            a in prop::collection::vec(0.0f64..1.0, 2..20),
            b in prop::collection::vec(0.0f64..1.0, 2..20),
        ) {
            let ab = welch_t(&a, &b, Tail::Right).unwrap();
            let ba = welch_t(&b, &a, Tail::Right).unwrap();
            prop_assert_eq!(ab.statistic, -ba.statistic);
            prop_assert!((ab.p_value - (1.0 - ba.p_value)).abs() <= 1e-12);
        }

        #[test]
        fn t_sf_monotone(t in -30.0f64..30.0, dt in 1e-3f64..5.0, df in 0.5f64..500.0) {
            prop_assert!(t_sf(t, df) >= t_sf(t + dt, df));
        }

        #[test]
        fn midp_symmetric(n in 0u64..3000, frac in 0.0f64..=1.0) {
            let k = (frac * n as f64).round() as u64;
            prop_assert_eq!(binomial_midp(k, n).unwrap(), binomial_midp(n - k, n).unwrap());
        }

        #[test]
        fn chi2_sf_monotone(x in 0.0f64..200.0, dx in 1e-3f64..50.0, df in 1u32..60) {
            prop_assert!(chi2_sf(x, df) >= chi2_sf(x + dx, df));
        }
    }
}
