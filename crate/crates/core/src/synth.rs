//! Seeded synthetic populations with a controllable group effect.
//!
//! Rows are drawn independently: group ~ Bernoulli(group_mix), features ~
//! N(0, I), and P(unfavorable) = σ(intercept + coefficients·x + shift·protected).
//! All randomness comes from ChaCha8 seeded with the config seed.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Group, GroupLabels, Record, FAVORABLE, UNFAVORABLE};
use crate::error::{Error, Result};
use crate::model::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    /// One coefficient per numeric feature.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Added to the protected group's log-odds of the unfavorable outcome.
    pub group_shift: f64,
    /// Probability that a row is protected.
    pub group_mix: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 5000,
            coefficients: vec![1.0, -0.7, 0.4, 0.0],
            intercept: 0.0,
            group_shift: 0.0,
            group_mix: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!("population size {} below 2", self.n)));
        }
        if !(self.group_mix > 0.0 && self.group_mix < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "group mix {} outside (0, 1)",
                self.group_mix
            )));
        }
        let finite = self.intercept.is_finite()
            && self.group_shift.is_finite()
            && self.coefficients.iter().all(|c| c.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("non-finite generator parameter".into()));
        }
        Ok(())
    }
}

pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let rows: Vec<Record> = (0..config.n)
        .map(|i| {
            let group = if rng.random_bool(config.group_mix) {
                Group::Protected
            } else {
                Group::Unprotected
            };
            let features: Vec<f64> = (0..config.dim()).map(|_| rng.sample(StandardNormal)).collect();
            let z = config.intercept
                + config.coefficients.iter().zip(&features).map(|(c, x)| c * x).sum::<f64>()
                + config.group_shift * group.indicator();
            let outcome = if rng.random::<f64>() < sigmoid(z) {
                UNFAVORABLE
            } else {
                FAVORABLE
            };
            Record {
                row_id: i as i64,
                features,
                outcome,
                group,
            }
        })
        .collect();
    for g in [Group::Protected, Group::Unprotected] {
        if !rows.iter().any(|r| r.group == g) {
            return Err(Error::EmptyGroup { group: g.to_string() });
        }
    }
    let names = (1..=config.dim()).map(|j| format!("x{j}")).collect();
    Dataset::new(names, GroupLabels::default(), rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMechanism {
    /// Each protected favorable outcome becomes unfavorable with probability m.
    OutcomeShift,
    /// Each protected outcome is flipped with probability m.
    LabelNoiseOnProtected,
}

impl fmt::Display for BiasMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BiasMechanism::OutcomeShift => "outcome_shift",
            BiasMechanism::LabelNoiseOnProtected => "label_noise_on_protected",
        })
    }
}

impl FromStr for BiasMechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "outcome_shift" => Ok(BiasMechanism::OutcomeShift),
            "label_noise_on_protected" => Ok(BiasMechanism::LabelNoiseOnProtected),
            other => Err(Error::InvalidArgument(format!(
                "unknown bias mechanism `{other}` (expected outcome_shift or label_noise_on_protected)"
            ))),
        }
    }
}

/// Applies a bias mechanism to protected rows. One uniform draw is consumed
/// per protected row in row order, so results are deterministic per seed.
/// Magnitude 0 returns the dataset unchanged.
pub fn inject_bias(
    dataset: &Dataset,
    mechanism: BiasMechanism,
    magnitude: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&magnitude) {
        return Err(Error::InvalidArgument(format!(
            "bias magnitude {magnitude} outside [0, 1]"
        )));
    }
    if magnitude == 0.0 {
        return Ok(dataset.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = dataset
        .rows()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if r.group == Group::Protected {
                let hit = rng.random::<f64>() < magnitude;
                match mechanism {
                    BiasMechanism::OutcomeShift if hit && r.outcome == FAVORABLE => r.outcome = UNFAVORABLE,
                    BiasMechanism::LabelNoiseOnProtected if hit => r.outcome = 1 - r.outcome,
                    _ => {}
                }
            }
            r
        })
        .collect();
    dataset.with_rows(rows)
}
