//! Statistical significance testing for group fairness metrics.
//!
//! Cross-validation turns one dataset into K held-out evaluations, giving a
//! sample of each group statistic per group. Fourteen fairness definitions are
//! then tested on those samples (Welch t-tests), on binned scores
//! (chi-squared) and on paired predictions (binomial mid-p).
pub mod audit;
pub mod calibration;
pub mod cv;
pub mod data;
pub mod error;
pub mod model;
pub mod report;
pub mod similarity;
pub mod special;
pub mod stats;
pub mod suite;
pub mod synth;

pub use error::{Error, Result};
