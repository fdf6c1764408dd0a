//! Classifier abstraction: a built-in L2-regularized logistic regression and
//! the prediction-record format shared with externally trained models.
//!
//! Scores are always the probability of the *unfavorable* outcome, so a
//! predicted label of 1 means "unfavorable" and is assigned when the score
//! reaches the decision threshold.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Group, GroupLabels, Record};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    /// Initial step of each backtracking line search.
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
    pub seed: u64,
    /// Stop once every gradient component is below this magnitude.
    pub tolerance: f64,
    pub threshold: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            learning_rate: 1.0,
            iterations: 300,
            l2: 1e-4,
            seed: 0,
            tolerance: 1e-5,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    /// Feature coefficients followed by the intercept.
    weights: Vec<f64>,
    threshold: f64,
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl TrainedModel {
    pub fn new(weights: Vec<f64>, threshold: f64) -> Result<TrainedModel> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("model needs an intercept".into()));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold {threshold} must lie strictly between 0 and 1"
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("model weights must be finite".into()));
        }
        Ok(TrainedModel {
            weights,
            threshold,
            iterations: 0,
            initial_loss: f64::NAN,
            final_loss: f64::NAN,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.weights[..self.feature_dim()]
    }

    pub fn intercept(&self) -> f64 {
        self.weights[self.feature_dim()]
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Copy of the model with one coefficient replaced.
    pub fn with_coefficient(&self, index: usize, value: f64) -> TrainedModel {
        assert!(index < self.feature_dim());
        let mut m = self.clone();
        m.weights[index] = value;
        m
    }

    pub fn predict_score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim(),
                actual: x.len(),
            });
        }
        let z = self
            .coefficients()
            .iter()
            .zip(x)
            .map(|(w, v)| w * v)
            .sum::<f64>()
            + self.intercept();
        Ok(sigmoid(z))
    }

    pub fn predict_scores<X: AsRef<[f64]>>(&self, rows: &[X]) -> Result<Vec<f64>> {
        rows.iter().map(|x| self.predict_score(x.as_ref())).collect()
    }

    pub fn label(&self, score: f64) -> u8 {
        u8::from(score >= self.threshold)
    }

    pub fn predict_labels<X: AsRef<[f64]>>(&self, rows: &[X]) -> Result<Vec<u8>> {
        Ok(self
            .predict_scores(rows)?
            .into_iter()
            .map(|s| self.label(s))
            .collect())
    }
}

/// Model input for a record: its features, optionally followed by the group
/// indicator (1 = protected).
pub fn design_row(record: &Record, include_group: bool) -> Vec<f64> {
    let mut x = Vec::with_capacity(record.features.len() + 1);
    x.extend_from_slice(&record.features);
    if include_group {
        x.push(record.group.indicator());
    }
    x
}

fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

struct Standardized {
    n: usize,
    d: usize,
    /// Row-major n x d, constant columns zeroed.
    z: Vec<f64>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardized {
    fn new<X: AsRef<[f64]>>(x: &[X], d: usize) -> Standardized {
        let n = x.len();
        let mut mean = vec![0.0; d];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row.as_ref()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for row in x {
            for ((s, v), m) in var.iter_mut().zip(row.as_ref()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale: Vec<f64> = var
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 * m.abs().max(1.0) {
                    sd
                } else {
                    0.0
                }
            })
            .collect();
        let mut z = Vec::with_capacity(n * d);
        for row in x {
            for ((v, m), s) in row.as_ref().iter().zip(&mean).zip(&scale) {
                z.push(if *s > 0.0 { (v - m) / s } else { 0.0 });
            }
        }
        Standardized {
            n,
            d,
            z,
            mean,
            scale,
        }
    }

    fn margins(&self, w: &[f64], b: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.z[i * self.d..(i + 1) * self.d];
            *o = row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
        }
    }

    fn loss(&self, w: &[f64], b: f64, y: &[f64], l2: f64, scratch: &mut [f64]) -> f64 {
        self.margins(w, b, scratch);
        let data = scratch
            .iter()
            .zip(y)
            .map(|(z, t)| log1p_exp(*z) - t * z)
            .sum::<f64>()
            / self.n as f64;
        data + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Fits logistic regression of the unfavorable outcome (`y = 1`) by gradient
/// descent with backtracking line search on standardized features. The
/// returned weights act on the raw features.
pub fn train_logistic<X: AsRef<[f64]>>(
    x: &[X],
    y: &[u8],
    params: &LogisticParams,
) -> Result<TrainedModel> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "{} feature rows but {} labels",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("training needs at least 2 rows".into()));
    }
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(Error::InvalidArgument(
            "training data must contain both outcome classes".into(),
        ));
    }
    let d = x[0].as_ref().len();
    if let Some(bad) = x.iter().find(|r| r.as_ref().len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: bad.as_ref().len(),
        });
    }

    if x.iter().any(|r| r.as_ref().iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidArgument("non-finite feature value".into()));
    }
    let data = Standardized::new(x, d);
    if data.mean.iter().chain(&data.scale).any(|v| !v.is_finite()) {
        return Err(Error::Training("feature moments overflow".into()));
    }
    let target: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut w: Vec<f64> = data
        .scale
        .iter()
        .map(|&s| if s > 0.0 { rng.random_range(-1e-3..1e-3) } else { 0.0 })
        .collect();
    let mut b = 0.0;
    let mut scratch = vec![0.0; data.n];
    let mut grad_w = vec![0.0; d];
    let mut trial = vec![0.0; d];

    let initial_loss = data.loss(&w, b, &target, params.l2, &mut scratch);
    if !initial_loss.is_finite() {
        return Err(Error::Training(format!("initial loss {initial_loss}")));
    }
    let mut loss = initial_loss;
    let mut iterations = 0;
    for _ in 0..params.iterations {
        data.margins(&w, b, &mut scratch);
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for i in 0..data.n {
            let r = sigmoid(scratch[i]) - target[i];
            grad_b += r;
            let row = &data.z[i * d..(i + 1) * d];
            for (g, v) in grad_w.iter_mut().zip(row) {
                *g += r * v;
            }
        }
        grad_b /= data.n as f64;
        for (g, wv) in grad_w.iter_mut().zip(&w) {
            *g = *g / data.n as f64 + params.l2 * wv;
        }
        let max_grad = grad_w
            .iter()
            .fold(grad_b.abs(), |m, g| m.max(g.abs()));
        if max_grad < params.tolerance {
            break;
        }
        let norm2 = grad_b * grad_b + grad_w.iter().map(|g| g * g).sum::<f64>();

        let mut step = params.learning_rate;
        let accepted = loop {
            for ((t, wv), g) in trial.iter_mut().zip(&w).zip(&grad_w) {
                *t = wv - step * g;
            }
            let trial_b = b - step * grad_b;
            let trial_loss = data.loss(&trial, trial_b, &target, params.l2, &mut scratch);
            if !trial_loss.is_finite() {
                return Err(Error::Training(format!(
                    "loss became {trial_loss} at step {step}"
                )));
            }
            if trial_loss <= loss - 1e-4 * step * norm2 {
                w.copy_from_slice(&trial);
                b = trial_b;
                loss = trial_loss;
                break true;
            }
            step *= 0.5;
            if step < 1e-12 {
                break false;
            }
        };
        iterations += 1;
        if !accepted {
            break;
        }
    }

    // Map back to raw feature space.
    let mut weights = Vec::with_capacity(d + 1);
    let mut intercept = b;
    for ((&wj, &scale), &mean) in w.iter().zip(&data.scale).zip(&data.mean) {
        if scale > 0.0 {
            let coef = wj / scale;
            intercept -= coef * mean;
            weights.push(coef);
        } else {
            weights.push(0.0);
        }
    }
    weights.push(intercept);
    if weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training("non-finite weights".into()));
    }
    Ok(TrainedModel {
        weights,
        threshold: params.threshold,
        iterations,
        initial_loss,
        final_loss: loss,
    })
}

/// One held-out prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub row_id: i64,
    pub fold_id: usize,
    /// 0 = favorable, 1 = unfavorable.
    pub y_true: u8,
    pub y_pred: u8,
    /// Probability of the unfavorable outcome.
    pub score: f64,
    pub group: Group,
}

pub const PREDICTION_HEADER: [&str; 6] = ["row_id", "fold_id", "y_true", "y_pred", "score", "group"];

pub fn load_external_predictions(
    path: impl AsRef<Path>,
    labels: &GroupLabels,
) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_predictions(file, labels)
}

/// Parses the prediction wire format. `y_pred` is taken as given: external
/// models own their decision thresholds.
pub fn read_predictions<R: Read>(reader: R, labels: &GroupLabels) -> Result<Vec<PredictionRecord>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = csv.headers()?.clone();
    if header.iter().ne(PREDICTION_HEADER.iter().copied()) {
        return Err(Error::Prediction {
            line: 1,
            message: format!(
                "header must be `{}`",
                PREDICTION_HEADER.join(",")
            ),
        });
    }

    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for result in csv.records() {
        let record = result?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let fail = |message: String| Error::Prediction { line, message };
        let int = |i: usize| {
            record[i]
                .parse::<i64>()
                .map_err(|_| fail(format!("{} `{}` is not an integer", PREDICTION_HEADER[i], &record[i])))
        };
        let binary = |i: usize| match &record[i] {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            other => Err(fail(format!("{} `{other}` must be 0 or 1", PREDICTION_HEADER[i]))),
        };
        let row_id = int(0)?;
        let fold_id = usize::try_from(int(1)?).map_err(|_| fail("fold_id is negative".into()))?;
        let y_true = binary(2)?;
        let y_pred = binary(3)?;
        let score = record[4]
            .parse::<f64>()
            .map_err(|_| fail(format!("score `{}` is not a number", &record[4])))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(fail(format!("score {score} outside [0, 1]")));
        }
        let group = labels
            .parse(&record[5])
            .ok_or_else(|| fail(format!("unknown group label `{}`", &record[5])))?;
        if !seen.insert(row_id) {
            return Err(fail(format!("duplicate row_id {row_id}")));
        }
        out.push(PredictionRecord {
            row_id,
            fold_id,
            y_true,
            y_pred,
            score,
            group,
        });
    }
    Ok(out)
}

pub fn write_predictions<W: std::io::Write>(
    records: &[PredictionRecord],
    labels: &GroupLabels,
    writer: W,
) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(PREDICTION_HEADER)?;
    for r in records {
        csv.write_record([
            r.row_id.to_string(),
            r.fold_id.to_string(),
            r.y_true.to_string(),
            r.y_pred.to_string(),
            r.score.to_string(),
            labels.label(r.group).to_string(),
        ])?;
    }
    csv.flush().map_err(|e| Error::io("<prediction writer>", e))?;
    Ok(())
}

pub fn save_predictions(
    records: &[PredictionRecord],
    labels: &GroupLabels,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_predictions(records, labels, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn separable_one_dimensional_set() {
        // Negatives at -5..-1, positives at 1..5: any increasing sigmoid through 0 separates.
        let x: Vec<Vec<f64>> = [-5.0, -4.0, -3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 4.0, 5.0]
            .iter()
            .map(|&v| vec![v])
            .collect();
        let y = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let m = train_logistic(&x, &y, &LogisticParams::default()).unwrap();
        assert_eq!(m.predict_labels(&x).unwrap(), y);
        assert!(m.final_loss <= m.initial_loss);
    }

    #[test]
    fn constant_features_learn_nothing() {
        let x = vec![vec![3.0, -1.0]; 8];
        let y = [0, 1, 0, 1, 0, 1, 0, 1];
        let m = train_logistic(&x, &y, &LogisticParams::default()).unwrap();
        assert!(m.coefficients().iter().all(|w| w.abs() < 1e-3));
        assert!((m.predict_score(&x[0]).unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        let y: Vec<u8> = x.iter().map(|r| u8::from(r[0] + 0.5 * r[1] > 0.1)).collect();
        let p = LogisticParams {
            seed: 11,
            ..Default::default()
        };
        let a = train_logistic(&x, &y, &p).unwrap();
        let b = train_logistic(&x, &y, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(train_logistic(&x, &[1, 1], &LogisticParams::default()).is_err());
    }

    #[test]
    fn overflowing_features_report_training_error() {
        let x = vec![vec![1e308], vec![1e308], vec![-1e308]];
        let err = train_logistic(&x, &[1, 0, 1], &LogisticParams::default());
        assert!(matches!(err, Err(Error::Training(_))));
        let x = vec![vec![f64::NAN], vec![1.0]];
        assert!(train_logistic(&x, &[1, 0], &LogisticParams::default()).is_err());
    }

    #[test]
    fn zero_model_scores_half() {
        let m = TrainedModel::new(vec![0.0, 0.0, 0.0], 0.5).unwrap();
        assert_eq!(m.predict_score(&[4.0, -7.0]).unwrap(), 0.5);
    }

    #[test]
    fn saturated_intercept() {
        let m = TrainedModel::new(vec![0.0, 30.0], 0.5).unwrap();
        assert!(m.predict_score(&[1.0]).unwrap() > 1.0 - 1e-9);
    }

    #[test]
    fn scores_match_hand_arithmetic() {
        let m = TrainedModel::new(vec![0.5, -1.25, 0.1], 0.5).unwrap();
        let rows = [[1.0, 2.0], [-2.0, 0.4], [0.0, 0.0]];
        // w.x + b = -1.9, -1.4, 0.1
        let want = [-1.9f64, -1.4, 0.1].map(|z| 1.0 / (1.0 + (-z).exp()));
        for (s, w) in m.predict_scores(&rows).unwrap().iter().zip(want) {
            assert!((s - w).abs() < 1e-12);
        }
        assert!(matches!(
            m.predict_score(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn labels_threshold_scores() {
        // logit(0.2), logit(0.5), logit(0.9)
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let m = TrainedModel::new(vec![1.0, 0.0], 0.5).unwrap();
        let rows = [[logit(0.2)], [0.0], [logit(0.9)]];
        assert_eq!(m.predict_labels(&rows).unwrap(), [0, 1, 1]);
        assert!(TrainedModel::new(vec![0.0], 1.0).is_err());
        assert!(TrainedModel::new(vec![0.0], 0.0).is_err());
    }

    #[test]
    fn labels_agree_with_scores_on_random_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = TrainedModel::new(vec![0.8, -0.3, 1.1, 0.2], 0.37).unwrap();
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let labels = m.predict_labels(&rows).unwrap();
        let scores = m.predict_scores(&rows).unwrap();
        for (l, s) in labels.iter().zip(scores) {
            assert_eq!(*l, u8::from(s >= 0.37));
        }
    }

    fn labels() -> GroupLabels {
        GroupLabels::new("Black", "White")
    }

    #[test]
    fn reads_well_formed_predictions() {
        let text = "row_id,fold_id,y_true,y_pred,score,group\n\
                    1,0,0,0,0.1,Black\n\
                    2,0,1,1,0.8,White\n\
                    3,1,1,0,0.45,White\n\
                    4,1,0,1,0.9,Black\n\
                    5,2,0,1,0.2,Black\n";
        let recs = read_predictions(text.as_bytes(), &labels()).unwrap();
        assert_eq!(recs.len(), 5);
        // y_pred disagreeing with the score is accepted
        assert_eq!(recs[4].y_pred, 1);
        assert_eq!(recs[1].group, Group::Unprotected);
    }

    #[test]
    fn bad_score_names_line() {
        let text = "row_id,fold_id,y_true,y_pred,score,group\n\
                    1,0,0,0,0.1,Black\n\
                    2,0,1,1,1.2,White\n";
        match read_predictions(text.as_bytes(), &labels()).unwrap_err() {
            Error::Prediction { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_group_and_duplicates() {
        let unknown = "row_id,fold_id,y_true,y_pred,score,group\n1,0,0,0,0.1,Other\n";
        assert!(read_predictions(unknown.as_bytes(), &labels()).is_err());
        let dup = "row_id,fold_id,y_true,y_pred,score,group\n1,0,0,0,0.1,Black\n1,1,0,0,0.1,White\n";
        assert!(read_predictions(dup.as_bytes(), &labels()).is_err());
    }

    #[test]
    fn prediction_file_round_trip() {
        let recs = vec![
            PredictionRecord {
                row_id: 4,
                fold_id: 1,
                y_true: 1,
                y_pred: 0,
                score: 0.123456789,
                group: Group::Protected,
            },
            PredictionRecord {
                row_id: -2,
                fold_id: 0,
                y_true: 0,
                y_pred: 1,
                score: 1.0,
                group: Group::Unprotected,
            },
        ];
        let mut buf = Vec::new();
        write_predictions(&recs, &labels(), &mut buf).unwrap();
        assert_eq!(read_predictions(buf.as_slice(), &labels()).unwrap(), recs);
    }
}
