//! Zero-shot stitching: a linear softmax head trained on relative
//! representations of one space, evaluated on those of another.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::MeanStd;
use crate::optimizer::{AdamParams, AdamState};
use crate::space::RelativeRepresentation;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRelDataset {
    pub rel: RelativeRepresentation,
    pub labels: Vec<usize>,
}

impl LabeledRelDataset {
    pub fn new(rel: RelativeRepresentation, labels: Vec<usize>) -> Result<Self> {
        if rel.len() != labels.len() {
            return Err(Error::LengthMismatch(rel.len(), labels.len()));
        }
        Ok(Self { rel, labels })
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    /// `C x M`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub trained_on: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.05,
            rng_seed: 0,
        }
    }
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
}

/// Full-batch Adam on mean softmax cross-entropy.
pub fn train_classifier(
    data: &LabeledRelDataset,
    config: &TrainConfig,
    trained_on: &str,
) -> Result<LinearClassifier> {
    let classes = data.n_classes();
    if classes < 2 {
        return Err(Error::MissingClass(classes.max(1)));
    }
    let mut counts = vec![0usize; classes];
    for &l in &data.labels {
        counts[l] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::MissingClass(c));
    }
    if config.epochs == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::InvalidConfig("epochs and learning rate must be positive".into()));
    }

    let x = data.rel.values.view();
    let (n, m) = x.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut weights =
        Array2::from_shape_simple_fn((classes, m), || 0.01 * rng.sample::<f64, _>(StandardNormal));
    let mut bias = Array2::<f64>::zeros((1, classes));
    let mut w_state = AdamState::new(weights.dim());
    let mut b_state = AdamState::new(bias.dim());
    let hp = AdamParams::default();

    for _ in 0..config.epochs {
        let mut probs = x.dot(&weights.t()) + &bias;
        softmax_rows(&mut probs);
        let mut loss = 0.0;
        for (i, &l) in data.labels.iter().enumerate() {
            loss -= probs[[i, l]].max(1e-300).ln();
            probs[[i, l]] -= 1.0;
        }
        if !(loss / n as f64).is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        probs /= n as f64;
        let grad_w = probs.t().dot(&x);
        let grad_b = probs.sum_axis(Axis(0)).insert_axis(Axis(0));
        w_state.update(&mut weights, grad_w.view(), config.learning_rate, &hp)?;
        b_state.update(&mut bias, grad_b.view(), config.learning_rate, &hp)?;
    }
    Ok(LinearClassifier {
        weights,
        bias: bias.row(0).to_owned(),
        trained_on: trained_on.to_string(),
    })
}

impl LinearClassifier {
    pub fn logits(&self, rel: ArrayView2<f64>) -> Result<Array2<f64>> {
        if rel.ncols() != self.weights.ncols() {
            return Err(Error::DimMismatch {
                expected: self.weights.ncols(),
                got: rel.ncols(),
            });
        }
        Ok(rel.dot(&self.weights.t()) + &self.bias)
    }
}

/// Argmax of the logits; ties go to the lowest class index.
pub fn stitch_predict(
    classifier: &LinearClassifier,
    rel: &RelativeRepresentation,
) -> Result<Vec<usize>> {
    let logits = classifier.logits(rel.values.view())?;
    Ok(logits
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch(preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Per-class F1 averaged with weights proportional to class support.
pub fn weighted_fscore(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch(preds.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(Error::Empty("labels"));
    }
    let classes = preds.iter().chain(labels).max().unwrap() + 1;
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p == l {
            tp[l] += 1;
        } else {
            fp[p] += 1;
            fn_[l] += 1;
        }
    }
    let n = labels.len() as f64;
    let mut total = 0.0;
    for c in 0..classes {
        let support = tp[c] + fn_[c];
        if support == 0 {
            continue;
        }
        let precision = if tp[c] + fp[c] == 0 {
            0.0
        } else {
            tp[c] as f64 / (tp[c] + fp[c]) as f64
        };
        let recall = tp[c] as f64 / support as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        total += f1 * support as f64 / n;
    }
    Ok(total)
}

/// Mean absolute difference between ordinal labels.
pub fn mae(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch(preds.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(Error::Empty("labels"));
    }
    let s: f64 = preds
        .iter()
        .zip(labels)
        .map(|(&p, &l)| (p as f64 - l as f64).abs())
        .sum();
    Ok(s / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StitchScores {
    pub fscore: f64,
    pub mae: f64,
}

pub fn score(preds: &[usize], labels: &[usize]) -> Result<StitchScores> {
    Ok(StitchScores {
        fscore: weighted_fscore(preds, labels)?,
        mae: mae(preds, labels)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchReport {
    /// Space the classifier was trained on.
    pub decoder: String,
    /// Space the evaluated inputs come from.
    pub encoder: String,
    pub method: String,
    pub fscore: MeanStd,
    pub mae: MeanStd,
}

impl StitchReport {
    pub fn aggregate(decoder: &str, encoder: &str, method: &str, runs: &[StitchScores]) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::Empty("stitching runs"));
        }
        let f: Vec<f64> = runs.iter().map(|r| r.fscore).collect();
        let m: Vec<f64> = runs.iter().map(|r| r.mae).collect();
        Ok(Self {
            decoder: decoder.to_string(),
            encoder: encoder.to_string(),
            method: method.to_string(),
            fscore: MeanStd::of(&f),
            mae: MeanStd::of(&m),
        })
    }
}

#[derive(Serialize)]
struct StitchRow<'a> {
    decoder: &'a str,
    encoder: &'a str,
    method: &'a str,
    fscore_mean: f64,
    fscore_std: f64,
    mae_mean: f64,
    mae_std: f64,
}

pub fn write_stitch_csv<W: Write>(w: W, reports: &[StitchReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for r in reports {
        w.serialize(StitchRow {
            decoder: &r.decoder,
            encoder: &r.encoder,
            method: &r.method,
            fscore_mean: r.fscore.mean,
            fscore_std: r.fscore.std,
            mae_mean: r.mae.mean,
            mae_std: r.mae.std,
        })?;
    }
    w.flush()?;
    Ok(())
}
